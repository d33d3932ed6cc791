"""Stacked bidirectional LSTM with backpropagation through time.

Per direction the parameters are ``Wx`` (4H, F_in), ``Wh`` (4H, H) and ``b``
(4H,), gate blocks ordered input, forget, candidate, output. Parameter names
in the dict are ``l{layer}.{fwd|bwd}.{Wx|Wh|b}``.
"""

from __future__ import annotations

import numpy as np

from .layers import sigmoid

DIRECTIONS = ("fwd", "bwd")


def lstm_param_shapes(input_size: int, hidden: int, layers: int = 2) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for layer in range(layers):
        f_in = input_size if layer == 0 else 2 * hidden
        for d in DIRECTIONS:
            shapes[f"l{layer}.{d}.Wx"] = (4 * hidden, f_in)
            shapes[f"l{layer}.{d}.Wh"] = (4 * hidden, hidden)
            shapes[f"l{layer}.{d}.b"] = (4 * hidden,)
    return shapes


def lstm_forward(X, Wx, Wh, b, reverse: bool = False):
    """Run one direction over X (N, F_in); returns hidden states (N, H) in input order."""
    N = len(X)
    H = Wh.shape[1]
    xproj = X @ Wx.T + b
    hs = np.zeros((N, H))
    cs = np.zeros((N, H))
    gates = np.zeros((N, 4 * H))
    h = np.zeros(H)
    c = np.zeros(H)
    steps = range(N - 1, -1, -1) if reverse else range(N)
    for t in steps:
        a = xproj[t] + Wh @ h
        g = gates[t]
        g[:2 * H] = sigmoid(a[:2 * H])
        g[2 * H:3 * H] = np.tanh(a[2 * H:3 * H])
        g[3 * H:] = sigmoid(a[3 * H:])
        c = g[H:2 * H] * c + g[:H] * g[2 * H:3 * H]
        h = g[3 * H:] * np.tanh(c)
        cs[t] = c
        hs[t] = h
    return hs, (X, Wx, Wh, gates, cs, hs, reverse)


def lstm_backward(dhs, cache):
    """Gradients of one direction given dL/dh at every step (N, H)."""
    X, Wx, Wh, gates, cs, hs, reverse = cache
    N, H = hs.shape
    da = np.zeros((N, 4 * H))
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    steps = range(N) if reverse else range(N - 1, -1, -1)
    for t in steps:
        prev = t + 1 if reverse else t - 1
        c_prev = cs[prev] if 0 <= prev < N else np.zeros(H)
        g = gates[t]
        i, f, cand, o = g[:H], g[H:2 * H], g[2 * H:3 * H], g[3 * H:]
        tc = np.tanh(cs[t])
        dh = dhs[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        d = da[t]
        d[:H] = dc * cand * i * (1.0 - i)
        d[H:2 * H] = dc * c_prev * f * (1.0 - f)
        d[2 * H:3 * H] = dc * i * (1.0 - cand * cand)
        d[3 * H:] = dh * tc * o * (1.0 - o)
        dh_next = Wh.T @ d
        dc_next = dc * f
    h_prev = np.zeros((N, H))
    if reverse:
        h_prev[:-1] = hs[1:]
    else:
        h_prev[1:] = hs[:-1]
    dX = da @ Wx
    return dX, da.T @ X, da.T @ h_prev, da.sum(axis=0)


def bilstm_forward(V, params: dict, layers: int = 2):
    """Stacked Bi-LSTM over V (N, F_in).

    Each layer feeds the next the per-step concatenation ``[h_fwd, h_bwd]``.
    The output (1, 2H) joins the forward direction's state after the last step
    with the backward direction's state after the first step, both from the
    top layer.
    """
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2 or len(V) == 0:
        raise ValueError(f"Bi-LSTM needs a non-empty (N, F) input, got shape {V.shape}")
    x = V
    caches = []
    for layer in range(layers):
        outs = []
        layer_caches = []
        for d in DIRECTIONS:
            p = f"l{layer}.{d}."
            hs, cache = lstm_forward(x, params[p + "Wx"], params[p + "Wh"], params[p + "b"], reverse=(d == "bwd"))
            outs.append(hs)
            layer_caches.append(cache)
        caches.append(layer_caches)
        x = np.concatenate(outs, axis=1)
    H = x.shape[1] // 2
    out = np.concatenate((x[-1, :H], x[0, H:]))[None, :]
    return out, (caches, len(V), H)


def bilstm_backward(dout, cache):
    caches, N, H = cache
    dout = np.asarray(dout).ravel()
    dx = np.zeros((N, 2 * H))
    dx[-1, :H] = dout[:H]
    dx[0, H:] = dout[H:]
    grads = {}
    for layer in range(len(caches) - 1, -1, -1):
        dnext = None
        for k, d in enumerate(DIRECTIONS):
            dX, dWx, dWh, db = lstm_backward(dx[:, k * H:(k + 1) * H], caches[layer][k])
            p = f"l{layer}.{d}."
            grads[p + "Wx"], grads[p + "Wh"], grads[p + "b"] = dWx, dWh, db
            dnext = dX if dnext is None else dnext + dX
        dx = dnext
    return dx, grads
