"""Feed-forward building blocks with hand-written backward passes.

Every ``*_forward`` returns ``(out, cache)``; the matching ``*_backward``
takes the upstream gradient and that cache. Tensors are 2-D float64 arrays;
weight matrices are stored ``(F_out, F_in)`` and applied as ``x @ W.T``.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.special import expit, logsumexp


def sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def _as_2d(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected a 2-D tensor, got shape {x.shape}")
    return x


def linear_forward(x, W, b):
    x = _as_2d(x)
    if W.shape[1] != x.shape[1] or b.shape != (W.shape[0],):
        raise ValueError(f"shape mismatch: x {x.shape}, W {W.shape}, b {b.shape}")
    return x @ W.T + b, (x, W)


def linear_backward(dout, cache):
    x, W = cache
    return dout @ W, dout.T @ x, dout.sum(axis=0)


def _adjacency(graph) -> sp.csr_matrix:
    if sp.issparse(graph):
        return sp.csr_matrix(graph)
    if hasattr(graph, "sparse_adjacency"):
        return graph.sparse_adjacency()
    return sp.csr_matrix(np.asarray(graph, dtype=np.float64))


def graphconv_forward(H, graph, W1, W2, activate: bool = True):
    """One GraphConv layer with additive neighbour aggregation.

    Row ``i`` of the output is ``s((W1 + W2) H_i + W2 sum_{j in N(i)} H_j)`` where
    ``s`` is the logistic sigmoid when ``activate`` is set and the identity
    otherwise. ``graph`` may be a FrameGraph, a sparse matrix or a dense
    adjacency with ``A[i, j] = 1`` iff ``j`` feeds ``i``.
    """
    H = _as_2d(H)
    A = _adjacency(graph)
    if A.shape != (len(H), len(H)):
        raise ValueError(f"graph has {A.shape[0]} nodes but H has {len(H)} rows")
    if W1.shape != W2.shape or W1.shape[1] != H.shape[1]:
        raise ValueError(f"shape mismatch: H {H.shape}, W1 {W1.shape}, W2 {W2.shape}")
    agg = A @ H
    z = H @ (W1 + W2).T + agg @ W2.T
    out = sigmoid(z) if activate else z
    return out, (H, A, agg, W1, W2, out, activate)


def graphconv_backward(dout, cache):
    if cache is None:
        raise ValueError("graphconv_backward needs the forward cache")
    H, A, agg, W1, W2, out, activate = cache
    dz = dout * out * (1.0 - out) if activate else dout
    dself = dz.T @ H
    dW1 = dself
    dW2 = dself + dz.T @ agg
    dH = dz @ (W1 + W2) + A.T @ (dz @ W2)
    return dH, dW1, dW2


def global_mean_pool(H) -> np.ndarray:
    """Column-wise mean as a (1, F) row; an empty input pools to zeros."""
    H = _as_2d(H)
    if len(H) == 0:
        return np.zeros((1, H.shape[1]))
    return H.mean(axis=0, keepdims=True)


def segment_pool_matrix(counts) -> sp.csr_matrix:
    """Sparse (len(counts), sum(counts)) matrix averaging consecutive row blocks.

    Blocks of size zero give an all-zero row, matching ``global_mean_pool``.
    """
    counts = np.asarray(counts, dtype=np.int64)
    total = int(counts.sum())
    rows = np.repeat(np.arange(len(counts)), counts)
    vals = np.repeat(1.0 / np.maximum(counts, 1), counts)
    return sp.csr_matrix((vals, (rows, np.arange(total))), shape=(len(counts), total))


def dropout_forward(H, rate: float, training: bool, rng: np.random.Generator | None = None):
    """Inverted dropout; the identity at inference time or when ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    if not training or rate == 0.0:
        return H, None
    if rng is None:
        raise ValueError("training-mode dropout needs a random generator")
    mask = (rng.random(H.shape) >= rate) / (1.0 - rate)
    return H * mask, mask


def dropout_backward(dout, mask):
    return dout if mask is None else dout * mask


def softmax(logits) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    return np.exp(logits - logsumexp(logits))


def softmax_cross_entropy(logits, label: int):
    """Negative log-likelihood of ``label`` and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64).ravel()
    if not 0 <= label < len(logits):
        raise ValueError(f"label {label} out of range for {len(logits)} classes")
    lse = logsumexp(logits)
    probs = np.exp(logits - lse)
    grad = probs.copy()
    grad[label] -= 1.0
    return float(lse - logits[label]), grad
