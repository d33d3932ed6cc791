"""DDGNN: per-frame GraphConv spatial extractor, Bi-LSTM temporal head, linear classifier.

All frames of a sequence are pushed through the spatial extractor together:
their graphs are packed into one block-diagonal adjacency and a sparse
pooling matrix maps node rows back to one row per frame.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import nn
from .graph import FrameGraph, GraphSequence, GraphSpec

CHECKPOINT_FORMAT = "stargraph-ddgnn"
CHECKPOINT_VERSION = 1


@dataclass
class DdgnnConfig:
    class_count: int
    seq_len: int = 50
    fc_dim: int = 64
    gcn_dims: tuple[int, int] = (32, 16)
    lstm_hidden: int = 64
    lstm_layers: int = 2
    dropout_rate: float = 0.3
    final_activation: bool = True
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    validate_every: int = 5
    patience: int = 10
    max_epochs: int = 200

    def __post_init__(self):
        self.gcn_dims = tuple(int(d) for d in self.gcn_dims)
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")
        if self.seq_len < 1:
            raise ValueError("seq_len must be >= 1")
        if len(self.gcn_dims) != 2:
            raise ValueError("gcn_dims needs exactly two widths")
        if min(self.fc_dim, self.lstm_hidden, self.lstm_layers, *self.gcn_dims) < 1:
            raise ValueError("layer sizes must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.validate_every < 1 or self.patience < 0 or self.max_epochs < 1:
            raise ValueError("invalid early-stopping settings")

    @property
    def lstm_output(self) -> int:
        return 2 * self.lstm_hidden

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gcn_dims"] = list(self.gcn_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DdgnnConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def param_shapes(cfg: DdgnnConfig) -> dict[str, tuple[int, ...]]:
    g1, g2 = cfg.gcn_dims
    shapes = {
        "proj.W": (cfg.fc_dim, 3), "proj.b": (cfg.fc_dim,),
        "gc1.W1": (g1, cfg.fc_dim), "gc1.W2": (g1, cfg.fc_dim),
        "gc2.W1": (g2, g1), "gc2.W2": (g2, g1),
    }
    for name, shape in nn.lstm_param_shapes(g2, cfg.lstm_hidden, cfg.lstm_layers).items():
        shapes["lstm." + name] = shape
    shapes["cls.W"] = (cfg.class_count, cfg.lstm_output)
    shapes["cls.b"] = (cfg.class_count,)
    return shapes


def init_params(cfg: DdgnnConfig, seed: int | None = None) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases, LSTM forget-gate bias 1."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if len(shape) == 2:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-limit, limit, size=shape)
        else:
            params[name] = np.zeros(shape)
            if name.startswith("lstm."):
                h = cfg.lstm_hidden
                params[name][h:2 * h] = 1.0
    return params


@dataclass
class DdgnnModel:
    config: DdgnnConfig
    params: dict[str, np.ndarray] = field(default=None)

    def __post_init__(self):
        if self.params is None:
            self.params = init_params(self.config)
        expected = param_shapes(self.config)
        if set(expected) != set(self.params):
            raise ValueError("parameter names do not match the configuration")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {self.params[name].shape}")

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def lstm_params(self) -> dict[str, np.ndarray]:
        return {k[5:]: v for k, v in self.params.items() if k.startswith("lstm.")}


@dataclass
class PackedGraphs:
    """Several frame graphs stacked into one disconnected graph."""

    nodes: np.ndarray
    adjacency: sp.csr_matrix
    pool: sp.csr_matrix
    counts: np.ndarray


def pack_graphs(graphs: Sequence[FrameGraph]) -> PackedGraphs:
    counts = np.array([g.num_nodes for g in graphs], dtype=np.int64)
    offsets = np.concatenate(([0], np.cumsum(counts)))
    total = int(offsets[-1])
    nodes = np.concatenate([g.nodes for g in graphs]) if total else np.zeros((0, 3))
    edge_offsets = np.concatenate(([0], np.cumsum([g.num_edges for g in graphs])))
    indptr = np.concatenate([[0]] + [g.indptr[1:] + e for g, e in zip(graphs, edge_offsets)])
    indices = np.concatenate([np.zeros(0, dtype=np.int64)] + [g.indices + o for g, o in zip(graphs, offsets)])
    adjacency = sp.csr_matrix((np.ones(len(indices)), indices, indptr), shape=(total, total))
    return PackedGraphs(nodes, adjacency, nn.segment_pool_matrix(counts), counts)


def _spatial(params, cfg: DdgnnConfig, packed: PackedGraphs, training: bool, rng):
    h, c_proj = nn.linear_forward(packed.nodes, params["proj.W"], params["proj.b"])
    h, c_g1 = nn.graphconv_forward(h, packed.adjacency, params["gc1.W1"], params["gc1.W2"], True)
    h, c_g2 = nn.graphconv_forward(h, packed.adjacency, params["gc2.W1"], params["gc2.W2"], cfg.final_activation)
    h, mask = nn.dropout_forward(h, cfg.dropout_rate, training, rng)
    V = np.asarray(packed.pool @ h)
    return V, (c_proj, c_g1, c_g2, mask, packed.pool)


def _spatial_backward(dV, cache, grads):
    c_proj, c_g1, c_g2, mask, pool = cache
    dh = np.asarray(pool.T @ dV)
    dh = nn.dropout_backward(dh, mask)
    dh, grads["gc2.W1"], grads["gc2.W2"] = nn.graphconv_backward(dh, c_g2)
    dh, grads["gc1.W1"], grads["gc1.W2"] = nn.graphconv_backward(dh, c_g1)
    _, grads["proj.W"], grads["proj.b"] = nn.linear_backward(dh, c_proj)


def spatial_forward(model: DdgnnModel, g: FrameGraph, training: bool = False, rng=None) -> np.ndarray:
    """Frame representation (1, gcn_dims[1]); a zero-node graph maps to zeros."""
    V, _ = _spatial(model.params, model.config, pack_graphs([g]), training, rng)
    return V


def _as_packed(model: DdgnnModel, gs) -> PackedGraphs:
    if isinstance(gs, PackedGraphs):
        packed = gs
    else:
        graphs = gs.graphs if isinstance(gs, GraphSequence) else gs
        packed = pack_graphs(graphs)
    if len(packed.counts) != model.config.seq_len:
        raise ValueError(f"sequence has {len(packed.counts)} frames, model expects {model.config.seq_len}")
    return packed


def forward(model: DdgnnModel, gs, training: bool = False, rng=None, return_cache: bool = False):
    """Raw class logits (m,) for one graph sequence."""
    cfg = model.config
    params = model.params
    packed = _as_packed(model, gs)
    V, c_sp = _spatial(params, cfg, packed, training, rng)
    t, c_lstm = nn.bilstm_forward(V, model.lstm_params(), cfg.lstm_layers)
    logits, c_cls = nn.linear_forward(t, params["cls.W"], params["cls.b"])
    logits = logits.ravel()
    if return_cache:
        return logits, (c_sp, c_lstm, c_cls)
    return logits


def backward(dlogits, cache) -> dict[str, np.ndarray]:
    c_sp, c_lstm, c_cls = cache
    grads = {}
    dt, grads["cls.W"], grads["cls.b"] = nn.linear_backward(np.asarray(dlogits).reshape(1, -1), c_cls)
    dV, lstm_grads = nn.bilstm_backward(dt, c_lstm)
    for k, v in lstm_grads.items():
        grads["lstm." + k] = v
    _spatial_backward(dV, c_sp, grads)
    return grads


def loss_and_grads(model: DdgnnModel, gs, label: int, training: bool = False, rng=None):
    logits, cache = forward(model, gs, training, rng, return_cache=True)
    loss, dlogits = nn.softmax_cross_entropy(logits, label)
    return loss, backward(dlogits, cache)


def predict(model: DdgnnModel, gs) -> tuple[int, np.ndarray]:
    """Most probable class (lowest index on ties) and the softmax probabilities."""
    probs = nn.softmax(forward(model, gs, training=False))
    return int(np.argmax(probs)), probs


def save_checkpoint(model: DdgnnModel, path, graph_spec: GraphSpec | None = None,
                    adam: nn.AdamState | None = None, extra: dict | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "seed": model.config.seed,
        "graph": graph_spec.to_dict() if graph_spec is not None else None,
        "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in model.params.items()},
    }
    if adam is not None:
        doc["adam"] = {
            "t": adam.t,
            "m": {k: v.ravel().tolist() for k, v in adam.m.items()},
            "v": {k: v.ravel().tolist() for k, v in adam.v.items()},
        }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> tuple[DdgnnModel, dict]:
    """Returns the model and the raw document (graph spec, adam state, extras)."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    cfg = DdgnnConfig.from_dict(doc["config"])
    params = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in doc["params"].items()}
    return DdgnnModel(cfg, params), doc


def adam_from_checkpoint(doc: dict, model: DdgnnModel) -> nn.AdamState | None:
    a = doc.get("adam")
    if a is None:
        return None
    shapes = {k: v.shape for k, v in model.params.items()}
    return nn.AdamState(
        m={k: np.array(v).reshape(shapes[k]) for k, v in a["m"].items()},
        v={k: np.array(v).reshape(shapes[k]) for k, v in a["v"].items()},
        t=int(a["t"]),
    )
