"""Dual-view topology generator with an explicit reverse pass.

Two message-passing networks read the same node features over a fully
connected and a chain template. Each view decodes an edge-probability matrix
``sigmoid(Z @ Z.T)``; a query-conditioned gate mixes the two, and edges of the
canonical lower triangle are drawn as independent Bernoullis.

Gradients of anything that is a function of the final mask are computed by
:func:`backward`, which mirrors :func:`forward` step by step.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..topology import Topology, edge_pairs, template_adjacency
from .encoder import EncoderConfig

EPS = 1e-6
VIEWS = ("dense", "sparse")
ABLATIONS = ("full", "dense_only", "sparse_only", "no_fusion")
CHECKPOINT_FORMAT = "topolab-eib"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class Hyper:
    dim: int = 64
    hidden: int = 32
    layers: int = 3
    gate_hidden: int = 16

    def shapes(self) -> dict[str, tuple[int, ...]]:
        out = {}
        for view in VIEWS:
            fan_in = self.dim
            for layer in range(self.layers):
                out[f"{view}.W{layer}"] = (self.hidden, fan_in)
                out[f"{view}.b{layer}"] = (self.hidden,)
                fan_in = self.hidden
        out["gate.W1"] = (self.gate_hidden, self.dim)
        out["gate.b1"] = (self.gate_hidden,)
        out["gate.W2"] = (2, self.gate_hidden)
        out["gate.b2"] = (2,)
        return out


def _fan_in(name: str, shapes: dict) -> int:
    prefix, _, leaf = name.rpartition(".")
    weight = leaf.replace("b", "W", 1) if leaf.startswith("b") else leaf
    return shapes[f"{prefix}.{weight}"][1]


@dataclass
class EibModel:
    hyper: Hyper
    encoder: EncoderConfig
    params: dict[str, np.ndarray] = field(repr=False)

    @classmethod
    def init(cls, hyper: Hyper = Hyper(), seed: int = 0, salt: str = "topolab") -> "EibModel":
        """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` initialization."""
        if hyper.layers < 1:
            raise ValueError("need at least one message-passing layer")
        rng = np.random.default_rng(seed)
        shapes = hyper.shapes()
        params = {}
        for name, shape in shapes.items():
            bound = 1.0 / np.sqrt(_fan_in(name, shapes))
            params[name] = rng.uniform(-bound, bound, size=shape)
        return cls(hyper, EncoderConfig(hyper.dim, salt), params)

    def copy(self) -> "EibModel":
        return EibModel(self.hyper, self.encoder, {k: v.copy() for k, v in self.params.items()})

    def view_params(self, view: str) -> tuple[list[np.ndarray], list[np.ndarray]]:
        ws = [self.params[f"{view}.W{l}"] for l in range(self.hyper.layers)]
        bs = [self.params[f"{view}.b{l}"] for l in range(self.hyper.layers)]
        return ws, bs

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "hyper": asdict(self.hyper),
            "encoder": {"dim": self.encoder.dim, "salt": self.encoder.salt},
            "params": {
                name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
                for name, arr in sorted(self.params.items())
            },
        }

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")

    @classmethod
    def from_dict(cls, data: dict) -> "EibModel":
        if data.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"not a {CHECKPOINT_FORMAT} checkpoint")
        if data.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {data.get('version')}")
        hyper = Hyper(**data["hyper"])
        enc = EncoderConfig(int(data["encoder"]["dim"]), str(data["encoder"]["salt"]))
        if enc.dim != hyper.dim:
            raise CheckpointError(f"encoder dim {enc.dim} does not match model dim {hyper.dim}")
        expected = hyper.shapes()
        stored = data["params"]
        if set(stored) != set(expected):
            missing = sorted(set(expected) - set(stored))
            extra = sorted(set(stored) - set(expected))
            raise CheckpointError(f"parameter set mismatch: missing {missing}, unexpected {extra}")
        params = {}
        for name, shape in expected.items():
            entry = stored[name]
            if tuple(entry["shape"]) != shape:
                raise CheckpointError(f"{name}: stored shape {tuple(entry['shape'])}, expected {shape}")
            arr = np.asarray(entry["data"], dtype=float)
            if arr.size != int(np.prod(shape)):
                raise CheckpointError(f"{name}: {arr.size} values for shape {shape}")
            params[name] = arr.reshape(shape)
        return cls(hyper, enc, params)

    @classmethod
    def load(cls, path) -> "EibModel":
        path = Path(path)
        if not path.exists():
            raise CheckpointError(f"checkpoint not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{path}: invalid JSON ({exc.msg})") from None
        try:
            return cls.from_dict(data)
        except (KeyError, TypeError) as exc:
            raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from None


# --- forward pieces -------------------------------------------------------


def propagation_matrix(view_adj: np.ndarray) -> np.ndarray:
    """Row-stochastic mean over each node's neighbors and itself."""
    a = np.asarray(view_adj, dtype=float) + np.eye(len(view_adj))
    return a / a.sum(axis=1, keepdims=True)


def _relu(x):
    return np.maximum(x, 0.0)


def gnn_forward(view_adj, x, ws, bs, cache: list | None = None) -> np.ndarray:
    """``L`` rounds of mean aggregation + affine map; ReLU on all but the last."""
    prop = propagation_matrix(view_adj)
    h = np.asarray(x, dtype=float)
    if h.shape[1] != ws[0].shape[1]:
        raise ValueError(f"feature width {h.shape[1]} does not match first layer input {ws[0].shape[1]}")
    last = len(ws) - 1
    for layer, (w, b) in enumerate(zip(ws, bs)):
        agg = prop @ h
        pre = agg @ w.T + b
        out = pre if layer == last else _relu(pre)
        if cache is not None:
            cache.append((agg, pre))
        h = out
    return h


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def decode_mask(z: np.ndarray) -> np.ndarray:
    return np.clip(_sigmoid(z @ z.T), EPS, 1.0 - EPS)


def gate(q: np.ndarray, params: dict) -> np.ndarray:
    """``softmax(W2 relu(W1 q + b1) + b2)`` as ``(alpha_dense, alpha_sparse)``."""
    hid = _relu(params["gate.W1"] @ q + params["gate.b1"])
    logits = params["gate.W2"] @ hid + params["gate.b2"]
    e = np.exp(logits - logits.max())
    return e / e.sum()


def fuse(md: np.ndarray, ms: np.ndarray, alpha) -> np.ndarray:
    if md.shape != ms.shape:
        raise ValueError(f"mask shapes differ: {md.shape} vs {ms.shape}")
    return np.clip(alpha[0] * md + alpha[1] * ms, EPS, 1.0 - EPS)


@dataclass
class Forward:
    m_final: np.ndarray
    alpha: np.ndarray
    m_dense: np.ndarray | None = None
    m_sparse: np.ndarray | None = None
    z: dict = field(default_factory=dict)
    caches: dict = field(default_factory=dict)
    query: np.ndarray | None = None


def forward(model: EibModel, x: np.ndarray, q: np.ndarray, ablation: str = "full") -> Forward:
    if ablation not in ABLATIONS:
        raise ValueError(f"unknown ablation {ablation!r}; expected one of {ABLATIONS}")
    n = x.shape[0]
    views = {"dense_only": ("dense",), "sparse_only": ("sparse",)}.get(ablation, VIEWS)
    templates = {"dense": "full", "sparse": "chain"}
    fwd = Forward(m_final=None, alpha=None, query=q)
    masks = {}
    for view in views:
        cache: list = []
        ws, bs = model.view_params(view)
        z = gnn_forward(template_adjacency(templates[view], n), x, ws, bs, cache)
        fwd.z[view], fwd.caches[view] = z, cache
        masks[view] = decode_mask(z)
    fwd.m_dense, fwd.m_sparse = masks.get("dense"), masks.get("sparse")
    if ablation == "dense_only":
        fwd.alpha, fwd.m_final = np.array([1.0, 0.0]), fwd.m_dense
    elif ablation == "sparse_only":
        fwd.alpha, fwd.m_final = np.array([0.0, 1.0]), fwd.m_sparse
    else:
        fwd.alpha = np.array([0.5, 0.5]) if ablation == "no_fusion" else gate(q, model.params)
        fwd.m_final = fuse(fwd.m_dense, fwd.m_sparse, fwd.alpha)
    fwd.caches["ablation"] = ablation
    return fwd


# --- sampling and likelihood ----------------------------------------------


def sample_topology(m: np.ndarray, rng: np.random.Generator) -> Topology:
    """One Bernoulli draw per ``j < i`` pair, in row-major pair order."""
    n = m.shape[0]
    rows, cols = edge_pairs(n)
    adj = np.zeros((n, n), dtype=bool)
    adj[rows, cols] = rng.random(rows.shape[0]) < m[rows, cols]
    return Topology(n, adj)


def sample_adjacency(m: np.ndarray, rng: np.random.Generator, count: int) -> np.ndarray:
    """``count`` independent draws as a ``(count, N, N)`` boolean array."""
    n = m.shape[0]
    rows, cols = edge_pairs(n)
    adj = np.zeros((count, n, n), dtype=bool)
    adj[:, rows, cols] = rng.random((count, rows.shape[0])) < m[rows, cols]
    return adj


def log_prob(m: np.ndarray, t) -> float:
    adj = t.adj if isinstance(t, Topology) else np.asarray(t, dtype=bool)
    rows, cols = edge_pairs(m.shape[0])
    e = adj[rows, cols]
    p = m[rows, cols]
    return float(np.sum(np.where(e, np.log(p), np.log1p(-p))))


def log_prob_grad(m: np.ndarray, adj: np.ndarray) -> np.ndarray:
    """d log_prob / d m, nonzero only on the lower triangle."""
    n = m.shape[0]
    rows, cols = edge_pairs(n)
    out = np.zeros_like(m)
    e = np.asarray(adj, dtype=bool)[rows, cols]
    p = m[rows, cols]
    out[rows, cols] = np.where(e, 1.0 / p, -1.0 / (1.0 - p))
    return out


# --- reverse pass -----------------------------------------------------------


def _clip_mask(raw: np.ndarray) -> np.ndarray:
    return (raw > EPS) & (raw < 1.0 - EPS)


def _decode_backward(z: np.ndarray, d_mask: np.ndarray) -> np.ndarray:
    raw = _sigmoid(z @ z.T)
    d_logits = d_mask * raw * (1.0 - raw) * _clip_mask(raw)
    return (d_logits + d_logits.T) @ z


def _gnn_backward(view_adj, ws, cache, d_out, grads: dict, view: str):
    prop = propagation_matrix(view_adj)
    last = len(ws) - 1
    d_h = d_out
    for layer in range(last, -1, -1):
        agg, pre = cache[layer]
        d_pre = d_h if layer == last else d_h * (pre > 0)
        grads[f"{view}.W{layer}"] = d_pre.T @ agg
        grads[f"{view}.b{layer}"] = d_pre.sum(axis=0)
        d_h = prop.T @ (d_pre @ ws[layer])
    return d_h


def backward(model: EibModel, fwd: Forward, d_final: np.ndarray) -> dict[str, np.ndarray]:
    """Gradient of ``sum(d_final * m_final)`` with respect to every parameter.

    Parameters unused by the ablation get zero gradients.
    """
    grads = {name: np.zeros_like(arr) for name, arr in model.params.items()}
    ablation = fwd.caches["ablation"]
    n = fwd.m_final.shape[0]
    d_view = {}
    if ablation == "dense_only":
        d_view["dense"] = d_final
    elif ablation == "sparse_only":
        d_view["sparse"] = d_final
    else:
        raw = fwd.alpha[0] * fwd.m_dense + fwd.alpha[1] * fwd.m_sparse
        d_raw = d_final * _clip_mask(raw)
        d_view["dense"] = fwd.alpha[0] * d_raw
        d_view["sparse"] = fwd.alpha[1] * d_raw
        if ablation == "full":
            d_alpha = np.array([np.sum(d_raw * fwd.m_dense), np.sum(d_raw * fwd.m_sparse)])
            _gate_backward(model.params, fwd.query, fwd.alpha, d_alpha, grads)
    templates = {"dense": "full", "sparse": "chain"}
    for view, d_mask in d_view.items():
        d_z = _decode_backward(fwd.z[view], d_mask)
        ws, _ = model.view_params(view)
        _gnn_backward(template_adjacency(templates[view], n), ws, fwd.caches[view], d_z, grads, view)
    return grads


def _gate_backward(params, q, alpha, d_alpha, grads):
    pre = params["gate.W1"] @ q + params["gate.b1"]
    hid = _relu(pre)
    d_logits = alpha * (d_alpha - alpha @ d_alpha)
    grads["gate.W2"] = np.outer(d_logits, hid)
    grads["gate.b2"] = d_logits
    d_pre = (params["gate.W2"].T @ d_logits) * (pre > 0)
    grads["gate.W1"] = np.outer(d_pre, q)
    grads["gate.b1"] = d_pre
