"""GNN layers lowered onto the simulated accelerator.

Each layer splits into a Transformation (dense GEMM on the Strassen clusters)
and an Aggregation (weighted SpMM or pattern-only reduction on chained tiles).
GCN, GraphSAGE and GAT transform first; GIN aggregates first.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import reference as ref
from .config import EngineConfig
from .engine import Accelerator
from .matrix import ShapeError, SparseTile, as_dense
from .mmio import read_dense_csv
from .pe import Reduction
from .report import SimReport

MODELS = ("gcn", "sage", "gin", "gat")
ACTIVATIONS = ("none", "relu", "leaky_relu")


class LayerError(RuntimeError):
    """A layer failed; the message names the layer index and phase."""


class VerificationError(LayerError):
    """Simulated output deviates from the dense reference beyond tolerance."""


@dataclass
class Graph:
    n_nodes: int
    adjacency: SparseTile
    features: np.ndarray

    def __post_init__(self):
        a = self.adjacency
        if a.shape != (self.n_nodes, self.n_nodes):
            raise ShapeError(f"adjacency {a.shape} does not match {self.n_nodes} nodes")
        self.features = as_dense(self.features, "features")
        if self.features.shape[0] != self.n_nodes:
            raise ShapeError(f"features have {self.features.shape[0]} rows for {self.n_nodes} nodes")

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.row_counts()

    @property
    def n_edges(self) -> int:
        return self.adjacency.nnz

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def dense_adjacency(self) -> np.ndarray:
        return self.adjacency.to_dense()

    def permute(self, perm) -> "Graph":
        """Relabel so that new node ``i`` is old node ``perm[i]``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        a = self.adjacency
        adj = SparseTile.from_entries(self.n_nodes, self.n_nodes,
                                      zip(inv[a.rows], inv[a.cols], a.vals))
        return Graph(self.n_nodes, adj, self.features[perm])

    @classmethod
    def from_edges(cls, n: int, edges, features, symmetric: bool = True) -> "Graph":
        pairs = set()
        for s, d in edges:
            pairs.add((int(s), int(d)))
            if symmetric:
                pairs.add((int(d), int(s)))
        adj = SparseTile.from_entries(n, n, ((s, d, 1.0) for s, d in pairs))
        return cls(n, adj, features)


@dataclass
class LayerSpec:
    model: str
    weight: np.ndarray
    bias: np.ndarray | None = None
    activation: str = "none"
    slope: float = 0.2
    eps: float = 0.0
    a1: np.ndarray | None = None
    a2: np.ndarray | None = None
    order: str | None = None
    sage_path: str = "direct"
    mlp: tuple = ()

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not 0 < self.slope < 1:
            raise ValueError("LeakyReLU slope must lie in (0, 1)")
        if not np.isfinite(self.eps):
            raise ValueError("eps must be finite")
        self.weight = as_dense(self.weight, "weight")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.float32).reshape(-1)
            if len(self.bias) != self.out_dim:
                raise ShapeError(f"bias length {len(self.bias)} != output dim {self.out_dim}")
        if self.model == "gat":
            if self.a1 is None or self.a2 is None:
                raise ValueError("GAT layers need attention vectors a1 and a2")
            self.a1 = np.asarray(self.a1, dtype=np.float32).reshape(-1)
            self.a2 = np.asarray(self.a2, dtype=np.float32).reshape(-1)
            if len(self.a1) != self.out_dim or len(self.a2) != self.out_dim:
                raise ShapeError("attention vectors must match the output dimension")
        if self.order is None:
            self.order = "aggregate-first" if self.model == "gin" else "transform-first"
        if self.sage_path not in ("direct", "weighted"):
            raise ValueError("sage_path must be 'direct' or 'weighted'")
        self.mlp = tuple((as_dense(w, "mlp weight"), None if b is None else np.asarray(b, np.float32))
                         for w, b in self.mlp)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return (self.mlp[-1][0] if self.mlp else self.weight).shape[1]


def with_self_loops(a: SparseTile) -> SparseTile:
    """Pattern of ``A + I`` with every stored value 1."""
    n = a.n_rows
    cells = set(zip(a.rows.tolist(), a.cols.tolist())) | {(i, i) for i in range(n)}
    return SparseTile.from_entries(n, a.n_cols, ((r, c, 1.0) for r, c in cells))


def pattern(a: SparseTile) -> SparseTile:
    return a.with_values(np.ones(a.nnz))


def gcn_normalize(g: Graph) -> SparseTile:
    """``D^-1/2 (A + I) D^-1/2`` with degrees taken from ``A + I``."""
    ah = with_self_loops(g.adjacency)
    d = ah.row_counts().astype(np.float64)
    return ah.with_values(1.0 / np.sqrt(d[ah.rows] * d[ah.cols]))


def _activate(x: np.ndarray, spec: LayerSpec) -> np.ndarray:
    return ref.activation(x, spec.activation, spec.slope).astype(np.float32)


def _finish(acc: Accelerator, x: np.ndarray, spec: LayerSpec) -> np.ndarray:
    # bias and activation ride on the drain of the last pass
    if spec.bias is not None:
        x = x + spec.bias
    return _activate(x, spec)


def _acc(acc: Accelerator | None) -> Accelerator:
    return acc if acc is not None else Accelerator()


def _check_in(h: np.ndarray, spec: LayerSpec) -> np.ndarray:
    h = as_dense(h, "H")
    if h.shape[1] != spec.in_dim:
        raise ShapeError(f"features have {h.shape[1]} columns, layer expects {spec.in_dim}")
    return h


def _transform_then(acc: Accelerator, g: Graph, spec: LayerSpec, h: np.ndarray, s: SparseTile):
    cfg = acc.cfg
    fits = (g.n_nodes <= cfg.tile_rows and spec.out_dim <= cfg.tile_cols)
    acc.hbm_dense_in("transformation", h)
    acc.hbm_dense_in("transformation", spec.weight)
    acc.hbm_sparse_in("aggregation", s)
    if cfg.feedback and fits:
        xw, out = acc.gemm_then_spmm_resident(h, spec.weight, s)
        return xw, out
    xw = acc.gemm(h, spec.weight)
    return xw, acc.spmm(s, xw)


def gcn_layer(g: Graph, spec: LayerSpec, h, acc: Accelerator | None = None) -> np.ndarray:
    acc = _acc(acc)
    h = _check_in(h, spec)
    norm = gcn_normalize(g)
    if spec.order == "transform-first":
        _, out = _transform_then(acc, g, spec, h, norm)
    else:
        acc.hbm_sparse_in("aggregation", norm)
        acc.hbm_dense_in("aggregation", h)
        acc.hbm_dense_in("transformation", spec.weight)
        out = acc.gemm(acc.spmm(norm, h), spec.weight)
    out = _finish(acc, out, spec)
    acc.hbm_dense_out("aggregation", out)
    return out


def sage_mean_weights(g: Graph) -> SparseTile:
    """``A + I`` with row ``i`` valued ``1 / (deg(i) + 1)``."""
    ah = with_self_loops(g.adjacency)
    d = ah.row_counts().astype(np.float64)
    return ah.with_values(1.0 / d[ah.rows])


def _sage_mean(acc: Accelerator, g: Graph, x: np.ndarray, path: str) -> np.ndarray:
    if path == "direct":
        p = with_self_loops(g.adjacency)
        acc.hbm_sparse_in("aggregation", p)
        return acc.aggregate(p, x, Reduction.MEAN)
    w = sage_mean_weights(g)
    acc.hbm_sparse_in("aggregation", w)
    return acc.spmm(w, x)


def l2_normalize_rows(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x.astype(np.float64), axis=1, keepdims=True)
    out = np.divide(x, n, out=np.zeros(x.shape, dtype=np.float64), where=n > 0)
    return out.astype(np.float32)


def sage_layer(g: Graph, spec: LayerSpec, h, acc: Accelerator | None = None) -> np.ndarray:
    acc = _acc(acc)
    h = _check_in(h, spec)
    acc.hbm_dense_in("transformation", spec.weight)
    if spec.order == "transform-first":
        acc.hbm_dense_in("transformation", h)
        out = _sage_mean(acc, g, acc.gemm(h, spec.weight), spec.sage_path)
    else:
        acc.hbm_dense_in("aggregation", h)
        out = acc.gemm(_sage_mean(acc, g, h, spec.sage_path), spec.weight)
    out = l2_normalize_rows(_finish(acc, out, spec))
    acc.postprocess(out.size)
    acc.hbm_dense_out("aggregation", out)
    return out


def gin_layer(g: Graph, spec: LayerSpec, h, acc: Accelerator | None = None) -> np.ndarray:
    acc = _acc(acc)
    h = _check_in(h, spec)
    p = pattern(g.adjacency)
    acc.hbm_sparse_in("aggregation", p)
    acc.hbm_dense_in("aggregation", h)
    acc.hbm_dense_in("transformation", spec.weight)
    if spec.order == "aggregate-first":
        neigh = acc.aggregate(p, h, Reduction.ADD) if p.nnz else np.zeros_like(h)
        agg = (np.float32(1 + spec.eps) * h + neigh).astype(np.float32)
        acc.host_adds("aggregation", 2 * h.size)
        out = _finish(acc, acc.gemm(agg, spec.weight), spec)
    else:
        xw = acc.gemm(h, spec.weight)
        neigh = acc.aggregate(p, xw, Reduction.ADD) if p.nnz else np.zeros_like(xw)
        out = _finish(acc, (np.float32(1 + spec.eps) * xw + neigh).astype(np.float32), spec)
        acc.host_adds("aggregation", 2 * xw.size)
    for w2, b2 in spec.mlp:
        acc.hbm_dense_in("transformation", w2)
        out = acc.gemm(out, w2)
        if b2 is not None:
            out = out + b2
        out = _activate(out, spec)
    acc.hbm_dense_out("transformation", out)
    return out


def gat_attention(g: Graph, spec: LayerSpec, z, acc: Accelerator | None = None) -> SparseTile:
    """Attention tile on the pattern of ``A + I``; rows sum to one."""
    acc = _acc(acc)
    z = as_dense(z, "Z")
    if z.shape[1] != len(spec.a1):
        raise ShapeError(f"Z has {z.shape[1]} columns, attention vectors have {len(spec.a1)}")
    h12 = acc.gemm(z, np.stack([spec.a1, spec.a2], axis=1)).astype(np.float64)
    p = with_self_loops(g.adjacency)
    logits = h12[p.rows, 0] + h12[p.cols, 1]
    logits = np.where(logits > 0, logits, spec.slope * logits)
    ptr = p.indptr()
    vals = np.empty_like(logits)
    for i in range(p.n_rows):
        seg = logits[ptr[i]:ptr[i + 1]]
        e = np.exp(seg - seg.max())
        vals[ptr[i]:ptr[i + 1]] = e / e.sum()
    acc.postprocess(p.nnz, adds=2 * p.nnz)
    return p.with_values(vals)


def gat_layer(g: Graph, spec: LayerSpec, h, acc: Accelerator | None = None) -> np.ndarray:
    acc = _acc(acc)
    h = _check_in(h, spec)
    acc.hbm_dense_in("transformation", h)
    acc.hbm_dense_in("transformation", spec.weight)
    z = acc.gemm(h, spec.weight)
    att = gat_attention(g, spec, z, acc)
    acc.hbm_sparse_in("aggregation", att)
    out = _finish(acc, acc.spmm(att, z), spec)
    acc.hbm_dense_out("aggregation", out)
    return out


LAYERS = {"gcn": gcn_layer, "sage": sage_layer, "gin": gin_layer, "gat": gat_layer}


def reference_layer(g: Graph, spec: LayerSpec, h) -> np.ndarray:
    a = g.dense_adjacency()
    h = np.asarray(h, dtype=np.float64)
    w = spec.weight.astype(np.float64)
    kw = dict(b=spec.bias, act=spec.activation, slope=spec.slope)
    if spec.model == "gcn":
        return ref.gcn_ref(a, h, w, **kw)
    if spec.model == "sage":
        return ref.sage_ref(a, h, w, **kw)
    if spec.model == "gin":
        return ref.gin_ref(a, h, w, eps=spec.eps, mlp=spec.mlp, **kw)
    return ref.gat_ref(a, h, w, spec.a1.astype(np.float64), spec.a2.astype(np.float64), **kw)


def reference_inference(g: Graph, layers: list[LayerSpec]) -> np.ndarray:
    h = g.features.astype(np.float64)
    for spec in layers:
        h = reference_layer(g, spec, h)
    return h


def run_inference(g: Graph, layers: list[LayerSpec], cfg: EngineConfig | None = None,
                  seed: int | None = None, verify: bool | None = None) -> tuple[np.ndarray, SimReport]:
    """Run every layer through the simulator; optionally check each against the reference."""
    cfg = cfg or EngineConfig()
    verify = cfg.verify if verify is None else verify
    acc = Accelerator(cfg, seed)
    h = g.features
    for i, spec in enumerate(layers):
        if spec.in_dim != h.shape[1]:
            raise LayerError(f"layer {i} ({spec.model}): expects {spec.in_dim} input features, got {h.shape[1]}")
        acc.begin_layer(i, spec.model)
        try:
            out = LAYERS[spec.model](g, spec, h, acc)
        except LayerError:
            raise
        except Exception as exc:
            raise LayerError(f"layer {i} ({spec.model}) failed during {acc.phase}: {exc}") from exc
        if verify:
            dev = ref.max_rel_error(out, reference_layer(g, spec, h))
            acc.report.verification[f"layer{i}"] = dev
            if not dev <= cfg.tolerance:
                raise VerificationError(
                    f"layer {i} ({spec.model}) output after {acc.phase} deviates from the reference: "
                    f"max relative error {dev:.3e} > {cfg.tolerance:.1e}")
        h = out
    if verify:
        acc.report.verification["end_to_end"] = ref.max_rel_error(h, reference_inference(g, layers))
    return h, acc.report


# --------------------------------------------------------------------------
# model spec files


def _init_matrix(init, shape, rng, what):
    if isinstance(init, str):
        if init == "random":
            return (rng.standard_normal(shape) / np.sqrt(shape[0])).astype(np.float32)
        if init == "identity":
            if shape[0] != shape[1]:
                raise ValueError(f"identity init needs a square {what}")
            return np.eye(shape[0], dtype=np.float32)
        if init == "zeros":
            return np.zeros(shape, dtype=np.float32)
        m = read_dense_csv(init)
        if m.shape != tuple(shape):
            raise ShapeError(f"{init}: {what} is {m.shape}, expected {tuple(shape)}")
        return m
    m = as_dense(init, what)
    if m.shape != tuple(shape):
        raise ShapeError(f"{what} is {m.shape}, expected {tuple(shape)}")
    return m


def build_model(spec: dict, in_dim: int, seed: int = 0) -> list[LayerSpec]:
    """Build layers from a model description.

    ``{"layers": [{"model": "gcn", "out": 16, "activation": "relu", "bias": true,
    "init": "random"}, ...]}``; ``init`` may also be ``"identity"`` or a CSV path.
    """
    rng = np.random.default_rng(seed)
    layers = []
    dim = in_dim
    for i, L in enumerate(spec["layers"]):
        model = L["model"].lower()
        model = {"graphsage": "sage", "gsa": "sage"}.get(model, model)
        out = int(L.get("out", dim))
        w = _init_matrix(L.get("init", "random"), (dim, out), rng, f"layer {i} weight")
        b = None
        if L.get("bias"):
            b = (rng.standard_normal(out) * 0.1).astype(np.float32) if L["bias"] is True else L["bias"]
        kw = {}
        if model == "gat":
            kw["a1"] = (rng.standard_normal(out) / np.sqrt(out)).astype(np.float32)
            kw["a2"] = (rng.standard_normal(out) / np.sqrt(out)).astype(np.float32)
        layers.append(LayerSpec(model, w, b, activation=L.get("activation", "none"),
                                slope=L.get("slope", 0.2), eps=L.get("eps", 0.0),
                                order=L.get("order"), sage_path=L.get("sage_path", "direct"), **kw))
        dim = out
    return layers


def load_model(path, in_dim: int, seed: int = 0) -> list[LayerSpec]:
    with open(path) as fh:
        return build_model(json.load(fh), in_dim, seed)
