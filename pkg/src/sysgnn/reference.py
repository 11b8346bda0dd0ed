"""Plain dense float64 implementations of the four layer types.

These never touch the simulator and take the adjacency as a dense 0/1 matrix;
they exist only to check the simulated results.
"""

from __future__ import annotations

import numpy as np


def activation(x: np.ndarray, kind: str, slope: float = 0.2) -> np.ndarray:
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "leaky_relu":
        return np.where(x > 0, x, slope * x)
    if kind == "none":
        return x
    raise ValueError(f"unknown activation {kind!r}")


def _with_self_loops(a: np.ndarray) -> np.ndarray:
    out = (a != 0).astype(np.float64)
    np.fill_diagonal(out, 1.0)
    return out


def gcn_ref(a, h, w, b=None, act="none", slope=0.2):
    ah = _with_self_loops(a)
    d = ah.sum(axis=1)
    norm = ah / np.sqrt(np.outer(d, d))
    out = norm @ (h @ w)
    if b is not None:
        out = out + b
    return activation(out, act, slope)


def sage_ref(a, h, w, b=None, act="none", slope=0.2):
    ah = _with_self_loops(a)
    mean = (ah @ h) / ah.sum(axis=1, keepdims=True)
    out = mean @ w
    if b is not None:
        out = out + b
    out = activation(out, act, slope)
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    return np.divide(out, norms, out=np.zeros_like(out), where=norms > 0)


def gin_ref(a, h, w, b=None, act="none", slope=0.2, eps=0.0, mlp=()):
    agg = (1 + eps) * h + (a != 0).astype(np.float64) @ h
    out = agg @ w
    if b is not None:
        out = out + b
    out = activation(out, act, slope)
    for w2, b2 in mlp:
        out = out @ w2
        if b2 is not None:
            out = out + b2
        out = activation(out, act, slope)
    return out


def gat_attention_ref(a, z, a1, a2, slope=0.2):
    """Dense masked softmax: non-edges get -inf before normalization."""
    mask = _with_self_loops(a) > 0
    logits = (z @ a1).reshape(-1, 1) + (z @ a2).reshape(1, -1)
    logits = np.where(logits > 0, logits, slope * logits)
    logits = np.where(mask, logits, -np.inf)
    logits = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def gat_ref(a, h, w, a1, a2, b=None, act="none", slope=0.2):
    z = h @ w
    out = gat_attention_ref(a, z, a1, a2, slope) @ z
    if b is not None:
        out = out + b
    return activation(out, act, slope)


def max_rel_error(sim: np.ndarray, ref: np.ndarray) -> float:
    """Largest absolute deviation relative to the largest reference magnitude."""
    sim = np.asarray(sim, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if sim.shape != ref.shape:
        raise ValueError(f"shape mismatch {sim.shape} vs {ref.shape}")
    if sim.size == 0:
        return 0.0
    scale = np.abs(ref).max()
    dev = np.abs(sim - ref).max()
    return float(dev / scale) if scale > 0 else float(dev)
