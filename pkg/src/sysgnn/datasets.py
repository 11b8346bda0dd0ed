"""Graph loading and synthetic power-law graphs."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .gnn import Graph
from .mmio import read_dense_csv, read_mtx


def _is_mtx(path: Path) -> bool:
    if path.suffix.lower() == ".mtx":
        return True
    with open(path) as fh:
        return fh.readline().startswith("%%MatrixMarket")


def read_edge_list(path, n_nodes: int | None = None) -> tuple[list[tuple[int, int]], int]:
    """Whitespace ``src dst`` pairs, 0-based; ``#`` starts a comment."""
    edges = []
    hi = -1
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'src dst', got {line!r}")
            try:
                s, d = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: node ids must be integers") from exc
            if s < 0 or d < 0:
                raise ValueError(f"{path}:{lineno}: negative node id")
            if n_nodes is not None and max(s, d) >= n_nodes:
                raise ValueError(f"{path}:{lineno}: node {max(s, d)} out of range for {n_nodes} nodes")
            hi = max(hi, s, d)
            edges.append((s, d))
    return edges, (hi + 1 if n_nodes is None else n_nodes)


def load_dataset(adjacency_path, features_path=None, *, symmetrize: bool = True,
                 n_nodes: int | None = None, feature_dim: int = 16, seed: int = 0) -> Graph:
    """Load a graph from a Matrix Market file or an edge list, plus CSV features.

    The node count comes from ``n_nodes``, else the feature rows, else the
    largest node id. Without a features file, seeded random features of
    ``feature_dim`` columns are generated.
    """
    adjacency_path = Path(adjacency_path)
    feats = read_dense_csv(features_path) if features_path is not None else None
    if n_nodes is None and feats is not None:
        n_nodes = feats.shape[0]
    if _is_mtx(adjacency_path):
        a = read_mtx(adjacency_path)
        if a.n_rows != a.n_cols:
            raise ValueError(f"{adjacency_path}: adjacency must be square, got {a.shape}")
        if n_nodes is not None and a.n_rows != n_nodes:
            raise ValueError(f"{adjacency_path}: {a.n_rows} nodes but features describe {n_nodes}")
        n = a.n_rows
        edges = list(zip(a.rows.tolist(), a.cols.tolist()))
    else:
        edges, n = read_edge_list(adjacency_path, n_nodes)
    if feats is None:
        feats = np.random.default_rng(seed).standard_normal((n, feature_dim)).astype(np.float32)
    return Graph.from_edges(n, edges, feats, symmetric=symmetrize)


def gen_powerlaw(n: int, exponent: float = 2.5, seed: int = 0, *, m: int = 2,
                 feature_dim: int = 16) -> Graph:
    """Preferential attachment with an offset tuned to the degree exponent.

    Each new node links to ``m`` distinct earlier nodes chosen with probability
    proportional to ``degree + m * (exponent - 3)``; the tail of the degree
    distribution then decays as ``degree ** -exponent``. Starts from a single
    edge between nodes 0 and 1.
    """
    if n < 2:
        raise ValueError("a power-law graph needs at least 2 nodes")
    if exponent <= 2:
        raise ValueError("exponent must exceed 2")
    rng = np.random.default_rng(seed)
    offset = m * (exponent - 3)
    deg = np.zeros(n, dtype=np.float64)
    edges = [(0, 1)]
    deg[0] = deg[1] = 1
    for v in range(2, n):
        if v <= m:
            targets = list(range(v))
        else:
            weight = np.maximum(deg[:v] + offset, 1e-9)
            cdf = np.cumsum(weight)
            chosen: set[int] = set()
            while len(chosen) < m:
                draws = np.searchsorted(cdf, rng.random(m) * cdf[-1], side="right")
                for t in draws:
                    if len(chosen) < m:
                        chosen.add(int(min(t, v - 1)))
            targets = sorted(chosen)
        for t in targets:
            edges.append((v, t))
            deg[t] += 1
        deg[v] += len(targets)
    feats = rng.standard_normal((n, feature_dim)).astype(np.float32)
    return Graph.from_edges(n, edges, feats, symmetric=True)


def undirected_edges(g: Graph) -> set[tuple[int, int]]:
    a = g.adjacency
    return {(int(r), int(c)) for r, c in zip(a.rows, a.cols) if r < c}


def degree_slope(degrees, min_degree: int | None = None) -> float:
    """Slope of the log-log degree density over logarithmic bins."""
    d = np.asarray(degrees)
    d = d[d > 0]
    lo = min_degree or max(int(np.median(d)), 1)
    d = d[d >= lo]
    edges = np.unique(np.floor(np.logspace(np.log10(lo), np.log10(d.max() + 1), 12)).astype(int))
    counts, _ = np.histogram(d, bins=edges)
    width = np.diff(edges)
    centers = np.sqrt(edges[:-1] * edges[1:])
    keep = counts > 0
    density = counts[keep] / width[keep]
    return float(np.polyfit(np.log(centers[keep]), np.log(density), 1)[0])


def write_edge_list(path, g: Graph) -> None:
    with open(path, "w") as fh:
        for s, d in sorted(undirected_edges(g)):
            fh.write(f"{s} {d}\n")

