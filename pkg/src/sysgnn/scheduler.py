"""Mapping matrix work onto clusters and running the mapped passes.

Transformation (dense GEMM): the output is cut into panels of
``2*tile_rows x 2*tile_cols``; each panel is one cluster invocation whose four
quadrants go to the four ring tiles. The inner dimension is streamed, not split.

Aggregation (sparse x dense): the adjacency is cut into ``tile_rows`` square
tiles. Within a tile-column the nonzero tiles (optionally packed) are taken
four at a time as a chain: the dense panel of that column flows through all
four tiles, and each tile produces partial rows of its own block row.
Partials from different tile-columns are merged in scratchpad accumulators.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .config import EngineConfig
from .matrix import ACC_DTYPE, ShapeError, SparseTile, as_dense
from .packing import PackedTile, greedy_pack
from .pe import Mode, Reduction
from .report import PhaseStats
from .strassen import StrassenCluster, blocked_multiply, strassen_multiply
from .tile import INPUT_BYTES, OUTPUT_BYTES, SPARSE_ENTRY_BYTES, SystolicTile, run_sparse, stream_multiplicity

RING = "ring_dense"
CHAIN = "chain_sparse"


@dataclass
class Assignment:
    work: str
    cluster: int
    tile: int
    pass_index: int


@dataclass
class TileMap:
    mode: str
    assignments: list = field(default_factory=list)
    passes: list = field(default_factory=list)
    address_table: dict = field(default_factory=dict)
    units: dict = field(default_factory=dict)  # work id -> SparseTile | PackedTile (not dumped)
    unit_rows: dict = field(default_factory=dict)  # work id -> [(bank, block row)]
    packing_plans: list = field(default_factory=list)

    @property
    def n_passes(self) -> int:
        return len(self.passes)

    def to_json(self) -> str:
        return json.dumps({
            "mode": self.mode,
            "assignments": [a.__dict__ for a in self.assignments],
            "passes": self.passes,
            "address_table": self.address_table,
            "packing_plans": self.packing_plans,
        }, sort_keys=True, indent=2)


def _ceil(a: int, b: int) -> int:
    return -(-a // b)


def _shape(x) -> tuple[int, int]:
    if isinstance(x, tuple) and len(x) == 2 and all(isinstance(v, (int, np.integer)) for v in x):
        return int(x[0]), int(x[1])
    return np.shape(x)


# --------------------------------------------------------------------------
# transformation


def map_transformation(x, w, cluster_cfg: EngineConfig) -> TileMap:
    """Ring mapping of ``x @ w``; ``x`` and ``w`` may be matrices or shapes."""
    (m, k), (k2, n) = _shape(x), _shape(w)
    if k != k2:
        raise ShapeError(f"cannot multiply {m}x{k} by {k2}x{n}")
    pr, pc = 2 * cluster_cfg.tile_rows, 2 * cluster_cfg.tile_cols
    tm = TileMap(RING)
    addr = 0
    for r in range(_ceil(m, pr)):
        tm.address_table[f"X[{r}]"] = addr
        addr += min(pr, m - r * pr) * k * INPUT_BYTES
    for c in range(_ceil(n, pc)):
        tm.address_table[f"W[{c}]"] = addr
        addr += k * min(pc, n - c * pc) * INPUT_BYTES
    p = 0
    for r in range(_ceil(m, pr)):
        for c in range(_ceil(n, pc)):
            cl = p % cluster_cfg.clusters
            rows = (r * pr, min(m, (r + 1) * pr))
            cols = (c * pc, min(n, (c + 1) * pc))
            tm.passes.append({"pass": p, "cluster": cl, "rows": list(rows), "cols": list(cols)})
            for q in range(4):
                tm.assignments.append(Assignment(f"Y[{r},{c}].C{q}", cl, q, p))
            tm.address_table[f"Y[{r},{c}]"] = addr
            addr += (rows[1] - rows[0]) * (cols[1] - cols[0]) * OUTPUT_BYTES
            p += 1
    return tm


def run_transformation(x, w, cfg: EngineConfig, tm: TileMap | None = None
                       ) -> tuple[np.ndarray, PhaseStats]:
    x = as_dense(x, "x")
    w = as_dense(w, "w")
    tm = tm or map_transformation(x, w, cfg)
    clusters = [StrassenCluster(cfg.tile_rows, cfg.tile_cols, cfg.fifo_cam_depth)
                for _ in range(cfg.clusters)]
    busy = [0] * cfg.clusters
    out = np.zeros((x.shape[0], w.shape[1]), dtype=ACC_DTYPE)
    st = PhaseStats()
    for p in tm.passes:
        (r0, r1), (c0, c1) = p["rows"], p["cols"]
        fn = strassen_multiply if cfg.strassen else blocked_multiply
        y, cs = fn(clusters[p["cluster"]], x[r0:r1], w[:, c0:c1])
        out[r0:r1, c0:c1] = y
        busy[p["cluster"]] += cs.cycles
        st.macs += cs.scalar_mults
        st.updates += cs.scalar_mults
        st.adds += cs.adds
        st.pe_cycles += cs.pe_cycles
        st.scratchpad_bytes += cs.bytes_moved
        st.hops += cs.hops
        st.passes += 1
    st.cycles = max(busy)
    return out, st


# --------------------------------------------------------------------------
# aggregation


def tile_grid(a: SparseTile, tile_rows: int, tile_cols: int | None = None) -> list[list[SparseTile]]:
    """Cut ``a`` into full-size tiles; edge tiles are zero padded."""
    tile_cols = tile_cols or tile_rows
    grid = []
    for br in range(_ceil(a.n_rows, tile_rows)):
        row = []
        for bc in range(_ceil(a.n_cols, tile_cols)):
            r0, c0 = br * tile_rows, bc * tile_cols
            sub = a.submatrix(r0, min(a.n_rows, r0 + tile_rows), c0, min(a.n_cols, c0 + tile_cols))
            row.append(SparseTile(tile_rows, tile_cols, sub.rows, sub.cols, sub.vals, a.format_tag))
        grid.append(row)
    return grid


def map_aggregation(sparse_tiles, cluster_cfg: EngineConfig, *, packing: bool | None = None,
                    feature_dim: int | None = None, chain_length: int | None = None) -> TileMap:
    """Chain mapping of a tiled sparse operand.

    ``sparse_tiles[br][bc]`` is the tile at block row ``br`` and block column
    ``bc`` (``None`` counts as empty). ``feature_dim`` sets how many dense
    panels of ``tile_cols`` columns each chain pass is repeated for.
    """
    packing = cluster_cfg.packing if packing is None else packing
    chain = chain_length or cluster_cfg.tiles_per_cluster
    feature_dim = feature_dim or cluster_cfg.tile_cols
    panels = _ceil(feature_dim, cluster_cfg.tile_cols)
    tm = TileMap(CHAIN)
    n_br = len(sparse_tiles)
    n_bc = len(sparse_tiles[0]) if n_br else 0
    addr = 0
    for br in range(n_br):
        tm.address_table[f"OUT[{br}]"] = addr
        addr += cluster_cfg.tile_rows * feature_dim * OUTPUT_BYTES
    p = 0
    for bc in range(n_bc):
        live = [(br, sparse_tiles[br][bc]) for br in range(n_br)
                if sparse_tiles[br][bc] is not None and sparse_tiles[br][bc].nnz]
        if not live:
            continue
        tm.address_table[f"D[{bc}]"] = addr
        addr += cluster_cfg.tile_cols * feature_dim * INPUT_BYTES
        units = []
        rows_of = {}
        if packing and len(live) > 1:
            plan, packed = greedy_pack([t for _, t in live], cluster_cfg.alpha, tile_ids=[br for br, _ in live],
                                       width=cluster_cfg.pack_width, sparsity=cluster_cfg.sparsity_reading,
                                       dense_cols=min(feature_dim, cluster_cfg.tile_cols),
                                       compact=cluster_cfg.compact_stream)
            tm.packing_plans.append({"column": bc, **json.loads(plan.to_json())})
            for g, pk in zip(plan.pairs, packed):
                name = f"A[{'+'.join(map(str, g))},{bc}]"
                units.append((name, pk))
                rows_of[name] = list(enumerate(g))
            for br in plan.leftovers:
                units.append((f"A[{br},{bc}]", dict(live)[br]))
                rows_of[f"A[{br},{bc}]"] = [(0, br)]
        else:
            for br, t in live:
                units.append((f"A[{br},{bc}]", t))
                rows_of[f"A[{br},{bc}]"] = [(0, br)]
        for name, u in units:
            tm.units[name] = u
            tm.unit_rows[name] = rows_of[name]
        for g in range(0, len(units), chain):
            group = units[g:g + chain]
            for f in range(panels):
                cl = p % cluster_cfg.clusters
                tm.passes.append({"pass": p, "cluster": cl, "column": bc, "panel": f,
                                  "units": [nm for nm, _ in group]})
                for slot, (nm, _) in enumerate(group):
                    tm.assignments.append(Assignment(nm, cl, slot, p))
                p += 1
    return tm


def run_aggregation(a: SparseTile, x, cfg: EngineConfig, mode: Mode = Mode.WEIGHTED,
                    reduction: Reduction = Reduction.ADD, tm: TileMap | None = None,
                    packing: bool | None = None) -> tuple[np.ndarray, np.ndarray, PhaseStats]:
    """Run ``a`` (sparse, n x n) against dense ``x`` through chained tiles.

    Returns ``(values, counts, stats)`` where ``counts[i]`` is how many stored
    entries row ``i`` matched (needed to finish a mean across tile-columns).
    """
    x = as_dense(x, "x")
    if a.n_cols != x.shape[0]:
        raise ShapeError(f"cannot multiply sparse {a.n_rows}x{a.n_cols} by {x.shape[0]}x{x.shape[1]}")
    R, C = cfg.tile_rows, cfg.tile_cols
    grid = tile_grid(a, R, R)
    tm = tm or map_aggregation(grid, cfg, packing=packing, feature_dim=x.shape[1])
    n_pad = len(grid) * R
    k_pad = (len(grid[0]) if grid else 0) * R
    xp = np.zeros((k_pad, x.shape[1]), dtype=ACC_DTYPE)
    xp[:x.shape[0]] = x
    F = x.shape[1]
    total = np.zeros((n_pad, F), dtype=ACC_DTYPE)
    counts = np.zeros((n_pad, F), dtype=np.int64)
    direct = mode is Mode.DIRECT
    pe_red = Reduction.ADD if reduction is Reduction.MEAN else reduction

    tiles = [SystolicTile(R, C, cfg.fifo_cam_depth, debug=False) for _ in range(cfg.tiles_per_cluster)]
    busy = [0] * cfg.clusters
    st = PhaseStats()
    for p in tm.passes:
        bc, f = p["column"], p["panel"]
        f0, f1 = f * C, min(F, (f + 1) * C)
        group = [tm.units[nm] for nm in p["units"]]
        sched = np.max([stream_multiplicity(u, cfg.compact_stream) for u in group], axis=0)
        panel = xp[bc * R:(bc + 1) * R, f0:f1]
        n_keys = int(sched.sum())
        pass_cycles = 0
        for slot, (nm, u) in enumerate(zip(p["units"], group)):
            res = run_sparse(tiles[slot], u, panel, mode, pe_red, multiplicity=sched,
                             exhaustive=cfg.exhaustive)
            ts = res.stats
            # the dense panel reaches chain slot t after t tile crossings plus one link hop each
            pass_cycles = max(pass_cycles, slot * (R + 1) + ts.cycles)
            st.updates += ts.updates
            st.stall_cycles += ts.stall_cycles
            if direct:
                st.adds += ts.updates
            else:
                st.macs += ts.multiplies
                st.adds += ts.updates
            st.scratchpad_bytes += SPARSE_ENTRY_BYTES * u.nnz
            for bank, br in tm.unit_rows[nm]:
                orig = (u.row_reordering[:, bank] if isinstance(u, PackedTile) else np.arange(R))
                rows = br * R + orig
                hit = res.count[bank] > 0
                if not hit.any():
                    continue
                vals = res.acc[bank][hit]
                tgt = rows[hit]
                prev = counts[tgt, f0] > 0
                st.adds += int(prev.sum()) * (f1 - f0)
                st.scratchpad_bytes += OUTPUT_BYTES * (f1 - f0) * (int(hit.sum()) + int(prev.sum()))
                cur = total[tgt, f0:f1]
                if pe_red is Reduction.MIN:
                    merged = np.where(prev[:, None], np.minimum(cur, vals), vals)
                elif pe_red is Reduction.MAX:
                    merged = np.where(prev[:, None], np.maximum(cur, vals), vals)
                else:
                    merged = cur + vals
                total[tgt, f0:f1] = merged
                counts[tgt, f0:f1] += res.count[bank][hit][:, None]
        st.scratchpad_bytes += INPUT_BYTES * n_keys * (f1 - f0)
        st.hops += (len(group) - 1) * n_keys * (f1 - f0)
        st.pe_cycles += cfg.tiles_per_cluster * R * C * pass_cycles
        busy[p["cluster"]] += pass_cycles
        st.passes += 1
    st.cycles = max(busy) if tm.passes else 0
    row_counts = counts[:a.n_rows, 0] if F else np.zeros(a.n_rows, dtype=np.int64)
    return total[:a.n_rows], row_counts, st


def finish_mean(values: np.ndarray, counts: np.ndarray) -> np.ndarray:
    out = np.zeros_like(values)
    hit = counts > 0
    out[hit] = values[hit] / counts[hit, None].astype(ACC_DTYPE)
    return out
