"""Offline greedy packing of complementary sparse tiles.

Two (or up to four) sparse tiles with the same shape are fused row-wise into
one condensed tile that runs as a single pass. Every cell carries a source
mask; PEs keep one accumulator per mask value, so the fused pass produces the
same sums as separate passes. Per-source reorder vectors send each drained row
back to its original position.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .matrix import ShapeError, SparseTile, frozen
from .pe import Mode, Reduction
from .tile import StreamPlan, SystolicTile, TileStats, key_layout, run_sparse, sparse_tile_cycles, stream_multiplicity

MAX_WIDTH = 4  # two mask bits


class PackedTile:
    """Several same-shape sparse tiles fused row by row.

    ``row_reordering[i, m]`` is the original row of source ``m`` that packed
    row ``i`` carries. Entries are stored sorted by ``(packed_row, col, mask)``.
    """

    def __init__(self, sources: list[SparseTile], perms: list[np.ndarray], source_ids=None):
        if not sources:
            raise ValueError("a packed tile needs at least one source")
        if len(sources) > MAX_WIDTH:
            raise ValueError(f"at most {MAX_WIDTH} sources fit the mask width")
        shape = sources[0].shape
        if any(s.shape != shape for s in sources):
            raise ShapeError("packed sources must share dimensions")
        self.n_rows, self.n_cols = shape
        self.width = len(sources)
        self.source_ids = tuple(source_ids) if source_ids is not None else tuple(range(self.width))
        reorder = np.stack([np.asarray(p, dtype=np.int64) for p in perms], axis=1)
        if reorder.shape != (self.n_rows, self.width) or any(
                sorted(reorder[:, m]) != list(range(self.n_rows)) for m in range(self.width)):
            raise ValueError("each reorder vector must be a permutation of the tile rows")
        self.row_reordering = frozen(reorder)

        prow, cols, vals, masks = [], [], [], []
        for m, s in enumerate(sources):
            inv = np.empty(self.n_rows, dtype=np.int64)
            inv[reorder[:, m]] = np.arange(self.n_rows)
            prow.append(inv[s.rows])
            cols.append(s.cols)
            vals.append(s.vals)
            masks.append(np.full(s.nnz, m, dtype=np.int64))
        prow, cols = np.concatenate(prow), np.concatenate(cols)
        vals, masks = np.concatenate(vals), np.concatenate(masks)
        order = np.lexsort((masks, cols, prow))
        self.prow = frozen(prow[order])
        self.cols = frozen(cols[order])
        self.vals = frozen(vals[order])
        self.masks = frozen(masks[order])

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_rows, self.n_cols

    @property
    def nnz(self) -> int:
        return len(self.vals)

    @property
    def entries(self) -> list[tuple[int, int, float, int]]:
        return [(int(r), int(c), float(v), int(m))
                for r, c, v, m in zip(self.prow, self.cols, self.vals, self.masks)]

    def row_lengths(self) -> np.ndarray:
        return np.bincount(self.prow, minlength=self.n_rows)

    def native_multiplicity(self) -> np.ndarray:
        """Per column, the most entries any packed row holds for it."""
        m = np.zeros(self.n_cols, dtype=np.int64)
        if self.nnz:
            pair = self.prow * self.n_cols + self.cols
            uniq, counts = np.unique(pair, return_counts=True)
            np.maximum.at(m, uniq % self.n_cols, counts)
        return m

    def _slots(self) -> np.ndarray:
        """Rank of each entry among entries sharing its packed row and column."""
        slot = np.zeros(self.nnz, dtype=np.int64)
        same = (np.diff(self.prow) == 0) & (np.diff(self.cols) == 0)
        for i in np.nonzero(same)[0]:
            slot[i + 1] = slot[i] + 1
        return slot

    def stream_plan(self, multiplicity: np.ndarray | None = None) -> StreamPlan:
        if multiplicity is None:
            multiplicity = stream_multiplicity(self)
        offsets, key_rows = key_layout(multiplicity)
        keys = offsets[self.cols] + self._slots()
        ptr = np.searchsorted(self.prow, np.arange(self.n_rows + 1))
        sl = [slice(ptr[i], ptr[i + 1]) for i in range(self.n_rows)]
        return StreamPlan(
            self.n_rows, self.n_cols, key_rows,
            row_keys=[keys[x] for x in sl], row_cols=[self.cols[x] for x in sl],
            row_vals=[self.vals[x] for x in sl], row_masks=[self.masks[x] for x in sl],
            banks=self.width,
        )

    def unpack(self) -> tuple[SparseTile, ...]:
        out = []
        for m in range(self.width):
            sel = self.masks == m
            rows = self.row_reordering[self.prow[sel], m]
            out.append(SparseTile.from_entries(self.n_rows, self.n_cols,
                                               zip(rows, self.cols[sel], self.vals[sel])))
        return tuple(out)

    def __repr__(self):
        return f"PackedTile({self.n_rows}x{self.n_cols}, sources={self.source_ids}, nnz={self.nnz})"


def best_row_pairing(counts_a, counts_b) -> tuple[np.ndarray, np.ndarray]:
    """Pair the fullest rows of one tile with the emptiest rows of the other.

    Returns ``(perm_a, perm_b)``; packed row ``i`` holds ``perm_a[i]`` and ``perm_b[i]``.
    """
    perm_a = np.argsort(-np.asarray(counts_a), kind="stable")
    perm_b = np.argsort(np.asarray(counts_b), kind="stable")
    return perm_a, perm_b


def pack_tiles(tiles: list[SparseTile], source_ids=None) -> PackedTile:
    """Fuse ``tiles`` in order, each new source filling the shortest packed rows first."""
    if not tiles:
        raise ValueError("nothing to pack")
    if any(t.shape != tiles[0].shape for t in tiles):
        raise ShapeError("packed sources must share dimensions")
    lengths = tiles[0].row_counts()
    perms = [np.arange(tiles[0].n_rows)]
    for t in tiles[1:]:
        pa, pb = best_row_pairing(lengths, t.row_counts())
        perms = [p[pa] for p in perms] + [pb]
        lengths = lengths[pa] + t.row_counts()[pb]
    return PackedTile(list(tiles), perms, source_ids)


def tile_pass_cycles(t, dense_cols: int, compact: bool = False) -> int:
    banks = getattr(t, "width", 1)
    return sparse_tile_cycles(t.n_rows, int(stream_multiplicity(t, compact).sum()), dense_cols, banks)


@dataclass
class PackingPlan:
    alpha: float
    pairs: list = field(default_factory=list)
    leftovers: list = field(default_factory=list)
    predicted_savings: list = field(default_factory=list)
    dropped: list = field(default_factory=list)
    sparsity: str = "occupancy"
    width: int = 2

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PackingPlan":
        return cls(**json.loads(text))


def greedy_pack(tiles: list[SparseTile], alpha: float = 0.45, *, tile_ids=None,
                width: int = 2, sparsity: str = "occupancy", dense_cols: int | None = None,
                compact: bool = False) -> tuple[PackingPlan, list[PackedTile]]:
    """Greedily fuse complementary tiles.

    Tiles whose measure exceeds ``alpha`` seek a partner first and take the
    most complementary one left; the remaining tiles are then paired
    fullest-with-emptiest. ``sparsity="occupancy"`` measures the nonzero
    fraction, ``"zeros"`` the zero fraction. A merge is accepted only when the
    fused pass is predicted to be cheaper than the separate passes.
    """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if sparsity not in ("occupancy", "zeros"):
        raise ValueError(f"unknown sparsity reading {sparsity!r}")
    if not 2 <= width <= MAX_WIDTH:
        raise ValueError(f"pack width must be between 2 and {MAX_WIDTH}")
    ids = list(range(len(tiles))) if tile_ids is None else list(tile_ids)
    if len(ids) != len(tiles):
        raise ValueError("tile_ids must match tiles")
    if tiles and any(t.shape != tiles[0].shape for t in tiles):
        raise ShapeError("all tiles must share dimensions")
    plan = PackingPlan(alpha=alpha, sparsity=sparsity, width=width)
    if not tiles:
        return plan, []
    cols = dense_cols if dense_cols is not None else tiles[0].n_cols
    by_id = dict(zip(ids, tiles))

    live = [i for i in ids if by_id[i].nnz]
    plan.dropped = [i for i in ids if not by_id[i].nnz]
    occ = {i: by_id[i].occupancy() for i in live}
    measure = occ if sparsity == "occupancy" else {i: 1 - o for i, o in occ.items()}
    cost = {(i,): tile_pass_cycles(by_id[i], cols, compact) for i in live}

    def try_merge(g1, g2):
        group = g1 + g2
        if len(group) > width:
            return None
        packed = pack_tiles([by_id[i] for i in group], group)
        saving = cost[g1] + cost[g2] - tile_pass_cycles(packed, cols, compact)
        return (saving, packed) if saving > 0 else None

    units: list[tuple] = [(i,) for i in live]
    packed_of: dict[tuple, PackedTile] = {}
    savings: dict[tuple, int] = {}

    def fill(g):
        return sum(occ[i] for i in g)

    def merge(g1, g2, res):
        saving, packed = res
        g = g1 + g2
        cost[g] = cost[g1] + cost[g2] - saving
        savings[g] = savings.pop(g1, 0) + savings.pop(g2, 0) + saving
        packed_of.pop(g1, None)
        packed_of.pop(g2, None)
        packed_of[g] = packed
        units.remove(g1)
        units.remove(g2)
        units.append(g)

    # seekers first: each takes the most complementary partner still free
    seekers = sorted((u for u in units if measure[u[0]] > alpha), key=lambda u: -measure[u[0]])
    for s in seekers:
        partners = sorted((u for u in units if len(u) == 1 and u != s and measure[u[0]] <= alpha),
                          key=lambda u: abs(occ[s[0]] - occ[u[0]]), reverse=True)
        for p in partners:
            res = try_merge(s, p)
            if res is not None:
                merge(s, p, res)
                break

    # then fullest with emptiest among whatever is left
    changed = True
    while changed:
        changed = False
        order = sorted(units, key=lambda u: (fill(u), u))
        lo, hi = 0, len(order) - 1
        while lo < hi:
            res = try_merge(order[hi], order[lo])
            if res is not None:
                merge(order[hi], order[lo], res)
                changed = True
                lo += 1
                hi -= 1
            else:
                # the emptiest unit cannot absorb the fullest; try a lighter one next
                hi -= 1

    for g in units:
        if len(g) > 1:
            plan.pairs.append(list(g))
            plan.predicted_savings.append(int(savings[g]))
        else:
            plan.leftovers.append(g[0])
    return plan, [packed_of[tuple(p)] for p in plan.pairs]


def reorder_results(p: PackedTile, raw) -> tuple[list, ...]:
    """Route ``(packed_row, mask, col, val)`` drains back to their sources."""
    out: list[list] = [[] for _ in range(p.width)]
    for prow, mask, col, val in raw:
        if not 0 <= mask < p.width:
            raise ValueError(f"corrupt drain: mask {mask} has no reorder vector (width {p.width})")
        if not 0 <= prow < p.n_rows:
            raise ValueError(f"corrupt drain: packed row {prow} out of range")
        out[mask].append((int(p.row_reordering[prow, mask]), int(col), val))
    return tuple(sorted(o, key=lambda x: (x[0], x[1])) for o in out)


def run_packed_spmm(p: PackedTile, d, mode: Mode = Mode.WEIGHTED,
                    reduction: Reduction = Reduction.ADD, *, tile: SystolicTile | None = None,
                    compact: bool = False, exhaustive: bool = False) -> tuple[tuple[list, ...], TileStats]:
    """Run a packed tile and scatter the results; returns per-source triples."""
    if tile is None:
        tile = SystolicTile(max(p.n_rows, 1), max(np.asarray(d).shape[1] if np.ndim(d) == 2 else 1, 1))
    res = run_sparse(tile, p, d, mode, reduction, compact=compact, exhaustive=exhaustive)
    return reorder_results(p, res.drains()), res.stats
