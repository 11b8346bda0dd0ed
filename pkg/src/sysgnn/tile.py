"""Cycle-level model of one output-stationary systolic tile.

Dataflow: operand ``A`` enters from the west edge (row ``i`` skewed by ``i``
cycles) and moves one hop east per cycle; the dense operand enters from the
north edge (column ``j`` skewed by ``j``) and moves one hop south per cycle.
PE ``(i, j)`` therefore sees element ``k`` of both streams at cycle
``k + i + j``. After the last operand pair, results drain out one row per
cycle (one row per accumulator bank for packed tiles).

Sparse passes use the shift invariance of that dataflow: every PE of a row
sees the same sparse stream and the same dense stream timing, so one PE with a
vector datapath (one lane per column) reproduces the whole row. A literal
per-PE grid simulation (``exhaustive=True``) is kept for cross-checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .matrix import ACC_DTYPE, ShapeError, SparseTile, as_dense
from .pe import Mode, ProcessingElement, Reduction, SimulationError, SparseElem

INPUT_BYTES = 2  # half-precision operands
OUTPUT_BYTES = 4  # single-precision results
SPARSE_ENTRY_BYTES = 6  # value + column index + row tag


def dense_tile_cycles(r: int, k: int, c: int, drain: bool = True) -> int:
    """Closed-form cycles of one dense pass of an ``r x k`` by ``k x c`` product."""
    return k + (r - 1) + (c - 1) + (r if drain else 0)


def sparse_tile_cycles(r: int, n_keys: int, c: int, banks: int = 1) -> int:
    """Closed-form cycles of one sparse pass (dense stream of ``n_keys`` rows)."""
    skew = (r - 1) + (c - 1) if n_keys else 0
    return n_keys + skew + banks * r


class Tracer:
    """Collects ``cycle pe_row pe_col event operands`` records."""

    def __init__(self):
        self.records: list[tuple[int, int, int, str, str]] = []
        self.base = 0

    def emit(self, cycle: int, row: int, col: int, event: str, operands: str = "") -> None:
        self.records.append((self.base + cycle, row, col, event, operands))

    def lines(self) -> list[str]:
        return [f"{c}\t{r}\t{k}\t{e}\t{o}" for c, r, k, e, o in sorted(self.records)]

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.lines():
                fh.write(line + "\n")


@dataclass
class TileStats:
    cycles: int = 0
    compute_cycles: int = 0
    drain_cycles: int = 0
    multiplies: int = 0
    updates: int = 0
    stall_cycles: int = 0
    fifo_high_water: int = 0
    rows_used: int = 0
    cols_used: int = 0
    grid_rows: int = 0
    grid_cols: int = 0
    scratchpad_bytes: int = 0
    cam_searches: int = 0  # Find&Skip calls
    cam_checks: int = 0  # calls verified against the shadow scan (debug tiles)
    pe_active: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=np.int64))

    @property
    def pe_cycles(self) -> int:
        return self.grid_rows * self.grid_cols * self.cycles

    @property
    def utilization(self) -> float:
        return self.updates / self.pe_cycles if self.pe_cycles else 0.0


class SystolicTile:
    """A ``rows x cols`` grid of hybrid PEs plus its resident registers.

    ``c_resident`` holds results kept in the PEs after a pass run with
    ``keep_resident=True``; ``d_regs`` holds the matrix fed back through the
    bottom-to-top path by :func:`feedback_x_prime`.
    """

    def __init__(self, rows: int = 32, cols: int = 32, fifo_depth: int = 4,
                 debug: bool = False):
        if rows < 1 or cols < 1 or fifo_depth < 1:
            raise ValueError("tile dimensions and FIFO depth must be positive")
        self.rows = rows
        self.cols = cols
        self.fifo_depth = fifo_depth
        self.debug = debug
        self.c_resident: np.ndarray | None = None
        self.d_regs: np.ndarray | None = None
        self.prop_c_trace: list[int] = []

    def __repr__(self):
        return f"SystolicTile({self.rows}x{self.cols}, fifo={self.fifo_depth})"

    def _check_fit(self, r: int, c: int) -> None:
        if r > self.rows or c > self.cols:
            raise ShapeError(f"{r}x{c} output does not fit a {self.rows}x{self.cols} tile; pre-tile it")


# --------------------------------------------------------------------------
# dense


class DenseGrid:
    """Register-level state of an output-stationary grid in dense mode.

    ``step`` shifts ``a`` one hop east and ``b`` one hop south, injects the
    edge values and fires a MAC in every PE holding a valid pair.
    """

    def __init__(self, rows: int, cols: int):
        self.rows, self.cols = rows, cols
        self.a = np.zeros((rows, cols), dtype=ACC_DTYPE)
        self.b = np.zeros((rows, cols), dtype=ACC_DTYPE)
        self.a_ok = np.zeros((rows, cols), dtype=bool)
        self.b_ok = np.zeros((rows, cols), dtype=bool)
        self.c = np.zeros((rows, cols), dtype=ACC_DTYPE)
        self.done = np.zeros((rows, cols), dtype=np.int64)

    def step(self, west, west_ok, north, north_ok) -> np.ndarray:
        self.a[:, 1:] = self.a[:, :-1]
        self.a_ok[:, 1:] = self.a_ok[:, :-1]
        self.a[:, 0] = np.where(west_ok, west, 0)
        self.a_ok[:, 0] = west_ok
        self.b[1:, :] = self.b[:-1, :]
        self.b_ok[1:, :] = self.b_ok[:-1, :]
        self.b[0, :] = np.where(north_ok, north, 0)
        self.b_ok[0, :] = north_ok
        if np.any(self.a_ok != self.b_ok):
            raise SimulationError("operand wavefronts misaligned")
        fire = self.a_ok
        self.c[fire] += self.a[fire] * self.b[fire]
        self.done += fire
        return fire


def skewed_edges(a: np.ndarray, b: np.ndarray, cycle: int):
    """West/north edge inputs at ``cycle`` for streams ``a`` (R x K) and ``b`` (K x C)."""
    K = a.shape[1]
    ka = cycle - np.arange(a.shape[0])
    ina = (ka >= 0) & (ka < K)
    kb = cycle - np.arange(b.shape[1])
    inb = (kb >= 0) & (kb < K)
    west = a[np.arange(a.shape[0]), np.clip(ka, 0, K - 1)]
    north = b[np.clip(kb, 0, K - 1), np.arange(b.shape[1])]
    return west, ina, north, inb


def wavefront_cycles(rows: int, cols: int, ks) -> dict[int, int]:
    """Cycle counts of dense passes for many stream lengths at once.

    Only the valid bits of the operand registers are simulated (same shift
    rules as :class:`DenseGrid`), one grid instance per entry of ``ks``.
    Returns ``{k: compute + drain cycles}``.
    """
    ks = np.asarray(sorted(set(int(k) for k in ks)))
    a_ok = np.zeros((len(ks), rows, cols), dtype=bool)
    b_ok = np.zeros_like(a_ok)
    done = np.zeros(a_ok.shape, dtype=np.int64)
    finished = np.full(len(ks), -1)
    r_idx, c_idx = np.arange(rows), np.arange(cols)
    cycle = 0
    while np.any(finished < 0):
        a_ok[:, :, 1:] = a_ok[:, :, :-1]
        q = cycle - r_idx
        a_ok[:, :, 0] = (q[None, :] >= 0) & (q[None, :] < ks[:, None])
        b_ok[:, 1:, :] = b_ok[:, :-1, :]
        q = cycle - c_idx
        b_ok[:, 0, :] = (q[None, :] >= 0) & (q[None, :] < ks[:, None])
        if np.any(a_ok != b_ok):
            raise SimulationError("operand wavefronts misaligned")
        done += a_ok
        cycle += 1
        newly = (finished < 0) & np.all(done == ks[:, None, None], axis=(1, 2))
        finished[newly] = cycle
        if cycle > ks.max() + rows + cols:
            raise SimulationError("wavefront failed to terminate")
    return {int(k): int(f) + rows for k, f in zip(ks, finished)}


def drain_south(c: np.ndarray) -> tuple[np.ndarray, int]:
    """Shift results out of the south edge one row per cycle."""
    R = c.shape[0]
    regs = c.copy()
    out = np.zeros_like(c)
    for step in range(R):
        out[R - 1 - step] = regs[R - 1]
        regs[1:] = regs[:-1]
        regs[0] = 0
    return out, R


def tile_run_dense(t: SystolicTile, a, b, keep_resident: bool = False,
                   tracer: Tracer | None = None) -> tuple[np.ndarray, TileStats]:
    """Run ``a @ b`` through the tile, one cycle at a time."""
    a = as_dense(a, "a")
    b = as_dense(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    R, K = a.shape
    C = b.shape[1]
    t._check_fit(R, C)

    grid = DenseGrid(R, C)
    cycle = 0
    while not np.all(grid.done == K):
        fire = grid.step(*skewed_edges(a, b, cycle))
        if tracer is not None:
            for i, j in zip(*np.nonzero(fire)):
                tracer.emit(cycle, int(i), int(j), "mac", f"k={cycle - i - j}")
        cycle += 1
        if cycle > K + R + C:
            raise SimulationError("dense pass failed to terminate")
    c = grid.c
    active = grid.done
    compute = cycle

    out = c
    drain = 0
    if keep_resident:
        t.c_resident = c.copy()
    else:
        out, drain = drain_south(c)

    macs = int(active.sum())
    stats = TileStats(
        cycles=compute + drain, compute_cycles=compute, drain_cycles=drain,
        multiplies=macs, updates=macs, rows_used=R, cols_used=C,
        grid_rows=t.rows, grid_cols=t.cols,
        scratchpad_bytes=INPUT_BYTES * (R * K + K * C) + (0 if keep_resident else OUTPUT_BYTES * R * C),
        pe_active=active,
    )
    return out, stats


# --------------------------------------------------------------------------
# X' feedback


def feedback_x_prime(t: SystolicTile) -> int:
    """Loop the resident results back into the ``d`` registers.

    In the first cycle ``prop_c`` is raised and every PE sends its ``c`` south;
    afterwards the south path just forwards. The bottom row wraps into the
    north-flowing ``d`` path and each PE latches the value that left it. The
    top row's value needs the full round trip, so the cost is ``2*rows - 1``
    cycles. Returns the cycle count.
    """
    if t.c_resident is None:
        raise SimulationError("no completed results resident in the tile")
    x = t.c_resident
    R, C = x.shape
    south_tag = np.full(R, -1)
    south_val = np.zeros((R, C), dtype=ACC_DTYPE)
    north_tag = np.full(R, -1)
    north_val = np.zeros((R, C), dtype=ACC_DTYPE)
    d = np.zeros((R, C), dtype=ACC_DTYPE)
    have = np.zeros(R, dtype=bool)
    trace = []
    cycle = 0
    while not have.all():
        prop_c = 1 if cycle == 0 else 0
        trace.append(prop_c)
        wrap_tag, wrap_val = south_tag[-1], south_val[-1].copy()
        new_st = np.full(R, -1)
        new_sv = np.zeros_like(south_val)
        if prop_c:
            new_st[1:] = np.arange(R - 1)
            new_sv[1:] = x[:-1]
            wrap_tag, wrap_val = R - 1, x[-1].copy()
        else:
            new_st[1:] = south_tag[:-1]
            new_sv[1:] = south_val[:-1]
        north_tag[:-1] = north_tag[1:]
        north_val[:-1] = north_val[1:]
        north_tag[-1] = wrap_tag
        north_val[-1] = wrap_val
        south_tag, south_val = new_st, new_sv
        hit = north_tag == np.arange(R)
        d[hit] = north_val[hit]
        have |= hit
        cycle += 1
        if cycle > 2 * R + 1:
            raise SimulationError("feedback path failed to deliver")
    t.d_regs = d
    t.c_resident = None
    t.prop_c_trace = trace
    return cycle


# --------------------------------------------------------------------------
# sparse


@dataclass
class StreamPlan:
    """How a sparse operand is streamed: per-row element keys plus the dense
    row presented at every key position."""

    n_rows: int
    n_cols: int
    key_rows: np.ndarray
    row_keys: list
    row_cols: list
    row_vals: list
    row_masks: list
    banks: int = 1

    @property
    def n_keys(self) -> int:
        return len(self.key_rows)

    @property
    def nnz(self) -> int:
        return sum(len(k) for k in self.row_keys)


def key_layout(multiplicity: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Dense presentation order for per-column repeat counts.

    Returns ``(offsets, key_rows)``: column ``c`` occupies keys
    ``offsets[c] .. offsets[c] + multiplicity[c] - 1``.
    """
    m = np.asarray(multiplicity, dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(m)[:-1]]).astype(np.int64)
    return offsets, np.repeat(np.arange(len(m)), m)


def stream_multiplicity(s, compact: bool = False) -> np.ndarray:
    """How many times each dense row must be presented for ``s``.

    A plain tile needs each column once; a packed tile needs column ``c`` as
    often as the most entries any packed row holds for ``c``. With
    ``compact=True`` rows no element needs are not streamed at all.
    """
    if hasattr(s, "native_multiplicity"):
        m = s.native_multiplicity()
    else:
        m = (np.bincount(s.cols, minlength=s.n_cols) > 0).astype(np.int64)
    return m if compact else np.maximum(m, 1)


def plan_for(s, multiplicity: np.ndarray | None = None, compact: bool = False) -> StreamPlan:
    if multiplicity is None:
        multiplicity = stream_multiplicity(s, compact)
    multiplicity = np.asarray(multiplicity, dtype=np.int64)
    if np.any(multiplicity < stream_multiplicity(s, compact=True)):
        raise ValueError("stream schedule presents a needed dense row too few times")
    if hasattr(s, "stream_plan"):
        return s.stream_plan(multiplicity)
    if not isinstance(s, SparseTile):
        raise TypeError(f"cannot stream {type(s).__name__}")
    offsets, key_rows = key_layout(multiplicity)
    ptr = s.indptr()
    row_cols = [s.cols[ptr[i]:ptr[i + 1]] for i in range(s.n_rows)]
    return StreamPlan(
        s.n_rows, s.n_cols, key_rows,
        row_keys=[offsets[c] for c in row_cols],
        row_cols=row_cols,
        row_vals=[s.vals[ptr[i]:ptr[i + 1]] for i in range(s.n_rows)],
        row_masks=[np.zeros(len(c), dtype=np.int64) for c in row_cols],
    )


@dataclass
class SparseResult:
    """Raw drained accumulators: ``acc[bank, row, col]`` and match counts."""

    acc: np.ndarray
    count: np.ndarray
    stats: TileStats
    mode: Mode
    reduction: Reduction

    def values(self) -> np.ndarray:
        if self.mode is Mode.DIRECT and self.reduction is Reduction.MEAN:
            with np.errstate(invalid="ignore", divide="ignore"):
                v = self.acc / self.count[:, :, None].astype(ACC_DTYPE)
            return np.where(self.count[:, :, None] > 0, v, 0).astype(ACC_DTYPE)
        return self.acc

    def drains(self) -> list[tuple[int, int, int, float]]:
        """``(packed_row, mask, col, val)`` for every accumulator that was updated."""
        vals = self.values()
        out = []
        for bank, row in zip(*np.nonzero(self.count)):
            for col in range(vals.shape[2]):
                out.append((int(row), int(bank), col, vals[bank, row, col]))
        return out


def _run_row_lanes(plan: StreamPlan, p: int, dstream: np.ndarray, mode: Mode,
                   reduction: Reduction, depth: int, debug: bool,
                   tracer: Tracer | None) -> ProcessingElement:
    C = dstream.shape[1]
    pe = ProcessingElement(mode, reduction, depth, plan.banks, lanes=C, debug=debug)
    keys, cols = plan.row_keys[p], plan.row_cols[p]
    vals, masks = plan.row_vals[p], plan.row_masks[p]
    n = len(keys)
    ptr = 0
    tau = 0
    nk = plan.n_keys
    while tau < nk:
        if ptr >= n and tracer is None:
            # nothing left to inject: jump over cycles that cannot hit
            head = pe.fifo.head_entry()
            if head is None:
                break
            if head[0] > tau:
                pe.b_row = tau = int(head[0])
        elem = None
        if ptr < n:
            elem = SparseElem(p, int(cols[ptr]), float(vals[ptr]), int(masks[ptr]), int(keys[ptr]))
        _, _, stall = pe.cycle(elem, (tau, dstream[tau]))
        if tracer is not None:
            ev, ops = pe.last_event
            for j in range(C):
                tracer.emit(tau + p + j, p, j, ev, ops)
        if elem is not None and not stall:
            ptr += 1
        tau += 1
    if ptr < n:
        raise SimulationError(f"row {p}: {n - ptr} sparse elements never entered the array")
    if len(pe.fifo):
        raise SimulationError(f"row {p}: FIFO_CAM not empty at end of pass")
    return pe


def _run_grid(plan: StreamPlan, dstream: np.ndarray, mode: Mode, reduction: Reduction,
              depth: int, debug: bool, tracer: Tracer | None):
    """Literal per-PE simulation; every PE is a scalar ``ProcessingElement``."""
    R, C = plan.n_rows, dstream.shape[1]
    nk = plan.n_keys
    grid = [[ProcessingElement(mode, reduction, depth, plan.banks, debug=debug)
             for _ in range(C)] for _ in range(R)]
    a_wire: list[list[SparseElem | None]] = [[None] * C for _ in range(R)]
    ptr = [0] * R
    consumed = np.zeros((R, C), dtype=np.int64)
    cycle = 0
    while not np.all(consumed == nk):
        nxt: list[list[SparseElem | None]] = [[None] * (C + 1) for _ in range(R)]
        for p in range(R):
            keys = plan.row_keys[p]
            for j in range(C):
                q = cycle - p - j
                if q < 0 or q >= nk:
                    continue
                if j == 0:
                    elem = None
                    if ptr[p] < len(keys):
                        k = ptr[p]
                        elem = SparseElem(p, int(plan.row_cols[p][k]), float(plan.row_vals[p][k]),
                                          int(plan.row_masks[p][k]), int(keys[k]))
                else:
                    elem = a_wire[p][j]
                pe = grid[p][j]
                a_out, _, stall = pe.cycle(elem, (q, dstream[q, j]), b_col=j)
                if stall and j > 0:
                    raise SimulationError(f"interior PE ({p},{j}) stalled")
                if j == 0 and elem is not None and not stall:
                    ptr[p] += 1
                nxt[p][j + 1] = a_out
                consumed[p, j] += 1
                if tracer is not None:
                    tracer.emit(cycle, p, j, *pe.last_event)
        a_wire = [row[:C] for row in nxt]
        cycle += 1
        if cycle > nk + R + C + 1:
            raise SimulationError("sparse pass failed to terminate")
    return grid, cycle


def run_sparse(t: SystolicTile, s, d=None, mode: Mode = Mode.WEIGHTED,
               reduction: Reduction = Reduction.ADD, *, multiplicity=None, compact: bool = False,
               exhaustive: bool = False, tracer: Tracer | None = None) -> SparseResult:
    """Simulate one sparse pass and return raw per-bank accumulators.

    ``multiplicity`` imposes a dense stream schedule (e.g. the common schedule
    of a chain); otherwise the operand's own schedule is used.
    """
    if mode is Mode.DENSE:
        raise ValueError("use tile_run_dense for dense operands")
    plan = plan_for(s, multiplicity, compact)
    resident = d is None
    if resident:
        if t.d_regs is None:
            raise SimulationError("no fed-back operand in the d registers")
        d = t.d_regs
    d = as_dense(d, "d")
    if d.shape[0] != plan.n_cols:
        raise ShapeError(f"sparse operand has {plan.n_cols} columns but dense has {d.shape[0]} rows")
    R, C = plan.n_rows, d.shape[1]
    t._check_fit(R, C)
    dstream = np.ascontiguousarray(d[plan.key_rows])
    banks = plan.banks

    acc = np.zeros((banks, R, C), dtype=ACC_DTYPE)
    count = np.zeros((banks, R), dtype=np.int64)
    active = np.zeros((R, C), dtype=np.int64)
    mults = updates = stalls = high = searches = checks = 0

    if exhaustive:
        grid, compute = _run_grid(plan, dstream, mode, reduction, t.fifo_depth, t.debug, tracer)
        for p in range(R):
            for j in range(C):
                pe = grid[p][j]
                for b in range(banks):
                    acc[b, p, j] = pe.acc[b]
                    count[b, p] = pe.count[b]
                active[p, j] = pe.updates
                mults += pe.multiplies
                updates += pe.updates
                stalls += pe.stalls
                high = max(high, pe.fifo.high_water)
                searches += pe.fifo.calls
                checks += pe.fifo.checks
    else:
        for p in range(R):
            pe = _run_row_lanes(plan, p, dstream, mode, reduction, t.fifo_depth, t.debug, tracer)
            for b in range(banks):
                acc[b, p] = pe.acc[b]
                count[b, p] = pe.count[b]
            active[p] = pe.updates
            mults += pe.multiplies * C
            updates += pe.updates * C
            stalls += pe.stalls
            high = max(high, pe.fifo.high_water)
            searches += pe.fifo.calls
            checks += pe.fifo.checks
        compute = sparse_tile_cycles(R, plan.n_keys, C, banks) - banks * R

    drain = banks * R
    out_rows = int(np.count_nonzero(count))
    stats = TileStats(
        cycles=compute + drain, compute_cycles=compute, drain_cycles=drain,
        multiplies=mults, updates=updates, stall_cycles=stalls, fifo_high_water=high,
        rows_used=R, cols_used=C, grid_rows=t.rows, grid_cols=t.cols,
        scratchpad_bytes=(SPARSE_ENTRY_BYTES * plan.nnz
                          + (0 if resident else INPUT_BYTES * plan.n_cols * C)
                          + OUTPUT_BYTES * out_rows * C),
        cam_searches=searches, cam_checks=checks, pe_active=active,
    )
    return SparseResult(acc, count, stats, mode, reduction)


def tile_run_spmm(t: SystolicTile, s, d=None, mode: Mode = Mode.WEIGHTED,
                  reduction: Reduction = Reduction.ADD, *, compact: bool = False,
                  exhaustive: bool = False, tracer: Tracer | None = None) -> tuple[list, TileStats]:
    """Sparse x dense (or direct aggregation) on one tile.

    For a :class:`SparseTile` returns ``(row, col, val)`` triples for every
    output row that received at least one match. For a packed tile returns the
    raw ``(packed_row, mask, col, val)`` drains; see ``packing.reorder_results``.
    """
    res = run_sparse(t, s, d, mode, reduction, compact=compact, exhaustive=exhaustive, tracer=tracer)
    drains = res.drains()
    if isinstance(s, SparseTile):
        return [(r, c, v) for r, _, c, v in drains], res.stats
    return drains, res.stats


def assemble_triples(triples, n_rows: int, n_cols: int) -> np.ndarray:
    out = np.zeros((n_rows, n_cols), dtype=ACC_DTYPE)
    for r, c, v in triples:
        out[r, c] = v
    return out
