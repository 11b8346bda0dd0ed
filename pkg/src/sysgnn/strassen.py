"""One-level Strassen GEMM on a ring of four systolic tiles.

The seven block products are split into a left and a right group. Operand
sums (``S0..S9``) are produced by 1-D adder arrays on the tile edges one cycle
ahead of the MACs, so no ``S`` or ``M`` block is ever written to the
scratchpad. Each tile owns one quadrant of ``C``:

* round 1 (right group): T0 computes M6, T1 M4, T2 M1, T3 M2;
* round 2 (left group): T0 computes M0, T2 M3, T3 M5.

Both rounds stream back-to-back through the same array; when a PE finishes a
product it commits it into its ``C`` quadrant (the first product assigns, the
second adds) and, when another quadrant needs it, into a skid buffer. Two
forwarding stages then exchange the skid contents across the ring, and a final
cycle adds the last receipts.
"""

from __future__ import annotations

import operator
from dataclasses import asdict, dataclass, field
from functools import reduce

import numpy as np

from .matrix import ACC_DTYPE, ShapeError, as_dense, assemble_2x2, partition_2x2
from .pe import SimulationError
from .tile import (INPUT_BYTES, OUTPUT_BYTES, DenseGrid, SystolicTile, dense_tile_cycles,
                   drain_south, skewed_edges, tile_run_dense)

ADDER_LEAD = 1
FORWARD_STAGES = 2


@dataclass(frozen=True)
class BlockSum:
    """``name = Σ sign * operand`` over input blocks (``A0``..``B3``)."""

    name: str
    terms: tuple[tuple[int, str], ...]


@dataclass(frozen=True)
class BlockProduct:
    name: str
    left: str
    right: str
    tile: int
    round: int


@dataclass(frozen=True)
class Accumulate:
    """``target (+|-)= source``; ``assign`` marks the first write of a quadrant.

    ``stage`` is 0 for a commit inside the producing tile, otherwise the
    forwarding stage that carries ``source`` to the tile owning ``target``.
    """

    target: str
    source: str
    sign: int = 1
    assign: bool = False
    stage: int = 0


@dataclass(frozen=True)
class StrassenSchedule:
    groups: dict

    @property
    def sums(self) -> list[BlockSum]:
        return self.groups["L1"] + self.groups["R1"]

    @property
    def products(self) -> list[BlockProduct]:
        return self.groups["L2"] + self.groups["R2"]

    @property
    def accumulations(self) -> list[Accumulate]:
        return [x for g in ("R2c", "L2c", "L3", "R3") for x in self.groups[g]]

    @property
    def block_mults(self) -> int:
        return len(self.products)

    @property
    def block_adds(self) -> int:
        adds = sum(len(s.terms) - 1 for s in self.sums)
        return adds + sum(1 for a in self.accumulations if not a.assign)

    def product(self, name: str) -> BlockProduct:
        return next(p for p in self.products if p.name == name)

    def owner(self, c_name: str) -> int:
        return int(c_name[1])

    def evaluate(self, a_blocks, b_blocks, mul=operator.mul):
        """Run the schedule on arbitrary block values (numbers, arrays, symbols).

        Returns ``(C0, C1, C2, C3)``.
        """
        env = {f"A{i}": a_blocks[i] for i in range(4)}
        env.update({f"B{i}": b_blocks[i] for i in range(4)})
        for s in self.sums:
            env[s.name] = reduce(operator.add, (sg * env[x] for sg, x in s.terms))
        for p in sorted(self.products, key=lambda p: p.round):
            env[p.name] = mul(env[p.left], env[p.right])
        for acc in self.accumulations:
            v = acc.sign * env[acc.source]
            env[acc.target] = v if acc.assign else env[acc.target] + v
        return tuple(env[f"C{i}"] for i in range(4))


def strassen_schedule() -> StrassenSchedule:
    s = BlockSum
    groups = {
        "L1": [s("S4", ((1, "B2"), (-1, "B0"))), s("S0", ((1, "A3"), (1, "A0"))),
               s("S1", ((1, "B0"), (1, "B3"))), s("S6", ((1, "A2"), (-1, "A0"))),
               s("S7", ((1, "B0"), (1, "B1")))],
        "R1": [s("S2", ((1, "A2"), (1, "A3"))), s("S8", ((1, "A1"), (-1, "A3"))),
               s("S9", ((1, "B2"), (1, "B3"))), s("S5", ((1, "A1"), (1, "A0"))),
               s("S3", ((1, "B1"), (-1, "B3")))],
        "L2": [BlockProduct("M0", "S0", "S1", tile=0, round=2),
               BlockProduct("M3", "A3", "S4", tile=2, round=2),
               BlockProduct("M5", "S6", "S7", tile=3, round=2)],
        "R2": [BlockProduct("M1", "S2", "B0", tile=2, round=1),
               BlockProduct("M2", "A0", "S3", tile=3, round=1),
               BlockProduct("M4", "S5", "B3", tile=1, round=1),
               BlockProduct("M6", "S8", "S9", tile=0, round=1)],
        # commits inside the producing tile
        "R2c": [Accumulate("C0", "M6", assign=True), Accumulate("C1", "M4", assign=True),
                Accumulate("C2", "M1", assign=True), Accumulate("C3", "M2", assign=True)],
        "L2c": [Accumulate("C0", "M0"), Accumulate("C2", "M3"), Accumulate("C3", "M5")],
        # cross-tile accumulations
        "L3": [Accumulate("C0", "M3", stage=1), Accumulate("C3", "M0", stage=1)],
        "R3": [Accumulate("C1", "M2", stage=1), Accumulate("C0", "M4", -1, stage=2),
               Accumulate("C3", "M1", -1, stage=2)],
    }
    return StrassenSchedule(groups)


@dataclass
class ClusterStats:
    block_mults: int = 0
    scalar_mults: int = 0
    adds: int = 0
    cycles: int = 0
    bytes_moved: int = 0
    forwards: int = 0
    block_adds: int = 0
    hops: int = 0
    m_bytes: int = 0
    active_pe_cycles: int = 0
    pe_cycles: int = 0
    stage_cycles: dict = field(default_factory=dict)

    @property
    def utilization(self) -> float:
        return self.active_pe_cycles / self.pe_cycles if self.pe_cycles else 0.0

    def to_dict(self) -> dict:
        return asdict(self)


class StrassenCluster:
    """Four tiles on a ring (T0 -> T1 -> T3 -> T2 -> T0) sharing centre skid buffers."""

    def __init__(self, tile_rows: int = 32, tile_cols: int = 32, fifo_depth: int = 4):
        self.tiles = [SystolicTile(tile_rows, tile_cols, fifo_depth) for _ in range(4)]
        self.skid: list[dict[str, np.ndarray]] = [{} for _ in range(4)]

    @property
    def tile_rows(self) -> int:
        return self.tiles[0].rows

    @property
    def tile_cols(self) -> int:
        return self.tiles[0].cols


def cluster_cycles(cluster_cfg, block_dim: int, k: int | None = None, n: int | None = None,
                   strassen: bool = True) -> int:
    """Closed-form cycles of one cluster invocation on ``block_dim``-row blocks.

    ``k`` and ``n`` default to ``block_dim`` (square blocks). With Strassen the
    busiest tile streams two products back-to-back.
    """
    m = block_dim
    k = m if k is None else k
    n = m if n is None else n
    if cluster_cfg is not None:
        rows = getattr(cluster_cfg, "tile_rows", m)
        cols = getattr(cluster_cfg, "tile_cols", n)
        if m > rows or n > cols:
            raise ShapeError(f"{m}x{n} blocks do not fit {rows}x{cols} tiles")
    if not strassen:
        return dense_tile_cycles(m, 2 * k, n)
    rounds = 2
    return ADDER_LEAD + (rounds * k + m + n - 2) + 1 + FORWARD_STAGES + 1 + m


def consolidated_cycles(block_dim: int, k: int | None = None, n: int | None = None) -> int:
    """One array with the PEs of all four tiles computing the whole product."""
    k = block_dim if k is None else k
    n = block_dim if n is None else n
    return dense_tile_cycles(2 * block_dim, 2 * k, 2 * n)


def strassen_multiply(cluster: StrassenCluster, a, b, schedule: StrassenSchedule | None = None
                      ) -> tuple[np.ndarray, ClusterStats]:
    """Compute ``a @ b`` on the cluster with the one-level Strassen schedule."""
    a = as_dense(a, "a")
    b = as_dense(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    sched = schedule or strassen_schedule()
    pa, pb = partition_2x2(a), partition_2x2(b)
    m = pa.block_rows
    n = pb.block_cols
    if m > cluster.tile_rows or n > cluster.tile_cols:
        raise ShapeError(f"{m}x{n} output blocks exceed {cluster.tile_rows}x{cluster.tile_cols} tiles; "
                         "split the product with the scheduler")

    stats = ClusterStats(block_mults=sched.block_mults, block_adds=sched.block_adds)
    env = {f"A{i}": pa.blocks[i] for i in range(4)}
    env.update({f"B{i}": pb.blocks[i] for i in range(4)})
    reads = set()
    for s in sched.sums:
        env[s.name] = reduce(operator.add, (ACC_DTYPE(sg) * env[x] for sg, x in s.terms)).astype(ACC_DTYPE)
        stats.adds += (len(s.terms) - 1) * env[s.name].size
        reads.update(x for _, x in s.terms)
    for p in sched.products:
        reads.update(x for x in (p.left, p.right) if x[0] in "AB")
    stats.bytes_moved += INPUT_BYTES * sum(env[x].size for x in reads)

    # per-tile operand streams: products concatenated along k in round order
    plans = []
    for t in range(4):
        prods = sorted((p for p in sched.products if p.tile == t), key=lambda p: p.round)
        a_stream = np.hstack([env[p.left] for p in prods])
        b_stream = np.vstack([env[p.right] for p in prods])
        bounds = np.cumsum([env[p.left].shape[1] for p in prods])
        plans.append((prods, a_stream, b_stream, bounds))

    local = {acc.source: acc for acc in sched.accumulations if acc.stage == 0}
    forwarded = {acc.source: acc for acc in sched.accumulations if acc.stage > 0}
    grids = [DenseGrid(m, n) for _ in range(4)]
    c_quad = [np.zeros((m, n), dtype=ACC_DTYPE) for _ in range(4)]
    for sk in cluster.skid:
        sk.clear()
    pending = [np.zeros((m, n), dtype=np.int64) - 1 for _ in range(4)]
    seg_done = [np.zeros((m, n), dtype=np.int64) for _ in range(4)]

    def commit(t: int) -> None:
        prods = plans[t][0]
        for seg, prod in enumerate(prods):
            mask = pending[t] == seg
            if not mask.any():
                continue
            acc = local[prod.name]
            val = grids[t].c[mask]
            if acc.assign:
                c_quad[t][mask] = val
            else:
                c_quad[t][mask] += val
                stats.adds += int(mask.sum())
            if prod.name in forwarded:
                buf = cluster.skid[t].setdefault(prod.name, np.zeros((m, n), dtype=ACC_DTYPE))
                buf[mask] = val
            grids[t].c[mask] = 0
            pending[t][mask] = -1
            seg_done[t][mask] += 1

    cycle = 0
    # adder arrays fill one cycle ahead of the first MAC
    cycle += ADDER_LEAD
    start = cycle
    total_segments = [len(p[0]) for p in plans]
    longest = max(p[1].shape[1] for p in plans)
    while not all(np.all(seg_done[t] == total_segments[t]) for t in range(4)):
        for t in range(4):
            commit(t)
            prods, a_stream, b_stream, bounds = plans[t]
            before = grids[t].done.copy()
            fire = grids[t].step(*skewed_edges(a_stream, b_stream, cycle - start))
            stats.scalar_mults += int(fire.sum())
            for seg, bound in enumerate(bounds):
                pending[t][fire & (before < bound) & (grids[t].done == bound)] = seg
        cycle += 1
        if cycle > start + longest + m + n + 1:
            raise SimulationError("cluster MAC phase failed to terminate")
    stats.stage_cycles["mac"] = cycle

    # forwarding across the ring; receipts are added one cycle after arrival
    received: list[tuple[int, Accumulate, np.ndarray]] = []
    for stage in range(1, FORWARD_STAGES + 1):
        for t, acc, val in received:
            c_quad[t] += acc.sign * val
            stats.adds += val.size
        received = []
        for acc in (x for x in sched.accumulations if x.stage == stage):
            src = sched.product(acc.source).tile
            val = cluster.skid[src].pop(acc.source)
            received.append((sched.owner(acc.target), acc, val))
            stats.forwards += 1
            stats.hops += val.size
        cycle += 1
    for t, acc, val in received:
        c_quad[t] += acc.sign * val
        stats.adds += val.size
    cycle += 1
    stats.stage_cycles["forward_add"] = cycle - stats.stage_cycles["mac"]
    if any(cluster.skid[t] for t in range(4)):
        raise SimulationError("undelivered products left in skid buffers")

    outs = []
    for t in range(4):
        out, drain = drain_south(c_quad[t])
        outs.append(out)
    cycle += drain
    stats.stage_cycles["drain"] = drain
    stats.cycles = cycle
    stats.bytes_moved += OUTPUT_BYTES * 4 * m * n
    stats.active_pe_cycles = stats.scalar_mults
    stats.pe_cycles = 4 * cluster.tile_rows * cluster.tile_cols * cycle
    return assemble_2x2(outs, pa.parent_shape[:1] + pb.parent_shape[1:]), stats


def blocked_multiply(cluster: StrassenCluster, a, b) -> tuple[np.ndarray, ClusterStats]:
    """Same partitioning with Strassen off: tile ``t`` computes quadrant ``t`` directly.

    Quadrant ``Ci = Ar0 @ B0c + Ar1 @ B1c`` streams as one pass with ``2k``
    operand columns, so eight block products are executed.
    """
    a = as_dense(a, "a")
    b = as_dense(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    pa, pb = partition_2x2(a), partition_2x2(b)
    m, n = pa.block_rows, pb.block_cols
    if m > cluster.tile_rows or n > cluster.tile_cols:
        raise ShapeError(f"{m}x{n} output blocks exceed {cluster.tile_rows}x{cluster.tile_cols} tiles; "
                         "split the product with the scheduler")
    A, B = pa.blocks, pb.blocks
    stats = ClusterStats(block_mults=8)
    outs = []
    for r, c in ((0, 0), (0, 1), (1, 0), (1, 1)):
        lhs = np.hstack([A[2 * r], A[2 * r + 1]])
        rhs = np.vstack([B[c], B[2 + c]])
        out, ts = tile_run_dense(cluster.tiles[2 * r + c], lhs, rhs)
        outs.append(out)
        stats.scalar_mults += ts.multiplies
        stats.cycles = max(stats.cycles, ts.cycles)
        stats.bytes_moved += ts.scratchpad_bytes
        stats.active_pe_cycles += ts.updates
    stats.pe_cycles = 4 * cluster.tile_rows * cluster.tile_cols * stats.cycles
    return assemble_2x2(outs, pa.parent_shape[:1] + pb.parent_shape[1:]), stats


def consolidated_multiply(a, b, rows: int = 64, cols: int = 64) -> tuple[np.ndarray, ClusterStats]:
    """``a @ b`` on one ``rows x cols`` array (the PEs of a whole cluster merged).

    Output panels of ``rows x cols`` run one after another with the full inner
    dimension streamed.
    """
    a = as_dense(a, "a")
    b = as_dense(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    t = SystolicTile(rows, cols)
    out = np.zeros((a.shape[0], b.shape[1]), dtype=ACC_DTYPE)
    stats = ClusterStats()
    for r0 in range(0, a.shape[0], rows):
        for c0 in range(0, b.shape[1], cols):
            y, ts = tile_run_dense(t, a[r0:r0 + rows], b[:, c0:c0 + cols])
            out[r0:r0 + rows, c0:c0 + cols] = y
            stats.cycles += ts.cycles
            stats.scalar_mults += ts.multiplies
            stats.active_pe_cycles += ts.updates
            stats.pe_cycles += rows * cols * ts.cycles
            stats.block_mults += 1
    return out, stats
