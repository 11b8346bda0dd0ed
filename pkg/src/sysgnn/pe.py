"""Hybrid dense/sparse processing element with a searchable FIFO (FIFO_CAM).

A PE works in one of three modes:

* ``DENSE``: plain output-stationary MAC, the FIFO is bypassed;
* ``WEIGHTED``: sparse x dense, multiply the matched sparse value with the
  dense operand and accumulate;
* ``DIRECT``: pattern-only aggregation, fold the dense operand into the
  accumulator with a reduction (add/min/max/mean) and never use the multiplier.

Sparse elements carry a *key*: the position of the dense row they need inside
the dense stream. For a plain sparse tile the key is the column index; packed
tiles remap columns that several sources share (see ``packing``).

The accumulator and the dense operand may be numpy vectors instead of scalars.
A vector PE stands for a whole row of PEs that see the same sparse stream
(``tile.tile_run_spmm`` relies on this).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

ACC = np.float32


class SimulationError(RuntimeError):
    """Internal invariant of the cycle model was violated."""


class Mode(enum.Enum):
    DENSE = "dense"
    WEIGHTED = "weighted"
    DIRECT = "direct"


class Reduction(enum.Enum):
    ADD = "add"
    MIN = "min"
    MAX = "max"
    MEAN = "mean"


@dataclass(frozen=True)
class SparseElem:
    row: int
    col: int
    val: float
    mask: int = 0
    key: int | None = None

    @property
    def match_key(self) -> int:
        return self.col if self.key is None else self.key


class FifoCam:
    """Circular FIFO of ``(index, value, mask)`` with a parallel index search.

    Indices must be pushed in strictly increasing order. With ``debug=True`` a
    plain Python list shadows the circular buffer and every search is checked
    against a linear scan of it.
    """

    def __init__(self, capacity: int = 4, debug: bool = False):
        if capacity < 1:
            raise ValueError("FIFO_CAM capacity must be positive")
        self.capacity = capacity
        self.fi = [0] * capacity
        self.fv = [0.0] * capacity
        self.fm = [0] * capacity
        self.head = 0
        self.size = 0
        self.high_water = 0
        self.debug = debug
        self.shadow: list[tuple[int, float, int]] = []
        self.calls = 0
        self.checks = 0

    def __len__(self) -> int:
        return self.size

    def full(self) -> bool:
        return self.size == self.capacity

    def entries(self) -> list[tuple[int, float, int]]:
        out = []
        for n in range(self.size):
            p = (self.head + n) % self.capacity
            out.append((self.fi[p], self.fv[p], self.fm[p]))
        return out

    def last_index(self) -> int | None:
        if not self.size:
            return None
        return self.fi[(self.head + self.size - 1) % self.capacity]

    def head_entry(self) -> tuple[int, float, int] | None:
        if not self.size:
            return None
        return self.fi[self.head], self.fv[self.head], self.fm[self.head]

    def push(self, idx: int, val, mask: int = 0) -> None:
        if self.full():
            raise OverflowError("FIFO_CAM overflow")
        last = self.last_index()
        if last is not None and idx <= last:
            raise ValueError(f"FIFO_CAM indices must increase: {idx} after {last}")
        p = (self.head + self.size) % self.capacity
        self.fi[p], self.fv[p], self.fm[p] = idx, val, mask
        self.size += 1
        self.high_water = max(self.high_water, self.size)
        if self.debug:
            self.shadow.append((idx, val, mask))

    def pop_head(self) -> None:
        if not self.size:
            raise IndexError("pop from empty FIFO_CAM")
        self.head = (self.head + 1) % self.capacity
        self.size -= 1
        if self.debug:
            self.shadow.pop(0)

    def purge(self, idx: int) -> int:
        """Expel every entry whose index is ``<= idx``; returns how many left."""
        n = 0
        while self.size and self.fi[self.head] <= idx:
            self.pop_head()
            n += 1
        return n


def find_and_skip(f: FifoCam, idx: int) -> tuple[bool, object]:
    """Locate ``idx`` and expel every stored index below it.

    All slots are compared at once: a slot is masked off when it is empty or
    holds an index ``< idx``; the first surviving slot (leading-zero detection
    in FIFO order) becomes the new head.
    """
    f.calls += 1
    if f.debug:
        # independent linear scan over the shadow list
        ref = [e for e in f.shadow if e[0] >= idx]
        ref_found = bool(ref) and ref[0][0] == idx

    cap = f.capacity
    live = [False] * cap
    for n in range(f.size):
        live[(f.head + n) % cap] = True
    mask = [live[i] and f.fi[i] >= idx for i in range(cap)]

    expelled = f.size
    for n in range(f.size):
        if mask[(f.head + n) % cap]:
            expelled = n
            break
    f.head = (f.head + expelled) % cap
    f.size -= expelled
    if f.size == 0:
        f.head = 0

    found = f.size > 0 and f.fi[f.head] == idx
    val = f.fv[f.head] if found else None

    if f.debug:
        if ref != f.entries() or ref_found != found or (found and ref[0][1] != val):
            raise SimulationError(
                f"Find&Skip mismatch for idx={idx}: cam={f.entries()} scan={ref}")
        f.shadow = ref
        f.checks += 1
    return found, val


class ProcessingElement:
    """One PE of the hybrid systolic array.

    ``banks`` accumulators are kept; the mask bit of a sparse element selects
    which one it updates (packed tiles use two or more). ``lanes`` turns the
    datapath into a vector of that many independent PEs sharing one control
    sequence.
    """

    def __init__(self, mode: Mode = Mode.DENSE, reduction: Reduction = Reduction.ADD,
                 fifo_depth: int = 4, banks: int = 1, lanes: int | None = None,
                 debug: bool = False):
        self.mode = mode
        self.reduction = reduction
        self.fifo = FifoCam(fifo_depth, debug)
        self.banks = banks
        self.lanes = lanes
        self.acc = [self._zero() for _ in range(banks)]
        self.count = [0] * banks
        self.b_row = 0
        self.a_buf = ACC(0)
        self.b_buf = ACC(0)
        self.a_row: int | None = None
        self.c_h_idx: int | None = None
        self.c_v_idx: int | None = None
        self.d_reg = ACC(0)
        self.prop_c = 0
        self.multiplies = 0
        self.updates = 0
        self.stalls = 0
        self.last_event = ("idle", "")

    def _zero(self):
        if self.lanes is None:
            return ACC(0)
        return np.zeros(self.lanes, dtype=ACC)

    @property
    def c(self):
        return self.acc[0]

    def result(self, bank: int = 0):
        """Accumulator value as it leaves the PE during drain (``None`` if never updated)."""
        if self.mode is Mode.DENSE:
            return self.acc[bank]
        if self.count[bank] == 0:
            return None
        if self.mode is Mode.DIRECT and self.reduction is Reduction.MEAN:
            return self.acc[bank] / ACC(self.count[bank])
        return self.acc[bank]

    def _update(self, bank: int) -> None:
        a, b = self.a_buf, self.b_buf
        if self.mode is Mode.DIRECT:
            red = self.reduction
            if self.count[bank] == 0 and red in (Reduction.MIN, Reduction.MAX):
                self.acc[bank] = b + self._zero()
            elif red in (Reduction.ADD, Reduction.MEAN):
                self.acc[bank] = self.acc[bank] + b
            elif red is Reduction.MIN:
                self.acc[bank] = np.minimum(self.acc[bank], b)
            else:
                self.acc[bank] = np.maximum(self.acc[bank], b)
        else:
            self.acc[bank] = self.acc[bank] + a * b
            self.multiplies += 1
        self.count[bank] += 1
        self.updates += 1

    def cycle(self, sparse_in: SparseElem | None, dense_in: tuple[int, object],
              b_col: int = 0) -> tuple[SparseElem | None, tuple[int, object], bool]:
        """Advance one clock. Returns ``(a_out, b_out, stall)``.

        ``stall`` means the incoming sparse element could not be buffered and
        was not consumed; the sender must present it again next cycle.
        """
        b_row_in, b_val = dense_in
        if self.mode is Mode.DENSE:
            if sparse_in is None:
                self.last_event = ("bypass", f"b_row={b_row_in}")
                self.b_row += 1
                return None, dense_in, False
            self.a_buf, self.b_buf = ACC(sparse_in.val), b_val
            self._update(0)
            self.last_event = ("mac", f"k={b_row_in} a={sparse_in.val!r}")
            self.b_row += 1
            return sparse_in, dense_in, False

        if b_row_in != self.b_row:
            raise SimulationError(f"dense stream out of step: got row {b_row_in}, counter {self.b_row}")
        found = False
        stall = False
        bank = 0
        event = "bypass"
        if sparse_in is not None:
            self.a_row = sparse_in.row
        if sparse_in is not None and sparse_in.match_key == self.b_row:
            self.a_buf = ACC(sparse_in.val)
            bank = sparse_in.mask
            found = True
            self.fifo.purge(self.b_row)
            event = "match"
        else:
            hit, val = find_and_skip(self.fifo, self.b_row)
            if hit:
                bank = self.fifo.head_entry()[2]
                self.fifo.pop_head()
                self.a_buf = ACC(val)
                found = True
                event = "cam_hit"
            if sparse_in is not None:
                if sparse_in.match_key < self.b_row:
                    raise SimulationError(
                        f"sparse element key {sparse_in.match_key} arrived after dense row {self.b_row}")
                if self.fifo.full():
                    stall = True
                    self.stalls += 1
                    event = "stall" if not found else "cam_hit+stall"
                else:
                    self.fifo.push(sparse_in.match_key, sparse_in.val, sparse_in.mask)
                    if not found:
                        event = "push"
        self.b_buf = b_val
        if found:
            self._update(bank)
            self.c_h_idx, self.c_v_idx = self.a_row, b_col
        self.last_event = (event, f"b_row={self.b_row} fifo={len(self.fifo)}")
        self.b_row += 1
        a_out = sparse_in if (sparse_in is not None and not stall) else None
        return a_out, dense_in, stall


def pe_cycle(pe: ProcessingElement, sparse_in, dense_in, b_col: int = 0):
    return pe.cycle(sparse_in, dense_in, b_col)
