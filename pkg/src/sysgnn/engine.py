"""The simulated accelerator as seen by the GNN layers.

:class:`Accelerator` exposes the few operations the layers lower to and books
every counter into the current layer of a :class:`SimReport`.
"""

from __future__ import annotations

import numpy as np

from .config import EngineConfig
from .matrix import ACC_DTYPE, SparseTile, as_dense
from .pe import Mode, Reduction
from .report import LayerReport, PhaseStats, SimReport
from .scheduler import finish_mean, run_aggregation, run_transformation
from .tile import (INPUT_BYTES, OUTPUT_BYTES, SPARSE_ENTRY_BYTES, SystolicTile, feedback_x_prime,
                   run_sparse, tile_run_dense)

HBM_SPARSE_BYTES = SPARSE_ENTRY_BYTES


class Accelerator:
    def __init__(self, cfg: EngineConfig | None = None, seed: int | None = None):
        self.cfg = cfg or EngineConfig()
        self.report = SimReport(config=self.cfg.to_dict(), seed=seed)
        self.layer: LayerReport | None = None
        self.phase = "setup"

    # bookkeeping ----------------------------------------------------------

    def begin_layer(self, index: int, model: str) -> None:
        self.layer = LayerReport(index, model)
        self.report.layers.append(self.layer)

    def _book(self, phase: str, st: PhaseStats) -> None:
        if self.layer is None:
            self.begin_layer(len(self.report.layers), "adhoc")
        self.layer.phases[phase] = self.layer.phases[phase].add(st)

    def hbm(self, phase: str, nbytes: int) -> None:
        self._book(phase, PhaseStats(hbm_bytes=int(nbytes)))

    def hbm_dense_in(self, phase: str, m: np.ndarray) -> None:
        self.hbm(phase, INPUT_BYTES * m.size)

    def hbm_dense_out(self, phase: str, m: np.ndarray) -> None:
        self.hbm(phase, OUTPUT_BYTES * m.size)

    def hbm_sparse_in(self, phase: str, s: SparseTile) -> None:
        self.hbm(phase, HBM_SPARSE_BYTES * s.nnz)

    # operations -----------------------------------------------------------

    def gemm(self, x, w) -> np.ndarray:
        """Transformation: dense ``x @ w`` on the cluster(s)."""
        self.phase = "transformation"
        out, st = run_transformation(x, w, self.cfg)
        self._book("transformation", st)
        return out

    def spmm(self, s: SparseTile, x) -> np.ndarray:
        """Aggregation: weighted sparse x dense."""
        self.phase = "aggregation"
        out, _, st = run_aggregation(s, x, self.cfg, Mode.WEIGHTED, Reduction.ADD)
        self._book("aggregation", st)
        return out

    def aggregate(self, s: SparseTile, x, reduction: Reduction) -> np.ndarray:
        """Aggregation: pattern-only reduction of ``x`` rows over the stored entries."""
        self.phase = "aggregation"
        vals, counts, st = run_aggregation(s, x, self.cfg, Mode.DIRECT, reduction)
        self._book("aggregation", st)
        if reduction is Reduction.MEAN:
            vals = finish_mean(vals, counts)
        return vals

    def gemm_then_spmm_resident(self, x, w, s: SparseTile) -> tuple[np.ndarray, np.ndarray]:
        """``s @ (x @ w)`` on one tile, handing ``x @ w`` over through the feedback path.

        Only valid when everything fits a single tile.
        """
        x = as_dense(x, "x")
        w = as_dense(w, "w")
        R, C = self.cfg.tile_rows, self.cfg.tile_cols
        if x.shape[0] > R or w.shape[1] > C or s.n_rows > R:
            raise ValueError("operands do not fit one tile")
        t = SystolicTile(R, C, self.cfg.fifo_cam_depth)
        self.phase = "transformation"
        xw, ts = tile_run_dense(t, x, w, keep_resident=True)
        self._book("transformation", PhaseStats(
            cycles=ts.cycles, macs=ts.multiplies, updates=ts.updates, pe_cycles=ts.pe_cycles,
            scratchpad_bytes=ts.scratchpad_bytes, passes=1))
        resident = t.c_resident.copy()
        self.phase = "aggregation"
        fb = feedback_x_prime(t)
        res = run_sparse(t, s, None, Mode.WEIGHTED, Reduction.ADD, compact=self.cfg.compact_stream)
        st = res.stats
        cycles = fb + st.cycles
        self._book("aggregation", PhaseStats(
            cycles=cycles, macs=st.multiplies, adds=st.updates, updates=st.updates,
            stall_cycles=st.stall_cycles, pe_cycles=R * C * cycles,
            scratchpad_bytes=st.scratchpad_bytes, hops=2 * resident.size, passes=1))
        out = np.zeros((s.n_rows, w.shape[1]), dtype=ACC_DTYPE)
        hit = res.count[0] > 0
        out[hit] = res.acc[0][hit]
        return resident, out

    def postprocess(self, entries: int, adds: int = 0) -> None:
        """Scalar post-processing unit (LeakyReLU, exp, softmax normalization)."""
        self.phase = "postprocess"
        self._book("postprocess", PhaseStats(cycles=entries * self.cfg.softmax_cycles_per_entry, adds=adds))

    def host_adds(self, phase: str, n: int) -> None:
        self._book(phase, PhaseStats(adds=int(n)))
