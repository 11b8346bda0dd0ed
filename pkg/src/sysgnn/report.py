"""Simulation counters, energy estimate and the report record."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .config import DEFAULT_ENERGY, MODELED_CONSTANTS

PHASES = ("transformation", "aggregation", "postprocess")


@dataclass
class PhaseStats:
    cycles: int = 0
    macs: int = 0
    adds: int = 0
    updates: int = 0
    stall_cycles: int = 0
    pe_cycles: int = 0
    scratchpad_bytes: int = 0
    hbm_bytes: int = 0
    hops: int = 0
    passes: int = 0

    @property
    def utilization(self) -> float:
        return self.updates / self.pe_cycles if self.pe_cycles else 0.0

    def add(self, other: "PhaseStats") -> "PhaseStats":
        """Counters of two phases run one after the other."""
        return PhaseStats(**{k: getattr(self, k) + getattr(other, k) for k in asdict(self)})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["utilization"] = self.utilization
        return d


def energy_estimate(counters: PhaseStats | dict, constants: dict | None = None) -> dict:
    """Energy in pJ from raw counters; every constant must be supplied."""
    c = DEFAULT_ENERGY if constants is None else constants
    for name in DEFAULT_ENERGY:
        if name not in c:
            raise KeyError(f"missing energy constant {name!r}")
    if isinstance(counters, PhaseStats):
        counters = asdict(counters)
    compute = counters["macs"] * c["mac_pj"] + counters["adds"] * c["add_pj"]
    hbm = counters["hbm_bytes"] * 8 * c["hbm_pj_per_bit"]
    memory = counters["scratchpad_bytes"] * c["scratchpad_byte_pj"] + hbm
    interconnect = counters["hops"] * c["hop_pj"]
    return {
        "compute_pj": compute,
        "memory_pj": memory,
        "hbm_pj": hbm,
        "interconnect_pj": interconnect,
        "total_pj": compute + memory + interconnect,
    }


@dataclass
class LayerReport:
    index: int
    model: str
    phases: dict = field(default_factory=lambda: {p: PhaseStats() for p in PHASES})

    @property
    def totals(self) -> PhaseStats:
        out = PhaseStats()
        for p in PHASES:
            out = out.add(self.phases[p])
        return out

    def to_dict(self, constants: dict) -> dict:
        return {
            "index": self.index,
            "model": self.model,
            "phases": {p: {**s.to_dict(), "energy": energy_estimate(s, constants)}
                       for p, s in self.phases.items()},
            "totals": {**self.totals.to_dict(), "energy": energy_estimate(self.totals, constants)},
        }


@dataclass
class SimReport:
    config: dict
    seed: int | None = None
    layers: list = field(default_factory=list)
    verification: dict = field(default_factory=dict)

    def phase_totals(self, phase: str) -> PhaseStats:
        out = PhaseStats()
        for layer in self.layers:
            out = out.add(layer.phases[phase])
        return out

    @property
    def totals(self) -> PhaseStats:
        out = PhaseStats()
        for layer in self.layers:
            out = out.add(layer.totals)
        return out

    def energy(self) -> dict:
        return energy_estimate(self.totals, self.config["energy"])

    def to_dict(self) -> dict:
        consts = self.config["energy"]
        return {
            "config": self.config,
            "seed": self.seed,
            "energy_constants": {"values": consts, "modeled": list(MODELED_CONSTANTS),
                                 "published": ["hbm_pj_per_bit"]},
            "layers": [layer.to_dict(consts) for layer in self.layers],
            "phases": {p: {**self.phase_totals(p).to_dict(),
                           "energy": energy_estimate(self.phase_totals(p), consts)} for p in PHASES},
            "totals": {**self.totals.to_dict(), "energy": self.energy()},
            "verification": self.verification,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_csv(self) -> str:
        cols = ["layer", "model", "phase", "cycles", "macs", "adds", "updates", "stall_cycles",
                "utilization", "scratchpad_bytes", "hbm_bytes", "hops", "passes", "energy_pj"]
        lines = [",".join(cols)]
        for layer in self.layers:
            for p in PHASES:
                s = layer.phases[p]
                e = energy_estimate(s, self.config["energy"])["total_pj"]
                lines.append(",".join(str(x) for x in (
                    layer.index, layer.model, p, s.cycles, s.macs, s.adds, s.updates, s.stall_cycles,
                    repr(s.utilization), s.scratchpad_bytes, s.hbm_bytes, s.hops, s.passes, repr(e))))
        return "\n".join(lines) + "\n"
