"""Engine configuration."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

# Per-operation energies are modeled estimates, only the HBM figure is a
# published number (HBM2, pJ per bit).
DEFAULT_ENERGY = {
    "mac_pj": 1.0,
    "add_pj": 0.4,
    "scratchpad_byte_pj": 1.2,
    "hop_pj": 0.1,
    "hbm_pj_per_bit": 3.9,
}
MODELED_CONSTANTS = ("mac_pj", "add_pj", "scratchpad_byte_pj", "hop_pj")


@dataclass
class EngineConfig:
    tile_rows: int = 32
    tile_cols: int = 32
    tiles_per_cluster: int = 4
    clusters: int = 2
    fifo_cam_depth: int = 4
    scratchpad_kib: int = 512
    scratchpad_banks: int = 4
    strassen: bool = True
    packing: bool = True
    alpha: float = 0.45
    pack_width: int = 2
    sparsity_reading: str = "occupancy"
    compact_stream: bool = True
    feedback: bool = False
    exhaustive: bool = False
    softmax_cycles_per_entry: int = 1
    traversal: str = "row-major"
    verify: bool = True
    tolerance: float = 1e-4
    energy: dict = field(default_factory=lambda: dict(DEFAULT_ENERGY))

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("tile_rows", "tile_cols", "tiles_per_cluster", "clusters", "fifo_cam_depth",
                     "scratchpad_kib", "scratchpad_banks", "pack_width", "softmax_cycles_per_entry"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if self.strassen and self.tiles_per_cluster != 4:
            raise ValueError("the Strassen schedule needs exactly 4 tiles per cluster")
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 2 <= self.pack_width <= 4:
            raise ValueError("pack_width must be 2, 3 or 4")
        if self.sparsity_reading not in ("occupancy", "zeros"):
            raise ValueError(f"unknown sparsity reading {self.sparsity_reading!r}")
        if self.traversal != "row-major":
            raise ValueError("only row-major traversal is implemented")

    @property
    def total_tiles(self) -> int:
        return self.tiles_per_cluster * self.clusters

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EngineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "energy" in d:
            d["energy"] = {**DEFAULT_ENERGY, **d["energy"]}
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "EngineConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def replace(self, **kw) -> "EngineConfig":
        return EngineConfig.from_dict({**self.to_dict(), **kw})
