"""Cycle-level simulator of a hybrid dense/sparse systolic GNN accelerator."""

from .config import EngineConfig
from .datasets import gen_powerlaw, load_dataset
from .engine import Accelerator
from .gnn import (Graph, LayerSpec, gat_attention, gat_layer, gcn_layer, gcn_normalize, gin_layer,
                  run_inference, sage_layer)
from .harness import simulate
from .matrix import (BlockPartition, SparseTile, dense_matmul_oracle, partition_2x2, spmm_oracle,
                     to_coo)
from .packing import PackedTile, PackingPlan, greedy_pack, reorder_results, run_packed_spmm
from .pe import FifoCam, Mode, ProcessingElement, Reduction, find_and_skip, pe_cycle
from .report import SimReport, energy_estimate
from .scheduler import TileMap, map_aggregation, map_transformation
from .strassen import StrassenCluster, cluster_cycles, strassen_multiply, strassen_schedule
from .tile import SystolicTile, TileStats, feedback_x_prime, tile_run_dense, tile_run_spmm

__version__ = "0.1.0"

__all__ = [
    "Accelerator", "BlockPartition", "cluster_cycles", "dense_matmul_oracle", "energy_estimate",
    "EngineConfig", "feedback_x_prime", "FifoCam", "find_and_skip", "gat_attention", "gat_layer",
    "gcn_layer", "gcn_normalize", "gen_powerlaw", "gin_layer", "Graph", "greedy_pack", "LayerSpec",
    "load_dataset", "map_aggregation", "map_transformation", "Mode", "PackedTile", "PackingPlan",
    "partition_2x2", "pe_cycle", "ProcessingElement", "Reduction", "reorder_results",
    "run_inference", "run_packed_spmm", "sage_layer", "SimReport", "simulate", "SparseTile",
    "spmm_oracle", "strassen_multiply", "strassen_schedule", "StrassenCluster", "SystolicTile",
    "tile_run_dense", "tile_run_spmm", "TileMap", "TileStats", "to_coo",
]
