"""Command-line entry point."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import EngineConfig
from .datasets import gen_powerlaw, load_dataset, write_edge_list
from .gnn import LayerError, load_model
from .harness import simulate, sweep, sweep_json
from .matrix import dense_matmul_oracle, spmm_oracle
from .mmio import read_dense_csv, read_mtx, write_dense_csv
from .packing import greedy_pack


def _on_off(v: str) -> bool:
    if v not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return v == "on"


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sysgnn", description="Cycle-level hybrid systolic GNN accelerator simulator")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("simulate", help="run a model on a graph and write a report")
    s.add_argument("--config", help="engine config JSON")
    s.add_argument("--graph", required=True, help="Matrix Market file or 0-based edge list")
    s.add_argument("--features", help="feature CSV (first line 'rows,cols')")
    s.add_argument("--model", required=True, help="model spec JSON")
    s.add_argument("--report", required=True, help="output report JSON")
    s.add_argument("--csv", help="also write a per-layer/phase CSV table")
    s.add_argument("--strassen", type=_on_off)
    s.add_argument("--packing", type=_on_off)
    s.add_argument("--alpha", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trace", help="write a per-PE event trace of a single tile pass")
    s.add_argument("--directed", action="store_true", help="do not symmetrize the edge list")

    k = sub.add_parser("pack", help="greedy packing plan for a set of tiles")
    k.add_argument("--tiles", nargs="+", required=True, help="Matrix Market tiles")
    k.add_argument("--alpha", type=float, default=0.45)
    k.add_argument("--width", type=int, default=2)
    k.add_argument("--sparsity", choices=("occupancy", "zeros"), default="occupancy")
    k.add_argument("--plan", required=True, help="output plan JSON")

    g = sub.add_parser("gen", help="generate a power-law graph")
    g.add_argument("--nodes", type=int, required=True)
    g.add_argument("--exponent", type=float, default=2.5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output edge list")
    g.add_argument("--features", help="also write seeded features to this CSV")
    g.add_argument("--feature-dim", type=int, default=16)

    o = sub.add_parser("oracle", help="reference product of two matrices")
    o.add_argument("--a", required=True, help="CSV, or .mtx for a sparse left operand")
    o.add_argument("--b", required=True, help="CSV")
    o.add_argument("--out", help="output CSV (default stdout)")

    w = sub.add_parser("sweep", help="run a grid of configurations")
    w.add_argument("--grid", required=True, help="grid JSON")
    w.add_argument("--out", help="output JSON (default stdout)")
    w.add_argument("--threads", type=int, default=1)
    return p


def _trace_one_pass(graph, path: str, cfg: EngineConfig) -> None:
    from .gnn import gcn_normalize
    from .scheduler import tile_grid
    from .tile import SystolicTile, Tracer, run_sparse

    tiles = [t for row in tile_grid(gcn_normalize(graph), cfg.tile_rows) for t in row if t.nnz]
    tr = Tracer()
    if tiles:
        d = np.ones((cfg.tile_rows, min(cfg.tile_cols, graph.feature_dim)), dtype=np.float32)
        run_sparse(SystolicTile(cfg.tile_rows, cfg.tile_cols, cfg.fifo_cam_depth), tiles[0], d,
                   compact=cfg.compact_stream, tracer=tr)
    tr.write(path)


def cmd_simulate(args) -> int:
    cfg = EngineConfig.from_json(args.config) if args.config else EngineConfig()
    over = {}
    if args.strassen is not None:
        over["strassen"] = args.strassen
    if args.packing is not None:
        over["packing"] = args.packing
    if args.alpha is not None:
        over["alpha"] = args.alpha
    if over:
        cfg = cfg.replace(**over)
    graph = load_dataset(args.graph, args.features, symmetrize=not args.directed, seed=args.seed)
    layers = load_model(args.model, graph.feature_dim, args.seed)
    try:
        report = simulate(cfg, graph, layers, args.seed)
    except LayerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    Path(args.report).write_text(report.to_json() + "\n")
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
    if args.trace:
        _trace_one_pass(graph, args.trace, cfg)
    t = report.totals
    print(f"cycles={t.cycles} macs={t.macs} utilization={t.utilization:.4f} "
          f"energy_pj={report.energy()['total_pj']:.1f}")
    return 0


def cmd_pack(args) -> int:
    tiles = [read_mtx(p) for p in args.tiles]
    plan, _ = greedy_pack(tiles, args.alpha, width=args.width, sparsity=args.sparsity)
    Path(args.plan).write_text(plan.to_json() + "\n")
    print(f"pairs={len(plan.pairs)} leftovers={len(plan.leftovers)} dropped={len(plan.dropped)}")
    return 0


def cmd_gen(args) -> int:
    g = gen_powerlaw(args.nodes, args.exponent, args.seed, feature_dim=args.feature_dim)
    write_edge_list(args.out, g)
    if args.features:
        write_dense_csv(args.features, g.features)
    print(f"nodes={g.n_nodes} edges={g.n_edges}")
    return 0


def cmd_oracle(args) -> int:
    b = read_dense_csv(args.b)
    if args.a.endswith(".mtx"):
        out = spmm_oracle(read_mtx(args.a), b)
    else:
        out = dense_matmul_oracle(read_dense_csv(args.a), b)
    if args.out:
        write_dense_csv(args.out, out)
    else:
        print(f"{out.shape[0]},{out.shape[1]}")
        for row in out:
            print(",".join(repr(float(x)) for x in row))
    return 0


def cmd_sweep(args) -> int:
    with open(args.grid) as fh:
        grid = json.load(fh)
    text = sweep_json(sweep(grid, args.threads))
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    handler = {"simulate": cmd_simulate, "pack": cmd_pack, "gen": cmd_gen,
               "oracle": cmd_oracle, "sweep": cmd_sweep}[args.cmd]
    try:
        return handler(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
