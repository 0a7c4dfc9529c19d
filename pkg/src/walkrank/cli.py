"""Command-line surface: ingest a ledger, rank from a seed, apply incremental
updates, run convergence and sybil-resistance sweeps.

Every run writes exactly one JSON manifest echoing the full configuration,
RNG seeds, graph version, per-phase wall-clock timings, and any error norms,
so a run can be reproduced from its manifest alone. Exit codes are stable for
scripting: 0 success, 2 input-format fatal, 3 config fatal, 4 state fatal.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import ingest as ingest_mod
from . import sybil as sybil_mod
from .graph import (
    GraphError,
    InteractionGraph,
    NoSuchNodeError,
    dump_graph_csv,
    load_graph_csv,
)
from .ingest import IngestError
from .oracle import (
    EXACT_SOLVE_MAX_NODES,
    PowerIterConfig,
    RankVector,
    exact_solve,
    personalized_power_iteration,
)
from .synth import random_graph
from .walks import (
    CorpusError,
    SeedRemovedError,
    StaleCorpusError,
    WalkConfig,
    apply_deltas,
    dump_corpus,
    estimate,
    load_corpus,
    sample_corpus,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONFIG = 3
EXIT_STATE = 4


def _threads() -> int:
    raw = os.environ.get("WALKRANK_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _parse_range(text: str, default_step: int) -> list[int]:
    """``A..B`` or ``A..B..STEP`` (inclusive bounds) or a single integer."""
    parts = text.split("..")
    if len(parts) == 1:
        return [int(parts[0])]
    if len(parts) == 2:
        lo, hi, step = int(parts[0]), int(parts[1]), default_step
    elif len(parts) == 3:
        lo, hi, step = int(parts[0]), int(parts[1]), int(parts[2])
    else:
        raise ValueError(f"cannot parse range {text!r}")
    if step < 1 or hi < lo:
        raise ValueError(f"cannot parse range {text!r}")
    return list(range(lo, hi + 1, step))


def _parse_floats(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok]


def _parse_ints(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok]


def _spawn_seed(master: int, *key: int) -> int:
    ss = np.random.SeedSequence(master & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


class _Phases:
    """Wall-clock timings per named phase."""

    def __init__(self) -> None:
        self.timings: dict[str, float] = {}

    def run(self, name: str, fn):
        start = time.perf_counter()
        result = fn()
        self.timings[name] = time.perf_counter() - start
        return result


def _write_manifest(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _oracle_ranks(
    kind: str, g: InteractionGraph, c: float, seed: int
) -> tuple[RankVector | None, dict]:
    if kind == "none":
        return None, {}
    if kind == "exact":
        return exact_solve(g, c, seed), {"oracle": "exact"}
    result = personalized_power_iteration(
        g, PowerIterConfig(reset_probability=c, seed_node=seed)
    )
    return result.ranks, {
        "oracle": "power",
        "oracle_iterations": result.iterations,
        "oracle_converged": result.converged,
    }


# ---- ingest ---------------------------------------------------------------

def _cmd_ingest(args: argparse.Namespace) -> int:
    phases = _Phases()
    records = phases.run(
        "read_blocks", lambda: list(ingest_mod.read_blocks(args.input, args.format))
    )
    holdback = args.holdback_nodes or args.holdback_edges
    delta_rows = 0
    if holdback:
        if not args.delta_out:
            raise ValueError("--delta-out is required with holdback flags")
        initial, held = phases.run(
            "holdback_split",
            lambda: ingest_mod.holdback_split(
                records, args.holdback_nodes, args.holdback_edges,
                rng_seed=args.holdback_seed,
            ),
        )
    else:
        initial, held = records, []
    graph, report = phases.run("flatten", lambda: ingest_mod.flatten(initial))
    phases.run("write_graph", lambda: dump_graph_csv(graph, args.out))
    if holdback:
        rows = ingest_mod.aggregate_delta_flows(
            held, set(graph.labels().values())
        )
        delta_rows = len(rows)

        def write_delta() -> None:
            with open(args.delta_out, "w", encoding="utf-8", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["op", "node_a", "node_b", "delta_flow"])
                for op, a, b, flow in rows:
                    writer.writerow([op, a, b, f"{flow:.17g}" if op == "flow" else ""])

        phases.run("write_delta", write_delta)

    manifest = {
        "command": "ingest",
        "config": {
            "input": str(args.input),
            "format": args.format,
            "out": str(args.out),
            "holdback_nodes": args.holdback_nodes,
            "holdback_edges": args.holdback_edges,
            "holdback_seed": args.holdback_seed,
            "delta_out": str(args.delta_out) if args.delta_out else None,
        },
        "report": report.as_dict(),
        "graph_version": graph.version,
        "node_count": graph.node_count,
        "edge_count": graph.edge_count,
        "delta_rows": delta_rows,
        "timings": phases.timings,
        "outputs": [str(args.out)] + ([str(args.delta_out)] if holdback else []),
    }
    _write_manifest(Path(str(args.out) + ".manifest.json"), manifest)
    print(
        f"ingested {report.blocks_read} blocks"
        f" ({report.blocks_skipped} skipped) ->"
        f" {graph.node_count} nodes, {graph.edge_count} edges"
    )
    return EXIT_OK


# ---- rank -----------------------------------------------------------------

def _cmd_rank(args: argparse.Namespace) -> int:
    phases = _Phases()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    g = phases.run("load_graph", lambda: load_graph_csv(args.graph))
    seed = g.id_of(args.seed_node)
    cfg = WalkConfig(
        walk_count=args.walks,
        stop_probability=args.reset,
        rng_seed=args.rng_seed,
        seed_node=seed,
    )
    corpus = phases.run("sample_walks", lambda: sample_corpus(g, cfg))
    est = phases.run("estimate", lambda: estimate(corpus))

    norms: dict[str, float] = {}
    oracle_info: dict = {}
    oracle_ranks, oracle_info = phases.run(
        "oracle", lambda: _oracle_ranks(args.oracle, g, args.reset, seed)
    )
    if oracle_ranks is not None:
        norms = {
            "l2": est.ranks.l2_error(oracle_ranks),
            "linf": est.ranks.linf_error(oracle_ranks),
        }

    ranking_path = out_dir / "ranking.csv"
    corpus_path = out_dir / "corpus.txt"
    phases.run("write_outputs", lambda: (
        est.ranks.write_csv(ranking_path), dump_corpus(corpus, corpus_path)
    ))
    manifest = {
        "command": "rank",
        "config": {
            "graph": str(args.graph),
            "seed_node": args.seed_node,
            "walks": args.walks,
            "reset": args.reset,
            "rng_seed": args.rng_seed,
            "oracle": args.oracle,
            "out": str(out_dir),
        },
        "graph_version": g.version,
        "total_visits": est.total_visits,
        "error_norms": norms,
        **oracle_info,
        "timings": phases.timings,
        "outputs": [str(ranking_path), str(corpus_path)],
    }
    _write_manifest(out_dir / "manifest.json", manifest)
    print(
        f"ranked {g.node_count} nodes from seed {args.seed_node!r}"
        + (f"; L2={norms['l2']:.6f} Linf={norms['linf']:.6f}" if norms else "")
    )
    return EXIT_OK


# ---- update ---------------------------------------------------------------

def _read_delta_file(path: Path) -> list[tuple[str, str, str, float]]:
    rows: list[tuple[str, str, str, float]] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["op", "node_a", "node_b", "delta_flow"]:
            raise IngestError(f"unrecognized delta CSV header: {header}")
        for row in reader:
            if not row:
                continue
            if len(row) != 4 or row[0] not in ("flow", "add_node", "remove_node"):
                raise IngestError(f"malformed delta row: {row}")
            flow = float(row[3]) if row[0] == "flow" else 0.0
            rows.append((row[0], row[1], row[2], flow))
    return rows


def _apply_delta_rows(
    g: InteractionGraph, corpus, rows: list[tuple[str, str, str, float]]
) -> int:
    from .graph import DeltaKind, GraphDelta

    segments = 0
    for op, a, b, flow in rows:
        if op == "add_node":
            node = g.add_node(a)
            batch = [GraphDelta(kind=DeltaKind.NODE_ADDED, version=g.version, node=node)]
        elif op == "remove_node":
            batch = g.remove_node(g.id_of(a))
        else:
            delta = g.upsert_net_flow(g.id_of(a), g.id_of(b), flow)
            if delta is None:
                continue
            batch = [delta]
        _, n = apply_deltas(corpus, g, batch)
        segments += n
    return segments


def _cmd_update(args: argparse.Namespace) -> int:
    phases = _Phases()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    g = phases.run("load_graph", lambda: load_graph_csv(args.graph))
    corpus = phases.run("load_corpus", lambda: load_corpus(args.corpus, g))
    rows = _read_delta_file(Path(args.delta))
    segments = phases.run("apply_deltas", lambda: _apply_delta_rows(g, corpus, rows))
    est = phases.run("estimate", lambda: estimate(corpus))

    norms: dict[str, float] = {}
    oracle_ranks, oracle_info = phases.run(
        "oracle",
        lambda: _oracle_ranks(
            args.oracle, g, corpus.config.stop_probability, corpus.config.seed_node
        ),
    )
    if oracle_ranks is not None:
        norms = {
            "l2": est.ranks.l2_error(oracle_ranks),
            "linf": est.ranks.linf_error(oracle_ranks),
        }

    verify_info: dict = {}
    if args.verify:
        def run_verify() -> dict:
            fresh_cfg = WalkConfig(
                walk_count=corpus.config.walk_count,
                stop_probability=corpus.config.stop_probability,
                rng_seed=_spawn_seed(corpus.config.rng_seed, 99, g.version),
                seed_node=corpus.config.seed_node,
            )
            fresh = estimate(sample_corpus(g, fresh_cfg))
            return {
                "fresh_rng_seed": fresh_cfg.rng_seed,
                "incremental_vs_fresh_l2": est.ranks.l2_error(fresh.ranks),
                "incremental_vs_fresh_linf": est.ranks.linf_error(fresh.ranks),
            }

        verify_info = phases.run("verify", run_verify)

    ranking_path = out_dir / "ranking.csv"
    corpus_path = out_dir / "corpus.txt"
    phases.run("write_outputs", lambda: (
        est.ranks.write_csv(ranking_path), dump_corpus(corpus, corpus_path)
    ))
    manifest = {
        "command": "update",
        "config": {
            "graph": str(args.graph),
            "delta": str(args.delta),
            "corpus": str(args.corpus),
            "oracle": args.oracle,
            "verify": bool(args.verify),
            "out": str(out_dir),
        },
        "graph_version": g.version,
        "corpus_epoch": corpus.epoch,
        "delta_rows": len(rows),
        "segments_recomputed": segments,
        "error_norms": norms,
        **oracle_info,
        "verify": verify_info,
        "timings": phases.timings,
        "outputs": [str(ranking_path), str(corpus_path)],
    }
    _write_manifest(out_dir / "manifest.json", manifest)
    print(
        f"applied {len(rows)} delta rows, recomputed {segments} walk segments"
        + (f"; L2={norms['l2']:.6f} Linf={norms['linf']:.6f}" if norms else "")
    )
    return EXIT_OK


# ---- convergence ----------------------------------------------------------

def _cmd_convergence(args: argparse.Namespace) -> int:
    phases = _Phases()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    node_range = _parse_range(args.nodes_range, default_step=1)
    lo, hi = node_range[0], node_range[-1]
    if hi > EXACT_SOLVE_MAX_NODES:
        raise ValueError(
            f"nodes-range upper bound {hi} exceeds the exact-solve guard"
            f" ({EXACT_SOLVE_MAX_NODES})"
        )
    walks_list = _parse_ints(args.walks_list)
    reset_list = _parse_floats(args.reset_list)
    if not walks_list or not reset_list or args.trials < 1:
        raise ValueError("walks-list, reset-list and trials must be non-empty")

    master = args.rng_seed
    size_rng = np.random.default_rng(_spawn_seed(master, 4))
    graphs = []
    for trial in range(args.trials):
        n = int(size_rng.integers(lo, hi + 1))
        graphs.append(
            random_graph(n, out_degree=args.out_degree,
                         rng_seed=_spawn_seed(master, 5, trial))
        )

    def run_cells() -> list[dict]:
        rows = []
        for r_idx, walks in enumerate(walks_list):
            for c_idx, c in enumerate(reset_list):
                linf, l2 = [], []
                for trial, g in enumerate(graphs):
                    wcfg = WalkConfig(
                        walk_count=walks,
                        stop_probability=c,
                        rng_seed=_spawn_seed(master, 6, trial, r_idx, c_idx),
                        seed_node=0,
                    )
                    est = estimate(sample_corpus(g, wcfg))
                    truth = exact_solve(g, c, 0)
                    linf.append(est.ranks.linf_error(truth))
                    l2.append(est.ranks.l2_error(truth))
                q25, q50, q75 = np.percentile(linf, [25, 50, 75])
                q25_2, q50_2, q75_2 = np.percentile(l2, [25, 50, 75])
                rows.append({
                    "walks": walks,
                    "reset": c,
                    "trials": args.trials,
                    "median_linf": q50,
                    "iqr_linf": q75 - q25,
                    "median_l2": q50_2,
                    "iqr_l2": q75_2 - q25_2,
                })
        return rows

    rows = phases.run("sweep", run_cells)
    csv_path = out_dir / "convergence.csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(
            fh,
            fieldnames=["walks", "reset", "trials", "median_linf", "iqr_linf",
                        "median_l2", "iqr_l2"],
            lineterminator="\n",
        )
        writer.writeheader()
        for row in rows:
            writer.writerow({
                k: (f"{v:.17g}" if isinstance(v, float) else v)
                for k, v in row.items()
            })
    manifest = {
        "command": "convergence",
        "config": {
            "nodes_range": args.nodes_range,
            "walks_list": walks_list,
            "reset_list": reset_list,
            "trials": args.trials,
            "out_degree": args.out_degree,
            "rng_seed": master,
            "out": str(out_dir),
        },
        "graph_sizes": [g.node_count for g in graphs],
        "timings": phases.timings,
        "outputs": [str(csv_path)],
    }
    _write_manifest(out_dir / "manifest.json", manifest)
    print(f"convergence sweep: {len(rows)} cells over {args.trials} trials")
    return EXIT_OK


# ---- sybil ----------------------------------------------------------------

def _cmd_sybil(args: argparse.Namespace) -> int:
    phases = _Phases()
    out_dir = Path(args.out)
    attack_counts = _parse_range(args.attack, default_step=args.attack_step)
    reset_list = _parse_floats(args.reset_list)
    cfg = sybil_mod.SybilTopologyConfig(
        honest_nodes=args.honest_nodes,
        honest_edges=args.honest_edges,
        sybil_nodes=args.sybil_nodes,
        sybil_edges_per_node=args.sybil_deg,
        attack_edges=max(attack_counts),
        attack_edges_to_seed=min(args.attack_to_seed, max(attack_counts)),
        rng_seed=args.rng_seed,
    )
    cells = phases.run(
        "sweep",
        lambda: sybil_mod.sweep_attack_edges(
            cfg, attack_counts, args.walks, reset_list, max_workers=_threads()
        ),
    )
    sweep_path = phases.run(
        "write_outputs", lambda: sybil_mod.write_sweep_csv(cells, out_dir)
    )
    manifest = {
        "command": "sybil",
        "config": {
            "honest_nodes": args.honest_nodes,
            "honest_edges": args.honest_edges,
            "sybil_nodes": args.sybil_nodes,
            "sybil_deg": args.sybil_deg,
            "attack": args.attack,
            "attack_step": args.attack_step,
            "attack_to_seed": args.attack_to_seed,
            "walks": args.walks,
            "reset_list": reset_list,
            "rng_seed": args.rng_seed,
            "out": str(out_dir),
        },
        "cells": len(cells),
        "timings": phases.timings,
        "outputs": [str(sweep_path)],
    }
    _write_manifest(out_dir / "manifest.json", manifest)
    print(f"sybil sweep: {len(cells)} rows -> {sweep_path}")
    return EXIT_OK


# ---- entry ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="walkrank",
        description="Personalized trust rankings from Monte Carlo random walks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="flatten a ledger into a graph CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--format", required=True, choices=["sqlite", "csv"])
    p.add_argument("--out", required=True)
    p.add_argument("--holdback-nodes", type=int, default=0)
    p.add_argument("--holdback-edges", type=int, default=0)
    p.add_argument("--holdback-seed", type=int, default=None,
                   help="pick held-back nodes/edges at random instead of last-seen")
    p.add_argument("--delta-out", default=None)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("rank", help="sample walks and write a ranking")
    p.add_argument("--graph", required=True)
    p.add_argument("--seed-node", required=True)
    p.add_argument("--walks", type=int, default=300)
    p.add_argument("--reset", type=float, default=0.3)
    p.add_argument("--rng-seed", type=int, default=0)
    p.add_argument("--oracle", choices=["power", "exact", "none"], default="none")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_rank)

    p = sub.add_parser("update", help="apply graph deltas and repair the corpus")
    p.add_argument("--graph", required=True)
    p.add_argument("--delta", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--oracle", choices=["power", "exact", "none"], default="none")
    p.add_argument("--verify", action="store_true",
                   help="also sample a fresh corpus and record the difference")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_update)

    p = sub.add_parser("convergence", help="estimator error vs walks and reset")
    p.add_argument("--nodes-range", required=True, help="e.g. 2..100")
    p.add_argument("--walks-list", required=True, help="e.g. 10,100,300")
    p.add_argument("--reset-list", required=True, help="e.g. 0.1,0.3,0.5")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--out-degree", type=int, default=2)
    p.add_argument("--rng-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_convergence)

    p = sub.add_parser("sybil", help="attack-edge sweep with ROC/AUROC output")
    p.add_argument("--honest-nodes", type=int, default=500)
    p.add_argument("--honest-edges", type=int, default=2000)
    p.add_argument("--sybil-nodes", type=int, default=1000)
    p.add_argument("--sybil-deg", type=int, default=10)
    p.add_argument("--attack", required=True, help="e.g. 0..500 or 0..500..10")
    p.add_argument("--attack-step", type=int, default=10,
                   help="step for A..B attack ranges without an explicit step")
    p.add_argument("--attack-to-seed", type=int, default=5)
    p.add_argument("--walks", type=int, default=200)
    p.add_argument("--reset-list", default="0.1,0.3,0.5,0.7")
    p.add_argument("--rng-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sybil)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (StaleCorpusError, SeedRemovedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STATE
    except NoSuchNodeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IngestError, GraphError, CorpusError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
