"""Sybil-resistance evaluation: synthetic honest/sybil topologies joined by
attack edges, cutoff-sweep ROC curves over the walk ranking, and the
attack-edge sweep harness.

Attack edges run from the honest region into the sybil region (that is the
direction that lets walks enter the sybil region at all) with weights drawn
like honest edges. Their insertion order is deterministic: when any
seed-sourced attack edges are requested, the first sits at 1-based position
5 of the schedule and the rest spread evenly, so sweeping the attack count
crosses a well-defined "first seed-incident edge" step.
"""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import InteractionGraph
from .oracle import RankVector
from .walks import WalkConfig, rank, sample_corpus

HONEST = "honest"
SYBIL = "sybil"

SWEEP_CSV_HEADER = [
    "attack_edges", "reset_prob", "filtered", "auroc", "fp_rate", "fn_rate",
    "dropped_zero",
]


class DegenerateRocError(ValueError):
    pass


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class SybilTopologyConfig:
    honest_nodes: int = 500
    honest_edges: int = 2000
    honest_weight_range: tuple[float, float] = (0.0, 10.0)
    sybil_nodes: int = 1000
    sybil_edges_per_node: int = 10
    attack_edges: int = 0
    attack_edges_to_seed: int = 0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.honest_nodes < 1:
            raise TopologyError("need at least one honest node (the seed)")
        for name in ("honest_edges", "sybil_nodes", "sybil_edges_per_node",
                     "attack_edges", "attack_edges_to_seed"):
            if getattr(self, name) < 0:
                raise TopologyError(f"{name} must be non-negative")
        if self.attack_edges_to_seed > self.attack_edges:
            raise TopologyError("attack_edges_to_seed exceeds attack_edges")

    @property
    def seed_node(self) -> int:
        return 0  # the seed is honest node 0 by construction


@dataclass
class LabeledGraph:
    graph: InteractionGraph
    labels: dict[int, str]  # node -> "honest" | "sybil"
    seed_node: int
    attack_edge_list: list[tuple[int, int, float]] = field(default_factory=list)

    @property
    def honest(self) -> list[int]:
        return [u for u, lab in self.labels.items() if lab == HONEST]

    @property
    def sybil(self) -> list[int]:
        return [u for u, lab in self.labels.items() if lab == SYBIL]


@dataclass
class RocResult:
    ordered: list[int]
    points: list[tuple[float, float]]
    auroc: float
    fp_rate: float
    fn_rate: float
    zero_filtered: bool
    nodes_dropped_as_zero: int


def _seed_edge_positions(length: int, to_seed: int) -> set[int]:
    """0-based schedule slots for seed-sourced attack edges: first at index 4
    (the paper-shaped 5th edge) when it fits, remainder evenly spaced."""
    if to_seed == 0:
        return set()
    if to_seed > length:
        raise TopologyError("attack_edges_to_seed exceeds schedule length")
    start = 4 if length >= 5 and to_seed <= length - 4 else length - to_seed
    return {start + (i * (length - start)) // to_seed for i in range(to_seed)}


def attack_schedule(
    cfg: SybilTopologyConfig, length: int
) -> list[tuple[int, int, float]]:
    """Deterministic list of ``length`` attack edges (source, target, weight).

    Non-seed sources are uniform over honest nodes excluding the seed so the
    scheduled positions are the only seed-incident ones; targets are uniform
    over sybils; each unordered pair appears at most once.
    """
    if length == 0:
        return []
    if cfg.sybil_nodes == 0:
        raise TopologyError("attack edges need a sybil region")
    if cfg.honest_nodes < 2 and length > cfg.attack_edges_to_seed:
        raise TopologyError("non-seed attack edges need a second honest node")
    rng = np.random.default_rng(
        np.random.SeedSequence(cfg.rng_seed & 0xFFFFFFFFFFFFFFFF, spawn_key=(3,))
    )
    seed_slots = _seed_edge_positions(length, cfg.attack_edges_to_seed)
    lo, hi = cfg.honest_weight_range
    used: set[tuple[int, int]] = set()
    edges: list[tuple[int, int, float]] = []
    for slot in range(length):
        while True:
            if slot in seed_slots:
                src = 0
            else:
                src = 1 + int(rng.integers(cfg.honest_nodes - 1))
            dst = cfg.honest_nodes + int(rng.integers(cfg.sybil_nodes))
            pair = (src, dst)
            if pair not in used:
                used.add(pair)
                break
        w = float(rng.uniform(lo, hi))
        edges.append((src, dst, w if w > 0.0 else (lo + hi) / 2 or 1.0))
    return edges


def generate_topology(
    cfg: SybilTopologyConfig,
    schedule: list[tuple[int, int, float]] | None = None,
) -> LabeledGraph:
    """Build the labeled graph: honest ids 0..H-1, sybil ids H..H+S-1.

    The honest region gets exactly ``honest_edges`` distinct directed edges
    uniform over ordered honest pairs; every sybil node gets exactly
    ``sybil_edges_per_node`` out-edges to sybil targets; then the first
    ``attack_edges`` entries of the attack schedule are applied.
    """
    h, s = cfg.honest_nodes, cfg.sybil_nodes
    if cfg.honest_edges > h * (h - 1) // 2:
        raise TopologyError(
            f"{cfg.honest_edges} honest edges exceed simple-graph capacity"
        )
    if s and cfg.sybil_edges_per_node > s - 1:
        raise TopologyError("sybil_edges_per_node exceeds simple-graph capacity")

    rng = np.random.default_rng(
        np.random.SeedSequence(cfg.rng_seed & 0xFFFFFFFFFFFFFFFF, spawn_key=(1,))
    )
    g = InteractionGraph()
    labels: dict[int, str] = {}
    for _ in range(h):
        labels[g.add_node()] = HONEST
    for _ in range(s):
        labels[g.add_node()] = SYBIL

    lo, hiw = cfg.honest_weight_range

    def draw_weight() -> float:
        w = float(rng.uniform(lo, hiw))
        return w if w > 0.0 else (lo + hiw) / 2 or 1.0

    used: set[tuple[int, int]] = set()
    made = 0
    while made < cfg.honest_edges:
        a, b = int(rng.integers(h)), int(rng.integers(h))
        if a == b:
            continue
        pair = (a, b) if a < b else (b, a)
        if pair in used:
            continue
        used.add(pair)
        g.set_edge(a, b, draw_weight())
        made += 1

    for u in range(h, h + s):
        placed = 0
        while placed < cfg.sybil_edges_per_node:
            v = h + int(rng.integers(s))
            if v == u:
                continue
            pair = (u, v) if u < v else (v, u)
            if pair in used:
                continue
            used.add(pair)
            g.set_edge(u, v, draw_weight())
            placed += 1

    if schedule is None:
        schedule = attack_schedule(cfg, cfg.attack_edges)
    applied: list[tuple[int, int, float]] = []
    for src, dst, w in schedule[: cfg.attack_edges]:
        g.set_edge(src, dst, w)
        applied.append((src, dst, w))
    return LabeledGraph(
        graph=g, labels=labels, seed_node=cfg.seed_node, attack_edge_list=applied
    )


def ordered_nodes(
    ranking: RankVector, filter_zero: bool
) -> tuple[list[int], int]:
    """Nodes by descending score, ties by ascending label; optionally drop
    nodes scoring exactly zero. Returns (ordered list, dropped count)."""
    ranked = [node for node, _ in ranking.items_ranked()]
    if not filter_zero:
        return ranked, 0
    kept = [node for node in ranked if ranking.score(node) != 0.0]
    return kept, len(ranked) - len(kept)


def roc(
    ordered: list[int],
    labels: dict[int, str],
    zero_filtered: bool = False,
    nodes_dropped_as_zero: int = 0,
) -> RocResult:
    """Sweep the cutoff from top to bottom, predicting nodes above it honest
    and below it sybil. FPR is the fraction of sybils ranked above the cutoff,
    TPR the fraction of honest nodes above it; AUROC is the trapezoidal area.

    The reported fp/fn rates use the cutoff where the predicted-honest count
    equals the true honest count among the listed nodes.
    """
    total_honest = sum(1 for u in ordered if labels[u] == HONEST)
    total_sybil = len(ordered) - total_honest
    if total_honest == 0 or total_sybil == 0:
        raise DegenerateRocError(
            "degenerate ROC: need both classes among listed nodes"
        )
    points = [(0.0, 0.0)]
    cum_honest = 0
    cum_sybil = 0
    auroc = 0.0
    for u in ordered:
        prev = points[-1]
        if labels[u] == HONEST:
            cum_honest += 1
        else:
            cum_sybil += 1
        pt = (cum_sybil / total_sybil, cum_honest / total_honest)
        auroc += (pt[0] - prev[0]) * (pt[1] + prev[1]) / 2.0
        points.append(pt)
    k_star = total_honest
    sybils_in_top = sum(1 for u in ordered[:k_star] if labels[u] == SYBIL)
    honest_below = sum(1 for u in ordered[k_star:] if labels[u] == HONEST)
    return RocResult(
        ordered=list(ordered),
        points=points,
        auroc=auroc,
        fp_rate=sybils_in_top / total_sybil,
        fn_rate=honest_below / total_honest,
        zero_filtered=zero_filtered,
        nodes_dropped_as_zero=nodes_dropped_as_zero,
    )


def _all_sybils_filtered(dropped: int, zero_filtered: bool) -> RocResult:
    # every sybil scored exactly zero and fell to the filter: perfect
    # separation by construction, reported as the perfect-classifier curve
    return RocResult(
        ordered=[],
        points=[(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)],
        auroc=1.0,
        fp_rate=0.0,
        fn_rate=0.0,
        zero_filtered=zero_filtered,
        nodes_dropped_as_zero=dropped,
    )


@dataclass
class SweepCell:
    attack_edges: int
    reset_prob: float
    filtered: bool
    result: RocResult


def _cell_rng_seed(master: int, attack: int, reset_index: int) -> int:
    ss = np.random.SeedSequence(
        master & 0xFFFFFFFFFFFFFFFF, spawn_key=(17, attack, reset_index)
    )
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def evaluate_ranking(
    ranking: RankVector, labels: dict[int, str]
) -> dict[bool, RocResult]:
    """ROC with and without zero-score filtering for one ranking."""
    out: dict[bool, RocResult] = {}
    for filtered in (False, True):
        listed, dropped = ordered_nodes(ranking, filter_zero=filtered)
        if filtered and all(labels[u] == HONEST for u in listed):
            out[filtered] = _all_sybils_filtered(dropped, filtered)
            continue
        out[filtered] = roc(
            listed, labels, zero_filtered=filtered, nodes_dropped_as_zero=dropped
        )
    return out


def sweep_attack_edges(
    cfg: SybilTopologyConfig,
    attack_counts: list[int],
    walk_count: int,
    reset_probs: list[float],
    max_workers: int = 1,
) -> list[SweepCell]:
    """Full factorial sweep over attack-edge counts and reset probabilities.

    One graph is grown along the fixed attack schedule, so successive counts
    differ by exactly the scheduled edges in between. Each (attack, reset)
    cell samples its own corpus from an independent RNG stream; cells for the
    same attack count are read-only on the shared graph and may run in
    parallel. Emits both the filtered and unfiltered ROC per cell.
    """
    if not attack_counts or not reset_probs:
        raise ValueError("attack_counts and reset_probs must be non-empty")
    counts = sorted(set(attack_counts))
    schedule = attack_schedule(cfg, counts[-1]) if counts[-1] else []
    base = generate_topology(
        SybilTopologyConfig(
            honest_nodes=cfg.honest_nodes,
            honest_edges=cfg.honest_edges,
            honest_weight_range=cfg.honest_weight_range,
            sybil_nodes=cfg.sybil_nodes,
            sybil_edges_per_node=cfg.sybil_edges_per_node,
            attack_edges=0,
            attack_edges_to_seed=0,
            rng_seed=cfg.rng_seed,
        )
    )
    g = base.graph
    labels = base.labels

    def run_cell(attack: int, reset_index: int) -> list[SweepCell]:
        c = reset_probs[reset_index]
        wcfg = WalkConfig(
            walk_count=walk_count,
            stop_probability=c,
            rng_seed=_cell_rng_seed(cfg.rng_seed, attack, reset_index),
            seed_node=cfg.seed_node,
        )
        ranking = rank(sample_corpus(g, wcfg))
        by_filter = evaluate_ranking(ranking, labels)
        return [
            SweepCell(attack, c, filtered, by_filter[filtered])
            for filtered in (False, True)
        ]

    cells: list[SweepCell] = []
    applied = 0
    for attack in counts:
        while applied < attack:
            src, dst, w = schedule[applied]
            g.set_edge(src, dst, w)
            applied += 1
        if max_workers > 1 and len(reset_probs) > 1:
            with ThreadPoolExecutor(max_workers=max_workers) as pool:
                for batch in pool.map(
                    lambda idx: run_cell(attack, idx), range(len(reset_probs))
                ):
                    cells.extend(batch)
        else:
            for idx in range(len(reset_probs)):
                cells.extend(run_cell(attack, idx))
    return cells


def write_sweep_csv(cells: list[SweepCell], out_dir: str | Path) -> Path:
    """Write ``sweep.csv`` plus one ROC point file per cell."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sweep_path = out_dir / "sweep.csv"
    with open(sweep_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_CSV_HEADER)
        for cell in cells:
            writer.writerow([
                cell.attack_edges,
                f"{cell.reset_prob:g}",
                int(cell.filtered),
                f"{cell.result.auroc:.17g}",
                f"{cell.result.fp_rate:.17g}",
                f"{cell.result.fn_rate:.17g}",
                cell.result.nodes_dropped_as_zero,
            ])
    for cell in cells:
        name = (
            f"roc_{cell.attack_edges}_{cell.reset_prob:g}_"
            f"{'filtered' if cell.filtered else 'unfiltered'}.csv"
        )
        with open(out_dir / name, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["fpr", "tpr"])
            for fpr, tpr in cell.result.points:
                writer.writerow([f"{fpr:.17g}", f"{tpr:.17g}"])
    return sweep_path
