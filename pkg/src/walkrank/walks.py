"""Monte Carlo personalized PageRank via stored, repairable random walks.

A corpus holds R walks rooted at the seed node. Each walk visits its start
node, then repeatedly: terminates if the current node is dangling, terminates
with probability c (the stop coin), otherwise steps to an out-neighbor drawn
proportionally to edge weight. Scores are total visit counts normalized by
the total number of visits across the corpus.

When the graph mutates, only walks whose recorded trajectory touches the
mutation need work: a walk is truncated at its first visit to a node whose
out-distribution changed and the suffix is resampled under the new graph
(including a fresh stop coin at the truncation node, whose own visit is
kept). For node removal the cut happens at the first visited in-neighbor of
the removed node, which is always strictly before any visit to the node
itself. First-visit truncation is the weakest cut that restores correctness:
everything sampled after the first visit came from the stale distribution.

Randomness is counter-based (Philox) with one independent stream per
(walk id, repair epoch), so repairing one walk never perturbs another and
corpora are reproducible byte for byte from (graph version, config).
Sampling and repair may be parallelized across walks; estimation is a
read-only reduction.
"""
from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from itertools import accumulate
from pathlib import Path

import numpy as np

from .graph import DeltaKind, GraphDelta, InteractionGraph, NoSuchNodeError
from .oracle import RankVector

MAX_WALK_LENGTH = 10_000  # memory safety rail; unreachable for c >= 0.01

REASON_STOPPED = "stopped"
REASON_DANGLING = "dangling"

_MASK32 = 0xFFFFFFFF
_MASK64 = 0xFFFFFFFFFFFFFFFF


class CorpusError(ValueError):
    pass


class StaleCorpusError(CorpusError):
    pass


class SeedRemovedError(CorpusError):
    pass


@dataclass(frozen=True)
class WalkConfig:
    walk_count: int
    stop_probability: float
    rng_seed: int
    seed_node: int

    def __post_init__(self) -> None:
        if self.walk_count < 1:
            raise ValueError("walk_count must be at least 1")
        if not 0.0 < self.stop_probability < 1.0:
            raise ValueError(
                f"stop probability must lie in (0,1), got {self.stop_probability}"
            )


@dataclass
class Walk:
    nodes: list[int]
    reason: str


@dataclass
class VisitEstimate:
    """Raw visit counts and the normalized score vector derived from them."""

    visit_counts: dict[int, int]
    total_visits: int
    ranks: RankVector


class WalkCorpus:
    """R stored walks plus the inverted first-visit index that makes repair
    segments findable, stamped with the graph version they reflect."""

    def __init__(self, graph: InteractionGraph, config: WalkConfig):
        self.graph = graph
        self.config = config
        self.walks: list[Walk] = []
        self.version = graph.version
        self.epoch = 0  # repair events applied so far; namespaces RNG streams
        self.first_visit: dict[int, dict[int, int]] = {}
        self.visit_counts: dict[int, int] = {}
        self._total_visits = 0

    @property
    def total_visits(self) -> int:
        return self._total_visits

    def _index_add(self, walk_id: int, nodes: list[int]) -> None:
        for pos, node in enumerate(nodes):
            self.visit_counts[node] = self.visit_counts.get(node, 0) + 1
            slot = self.first_visit.setdefault(node, {})
            if walk_id not in slot:
                slot[walk_id] = pos
        self._total_visits += len(nodes)

    def _index_remove(self, walk_id: int, nodes: list[int]) -> None:
        for node in nodes:
            remaining = self.visit_counts[node] - 1
            if remaining:
                self.visit_counts[node] = remaining
            else:
                del self.visit_counts[node]
        for node in set(nodes):
            slot = self.first_visit[node]
            del slot[walk_id]
            if not slot:
                del self.first_visit[node]
        self._total_visits -= len(nodes)

    def rebuilt_index(self) -> tuple[dict[int, dict[int, int]], dict[int, int]]:
        """Recompute the index from the walks (consistency checks in tests)."""
        first: dict[int, dict[int, int]] = {}
        counts: dict[int, int] = {}
        for walk_id, walk in enumerate(self.walks):
            for pos, node in enumerate(walk.nodes):
                counts[node] = counts.get(node, 0) + 1
                slot = first.setdefault(node, {})
                if walk_id not in slot:
                    slot[walk_id] = pos
        return first, counts


def _walk_stream(rng_seed: int, epoch: int, walk_id: int) -> np.random.Generator:
    """Independent Philox stream keyed by (seed, epoch, walk id)."""
    key = np.array(
        [rng_seed & _MASK64, ((epoch & _MASK32) << 32) | (walk_id & _MASK32)],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))


def _successor_table(g: InteractionGraph):
    """Per-node (targets, cumulative weights) cache for one graph version."""
    cache: dict[int, tuple[list[int], list[float]] | None] = {}

    def succ(u: int):
        try:
            return cache[u]
        except KeyError:
            pass
        edges = sorted(g.out_edges(u).items())
        entry = (
            ([v for v, _ in edges], list(accumulate(w for _, w in edges)))
            if edges
            else None
        )
        cache[u] = entry
        return entry

    return succ


def _continue_walk(nodes: list[int], c: float, rng: np.random.Generator, succ) -> str:
    """Extend ``nodes`` in place from its last element until termination."""
    u = nodes[-1]
    while True:
        entry = succ(u)
        if entry is None:
            return REASON_DANGLING
        if rng.random() < c:
            return REASON_STOPPED
        if len(nodes) >= MAX_WALK_LENGTH:
            return REASON_STOPPED
        targets, cum = entry
        x = rng.random() * cum[-1]
        i = bisect_right(cum, x)
        if i >= len(targets):
            i = len(targets) - 1
        u = targets[i]
        nodes.append(u)


def sample_corpus(g: InteractionGraph, cfg: WalkConfig) -> WalkCorpus:
    """Sample R independent walks from the seed against the current graph."""
    if not g.has_node(cfg.seed_node):
        raise NoSuchNodeError(f"no such node: {cfg.seed_node}")
    corpus = WalkCorpus(g, cfg)
    succ = _successor_table(g)
    c = cfg.stop_probability
    for walk_id in range(cfg.walk_count):
        rng = _walk_stream(cfg.rng_seed, 0, walk_id)
        nodes = [cfg.seed_node]
        reason = _continue_walk(nodes, c, rng, succ)
        corpus.walks.append(Walk(nodes=nodes, reason=reason))
        corpus._index_add(walk_id, nodes)
    return corpus


def estimate(corpus: WalkCorpus) -> VisitEstimate:
    """Normalize total visit counts into scores, dense over the graph's
    current node set (unvisited nodes score exactly 0.0)."""
    if not corpus.walks:
        raise CorpusError("corpus is empty")
    total = corpus.total_visits
    scores = {
        u: corpus.visit_counts.get(u, 0) / total for u in corpus.graph.nodes()
    }
    return VisitEstimate(
        visit_counts=dict(corpus.visit_counts),
        total_visits=total,
        ranks=RankVector(scores=scores, labels=corpus.graph.labels()),
    )


def rank(corpus: WalkCorpus) -> RankVector:
    return estimate(corpus).ranks


def apply_delta(
    corpus: WalkCorpus, g_after: InteractionGraph, delta: GraphDelta
) -> tuple[WalkCorpus, int]:
    """Repair the corpus across one mutation; see :func:`apply_deltas`."""
    return apply_deltas(corpus, g_after, [delta])


def apply_deltas(
    corpus: WalkCorpus, g_after: InteractionGraph, deltas: list[GraphDelta]
) -> tuple[WalkCorpus, int]:
    """Repair the corpus in place across one mutation event (a single delta,
    or the delta batch of one compound mutation such as node removal).

    Returns (corpus, number of walk suffixes recomputed). The deltas must be
    exactly the mutations between the corpus version and ``g_after``'s
    version, in order.
    """
    if not deltas:
        raise CorpusError("empty delta batch")
    expected = corpus.version + 1
    for d in deltas:
        if d.version != expected:
            raise StaleCorpusError(
                f"stale corpus: at graph version {corpus.version}, "
                f"delta stream expects {d.version - 1}"
            )
        expected += 1
    if g_after.version != expected - 1:
        raise StaleCorpusError(
            f"stale corpus: deltas end at version {expected - 1}, "
            f"graph is at {g_after.version}"
        )

    seed = corpus.config.seed_node
    cut_sources: set[int] = set()
    for d in deltas:
        if d.kind is DeltaKind.NODE_REMOVED:
            if d.node == seed:
                raise SeedRemovedError("seed removed; full resample required")
        elif d.kind is DeltaKind.NODE_ADDED:
            continue
        elif d.kind is DeltaKind.EDGE_REVERSED:
            cut_sources.update((d.source, d.target))
        else:
            cut_sources.add(d.source)
    # sources that no longer exist are out-edges of a removed node; walks
    # through the removed node are cut at its first visited in-neighbor,
    # whose out-edge removal is part of the same batch
    cut_sources = {u for u in cut_sources if g_after.has_node(u)}

    cuts: dict[int, int] = {}
    for u in cut_sources:
        for walk_id, pos in corpus.first_visit.get(u, {}).items():
            if walk_id not in cuts or pos < cuts[walk_id]:
                cuts[walk_id] = pos

    corpus.epoch += 1
    succ = _successor_table(g_after)
    c = corpus.config.stop_probability
    for walk_id in sorted(cuts):
        walk = corpus.walks[walk_id]
        corpus._index_remove(walk_id, walk.nodes)
        nodes = walk.nodes[: cuts[walk_id] + 1]
        rng = _walk_stream(corpus.config.rng_seed, corpus.epoch, walk_id)
        walk.reason = _continue_walk(nodes, c, rng, succ)
        walk.nodes = nodes
        corpus._index_add(walk_id, nodes)

    corpus.graph = g_after
    corpus.version = g_after.version
    return corpus, len(cuts)


# ---- corpus dump format --------------------------------------------------

def corpus_to_text(corpus: WalkCorpus) -> str:
    """One header line (replay metadata), then one walk per line:
    ``walk_id;reason;node0,node1,...``."""
    cfg = corpus.config
    lines = [
        "# walkrank-corpus"
        f" version={corpus.version}"
        f" epoch={corpus.epoch}"
        f" rng_seed={cfg.rng_seed}"
        f" stop_probability={cfg.stop_probability!r}"
        f" walk_count={cfg.walk_count}"
        f" seed_node={cfg.seed_node}"
    ]
    for walk_id, walk in enumerate(corpus.walks):
        path = ",".join(str(n) for n in walk.nodes)
        lines.append(f"{walk_id};{walk.reason};{path}")
    return "\n".join(lines) + "\n"


def dump_corpus(corpus: WalkCorpus, path: str | Path) -> None:
    Path(path).write_text(corpus_to_text(corpus), encoding="utf-8")


def load_corpus(path: str | Path, graph: InteractionGraph) -> WalkCorpus:
    """Rebuild a corpus against ``graph``, which must sit at the exact version
    the corpus was dumped at; every stored step must still be a graph edge."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# walkrank-corpus"):
        raise CorpusError(f"not a corpus file: {path}")
    meta: dict[str, str] = {}
    for token in lines[0].split()[2:]:
        key, _, value = token.partition("=")
        meta[key] = value
    version = int(meta["version"])
    if graph.version != version:
        raise StaleCorpusError(
            f"stale corpus: corpus at graph version {version}, "
            f"graph is at {graph.version}"
        )
    cfg = WalkConfig(
        walk_count=int(meta["walk_count"]),
        stop_probability=float(meta["stop_probability"]),
        rng_seed=int(meta["rng_seed"]),
        seed_node=int(meta["seed_node"]),
    )
    corpus = WalkCorpus(graph, cfg)
    corpus.epoch = int(meta["epoch"])
    for line in lines[1:]:
        if not line:
            continue
        walk_id_s, reason, path_s = line.split(";")
        walk_id = int(walk_id_s)
        if walk_id != len(corpus.walks):
            raise CorpusError(f"walk ids out of order at {walk_id}")
        if reason not in (REASON_STOPPED, REASON_DANGLING):
            raise CorpusError(f"unknown termination reason {reason!r}")
        nodes = [int(tok) for tok in path_s.split(",")]
        if nodes[0] != cfg.seed_node:
            raise CorpusError(f"walk {walk_id} does not start at the seed")
        for a, b in zip(nodes, nodes[1:]):
            if b not in graph.out_edges(a):
                raise CorpusError(
                    f"walk {walk_id} step {a}->{b} is not an edge of the graph"
                )
        corpus.walks.append(Walk(nodes=nodes, reason=reason))
        corpus._index_add(walk_id, nodes)
    if len(corpus.walks) != cfg.walk_count:
        raise CorpusError(
            f"corpus holds {len(corpus.walks)} walks, header says {cfg.walk_count}"
        )
    return corpus
