"""Weighted directed interaction graph with incremental mutation deltas.

Nodes are agents identified by small integer handles, each carrying a unique
string label (a public key in the ledger use case). For every unordered pair
of nodes the graph keeps one signed net-flow accumulator; the stored edge is
derived from it: the absolute value is the weight and the edge points from
the net consumer (debtor) toward the net contributor (creditor). A pair with
zero net flow stores no edge, so dangling nodes are detectable structurally.

Every mutation bumps a monotone version counter and produces GraphDelta
records, which is what lets a walk corpus repair itself incrementally instead
of resampling from scratch.

Concurrency: single writer, many readers. Mutations must be serialized
externally; readers identify the state they observed by ``version``.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

log = logging.getLogger(__name__)

# Net-flow magnitudes beyond 2**53 bytes are no longer exactly representable
# as float64; clamp instead of silently losing integer precision.
SATURATION_LIMIT = float(2**53)


class GraphError(ValueError):
    """Base class for interaction-graph errors."""


class NoSuchNodeError(GraphError):
    pass


class LabelExistsError(GraphError):
    pass


class SelfInteractionError(GraphError):
    pass


class DeltaKind(str, Enum):
    NODE_ADDED = "node_added"
    NODE_REMOVED = "node_removed"
    EDGE_ADDED = "edge_added"
    EDGE_REMOVED = "edge_removed"
    EDGE_REWEIGHTED = "edge_reweighted"
    EDGE_REVERSED = "edge_reversed"


@dataclass(frozen=True)
class GraphDelta:
    """One structural change, stamped with the graph version it produced.

    For edge kinds ``source``/``target`` give the stored direction after the
    change (for EDGE_REMOVED: the direction that was removed). EDGE_REVERSED
    reports the new direction; the old direction was target->source.
    """

    kind: DeltaKind
    version: int
    node: int | None = None
    source: int | None = None
    target: int | None = None
    old_weight: float = 0.0
    new_weight: float = 0.0


class InteractionGraph:
    """Directed weighted graph with one edge per unordered node pair."""

    def __init__(self) -> None:
        self._labels: dict[int, str] = {}
        self._ids: dict[str, int] = {}
        self._out: dict[int, dict[int, float]] = {}
        self._in: dict[int, dict[int, float]] = {}
        self._out_weight: dict[int, float] = {}
        # accumulator keyed by (lo, hi) with lo < hi: net bytes uploaded lo->hi
        self._acc: dict[tuple[int, int], float] = {}
        self._next_id = 0
        self.version = 0

    # ---- queries -----------------------------------------------------------

    def nodes(self) -> list[int]:
        return list(self._labels)

    @property
    def node_count(self) -> int:
        return len(self._labels)

    @property
    def edge_count(self) -> int:
        return len(self._acc)

    def has_node(self, u: int) -> bool:
        return u in self._labels

    def has_label(self, label: str) -> bool:
        return label in self._ids

    def label_of(self, u: int) -> str:
        self._require(u)
        return self._labels[u]

    def id_of(self, label: str) -> int:
        if label not in self._ids:
            raise NoSuchNodeError(f"no such node: label {label!r}")
        return self._ids[label]

    def labels(self) -> dict[int, str]:
        return dict(self._labels)

    def out_edges(self, u: int) -> dict[int, float]:
        self._require(u)
        return dict(self._out[u])

    def in_edges(self, u: int) -> dict[int, float]:
        self._require(u)
        return dict(self._in[u])

    def edges(self) -> list[tuple[int, int, float]]:
        return [(u, v, w) for u, nbrs in self._out.items() for v, w in nbrs.items()]

    def out_weight(self, u: int) -> float:
        self._require(u)
        return self._out_weight[u]

    def is_dangling(self, u: int) -> bool:
        self._require(u)
        return not self._out[u]

    def net_flow(self, a: int, b: int) -> float:
        """Signed net bytes uploaded a->b (0.0 if the pair never interacted)."""
        if a == b:
            raise SelfInteractionError("self-interaction rejected")
        self._require(a)
        self._require(b)
        lo, hi = (a, b) if a < b else (b, a)
        acc = self._acc.get((lo, hi), 0.0)
        return acc if a == lo else -acc

    def out_distribution(self, u: int) -> list[tuple[int, float]]:
        """Transition probabilities out of ``u``; empty iff ``u`` is dangling."""
        self._require(u)
        nbrs = self._out[u]
        if not nbrs:
            return []
        total = self._out_weight[u]
        return [(v, w / total) for v, w in sorted(nbrs.items())]

    def adjacency_by_labels(self) -> dict[str, dict[str, float]]:
        """Label-keyed adjacency, for id-independent structural comparison."""
        return {
            self._labels[u]: {self._labels[v]: w for v, w in nbrs.items()}
            for u, nbrs in self._out.items()
        }

    # ---- mutation ----------------------------------------------------------

    def add_node(self, label: str | None = None) -> int:
        """Add a node; labels must be unique. Unlabeled nodes get the decimal
        form of their handle as label so every node is serializable."""
        node = self._next_id
        if label is None:
            label = str(node)
        if label in self._ids:
            raise LabelExistsError(f"label exists: {label!r}")
        self._next_id += 1
        self._labels[node] = label
        self._ids[label] = node
        self._out[node] = {}
        self._in[node] = {}
        self._out_weight[node] = 0.0
        self.version += 1
        return node

    def upsert_net_flow(self, a: int, b: int, delta: float) -> GraphDelta | None:
        """Adjust the pair accumulator by ``delta`` net bytes uploaded a->b and
        re-derive the stored edge. Returns the resulting structural change, or
        None for a zero adjustment."""
        if a == b:
            raise SelfInteractionError("self-interaction rejected")
        self._require(a)
        self._require(b)
        if delta == 0.0:
            return None
        lo, hi = (a, b) if a < b else (b, a)
        signed = delta if a == lo else -delta
        old_acc = self._acc.get((lo, hi), 0.0)
        new_acc = old_acc + signed
        if abs(new_acc) > SATURATION_LIMIT:
            log.warning(
                "net-flow accumulator for pair (%d, %d) saturated at 2^53 bytes", lo, hi
            )
            new_acc = math.copysign(SATURATION_LIMIT, new_acc)

        old_edge = self._derive_edge(lo, hi, old_acc)
        new_edge = self._derive_edge(lo, hi, new_acc)

        if new_acc == 0.0:
            self._acc.pop((lo, hi), None)
        else:
            self._acc[(lo, hi)] = new_acc
        if old_edge is not None:
            self._unlink(*old_edge[:2])
        if new_edge is not None:
            self._link(*new_edge)
        self.version += 1

        if old_edge is None and new_edge is not None:
            return GraphDelta(
                DeltaKind.EDGE_ADDED, self.version,
                source=new_edge[0], target=new_edge[1], new_weight=new_edge[2],
            )
        if old_edge is not None and new_edge is None:
            return GraphDelta(
                DeltaKind.EDGE_REMOVED, self.version,
                source=old_edge[0], target=old_edge[1], old_weight=old_edge[2],
            )
        assert old_edge is not None and new_edge is not None
        if old_edge[:2] == new_edge[:2]:
            return GraphDelta(
                DeltaKind.EDGE_REWEIGHTED, self.version,
                source=new_edge[0], target=new_edge[1],
                old_weight=old_edge[2], new_weight=new_edge[2],
            )
        return GraphDelta(
            DeltaKind.EDGE_REVERSED, self.version,
            source=new_edge[0], target=new_edge[1],
            old_weight=old_edge[2], new_weight=new_edge[2],
        )

    def set_edge(self, src: int, dst: int, weight: float) -> GraphDelta:
        """Create edge src->dst with the given positive weight. The pair must
        not already carry an edge; generators and loaders use this."""
        if weight <= 0.0 or not math.isfinite(weight):
            raise GraphError(f"edge weight must be positive and finite, got {weight}")
        if self.net_flow(src, dst) != 0.0:
            raise GraphError(
                f"pair ({src}, {dst}) already stores an edge; adjust via upsert_net_flow"
            )
        # edge points debtor->creditor, so dst must be the net uploader
        delta = self.upsert_net_flow(dst, src, weight)
        assert delta is not None and delta.kind is DeltaKind.EDGE_ADDED
        return delta

    def remove_node(self, u: int) -> list[GraphDelta]:
        """Remove ``u`` and all incident edges; one delta per removed edge plus
        a final NODE_REMOVED, each stamped with its own version."""
        self._require(u)
        deltas: list[GraphDelta] = []
        for v, w in sorted(self._out[u].items()):
            self._unlink(u, v)
            self._acc.pop((u, v) if u < v else (v, u), None)
            self.version += 1
            deltas.append(GraphDelta(
                DeltaKind.EDGE_REMOVED, self.version, source=u, target=v, old_weight=w,
            ))
        for v, w in sorted(self._in[u].items()):
            self._unlink(v, u)
            self._acc.pop((u, v) if u < v else (v, u), None)
            self.version += 1
            deltas.append(GraphDelta(
                DeltaKind.EDGE_REMOVED, self.version, source=v, target=u, old_weight=w,
            ))
        label = self._labels.pop(u)
        del self._ids[label]
        del self._out[u]
        del self._in[u]
        del self._out_weight[u]
        self.version += 1
        deltas.append(GraphDelta(DeltaKind.NODE_REMOVED, self.version, node=u))
        return deltas

    def copy(self) -> "InteractionGraph":
        g = InteractionGraph()
        g._labels = dict(self._labels)
        g._ids = dict(self._ids)
        g._out = {u: dict(nbrs) for u, nbrs in self._out.items()}
        g._in = {u: dict(nbrs) for u, nbrs in self._in.items()}
        g._out_weight = dict(self._out_weight)
        g._acc = dict(self._acc)
        g._next_id = self._next_id
        g.version = self.version
        return g

    # ---- internals ---------------------------------------------------------

    @staticmethod
    def _derive_edge(lo: int, hi: int, acc: float) -> tuple[int, int, float] | None:
        if acc == 0.0:
            return None
        if acc > 0.0:
            return (hi, lo, acc)  # lo is the creditor: edge points toward lo
        return (lo, hi, -acc)

    def _link(self, src: int, dst: int, weight: float) -> None:
        self._out[src][dst] = weight
        self._in[dst][src] = weight
        self._out_weight[src] = math.fsum(self._out[src].values())

    def _unlink(self, src: int, dst: int) -> None:
        del self._out[src][dst]
        del self._in[dst][src]
        self._out_weight[src] = math.fsum(self._out[src].values())

    def _require(self, u: int) -> None:
        if u not in self._labels:
            raise NoSuchNodeError(f"no such node: {u}")


# ---- CSV exchange format -----------------------------------------------

def _nodes_path(path: Path) -> Path:
    return path.with_name(path.stem + ".nodes.csv")


def dump_graph_csv(g: InteractionGraph, path: str | Path) -> None:
    """Write the edge list to ``path`` and isolated-node labels to the
    companion ``<stem>.nodes.csv``. Weights use 17 significant digits so the
    dump/load cycle is bit-exact."""
    path = Path(path)
    rows = sorted(
        (g.label_of(u), g.label_of(v), w) for u, v, w in g.edges()
    )
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["source_label", "target_label", "weight"])
        for src, dst, w in rows:
            writer.writerow([src, dst, f"{w:.17g}"])
    isolated = sorted(
        g.label_of(u) for u in g.nodes() if not g.out_edges(u) and not g.in_edges(u)
    )
    with open(_nodes_path(path), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label"])
        for label in isolated:
            writer.writerow([label])


def load_graph_csv(path: str | Path) -> InteractionGraph:
    """Load a graph dumped by :func:`dump_graph_csv`. The companion nodes file
    is optional; without it the graph has no isolated nodes."""
    path = Path(path)
    g = InteractionGraph()

    def ensure(label: str) -> int:
        if g.has_label(label):
            return g.id_of(label)
        return g.add_node(label)

    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["source_label", "target_label", "weight"]:
            raise GraphError(f"unrecognized graph CSV header: {header}")
        for row in reader:
            if not row:
                continue
            if len(row) != 3:
                raise GraphError(f"malformed graph CSV row: {row}")
            src, dst = ensure(row[0]), ensure(row[1])
            g.set_edge(src, dst, float(row[2]))
    npath = _nodes_path(path)
    if npath.exists():
        with open(npath, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["label"]:
                raise GraphError(f"unrecognized node CSV header: {header}")
            for row in reader:
                if row:
                    ensure(row[0])
    return g
