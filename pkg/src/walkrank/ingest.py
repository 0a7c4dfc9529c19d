"""Flatten a bandwidth-accounting ledger into an interaction graph.

Each block records one transaction between a requester and a responder
public key; the ``up``/``down`` byte counts are taken from the requester's
perspective. Flattening sums ``up - down`` per unordered key pair and lets
the graph derive edge weight and direction from the accumulated net flow.
Running ``total_up``/``total_down`` columns are carried along but never used
for weights (summing them would double count).

Two source formats are supported: a SQLite file with one ``blocks`` table
(the ``tx`` column is a JSON object with keys total_up/total_down/up/down)
and a CSV export with the tx fields split into their own columns and byte
strings hex-encoded.
"""
from __future__ import annotations

import csv
import json
import sqlite3
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .graph import DeltaKind, InteractionGraph

SQLITE_COLUMNS = [
    "type", "tx", "public_key", "sequence_number", "link_public_key",
    "link_sequence_number", "previous_hash", "signature", "block_timestamp",
    "insert_time", "block_hash",
]

CSV_COLUMNS = [
    "type", "up", "down", "total_up", "total_down", "public_key",
    "sequence_number", "link_public_key", "link_sequence_number",
    "previous_hash", "signature", "block_timestamp", "insert_time",
    "block_hash",
]

SKIP_MALFORMED_TX = "malformed-tx"
SKIP_SELF_PAIR = "self-pair"
SKIP_DUPLICATE = "duplicate-half-block"


class IngestError(ValueError):
    """Fatal ingest failure (unreadable file, unknown schema)."""


class SchemaError(IngestError):
    def __init__(self, missing: Sequence[str]):
        self.missing = sorted(missing)
        super().__init__(f"unknown schema, missing columns: {', '.join(self.missing)}")


@dataclass(frozen=True)
class BlockRecord:
    block_type: str
    tx_total_up: int
    tx_total_down: int
    tx_up: int
    tx_down: int
    public_key: str
    sequence_number: int
    link_public_key: str
    link_sequence_number: int
    previous_hash: str
    signature: str
    block_timestamp: int
    insert_time: int
    block_hash: str


@dataclass(frozen=True)
class SkipEvent:
    """A row that could not be turned into a BlockRecord."""

    reason: str
    detail: str = ""


@dataclass
class IngestReport:
    blocks_read: int = 0
    blocks_counted: int = 0
    blocks_skipped: int = 0
    skipped_by_reason: dict[str, int] = field(default_factory=dict)
    nodes_created: int = 0
    edges_created: int = 0
    edges_removed: int = 0
    edges_reversed: int = 0

    def skip(self, reason: str) -> None:
        self.blocks_read += 1
        self.blocks_skipped += 1
        self.skipped_by_reason[reason] = self.skipped_by_reason.get(reason, 0) + 1

    def as_dict(self) -> dict:
        return {
            "blocks_read": self.blocks_read,
            "blocks_counted": self.blocks_counted,
            "blocks_skipped": self.blocks_skipped,
            "skipped_by_reason": dict(self.skipped_by_reason),
            "nodes_created": self.nodes_created,
            "edges_created": self.edges_created,
            "edges_removed": self.edges_removed,
            "edges_reversed": self.edges_reversed,
        }


def _as_text(value) -> str:
    if isinstance(value, (bytes, bytearray, memoryview)):
        return bytes(value).hex()
    return str(value)


def _nonneg_int(value) -> int:
    n = int(value)
    if n < 0:
        raise ValueError(f"negative byte count: {n}")
    return n


def read_blocks(path: str | Path, fmt: str) -> Iterator[BlockRecord | SkipEvent]:
    """Stream records in (block_timestamp, block_hash) order.

    Malformed rows come out as SkipEvents at their sorted position instead of
    being dropped; missing columns or an unreadable file abort outright.
    """
    path = Path(path)
    if not path.exists():
        raise IngestError(f"cannot read {path}: no such file")
    if fmt == "sqlite":
        yield from _read_sqlite(path)
    elif fmt == "csv":
        yield from _read_csv(path)
    else:
        raise IngestError(f"unknown source format: {fmt!r}")


def _read_sqlite(path: Path) -> Iterator[BlockRecord | SkipEvent]:
    try:
        con = sqlite3.connect(f"file:{path}?mode=ro", uri=True)
    except sqlite3.Error as exc:  # pragma: no cover - connect rarely fails
        raise IngestError(f"cannot read {path}: {exc}") from exc
    try:
        try:
            cols = [row[1] for row in con.execute("PRAGMA table_info(blocks)")]
        except sqlite3.DatabaseError as exc:
            raise IngestError(f"cannot read {path}: {exc}") from exc
        missing = [c for c in SQLITE_COLUMNS if c not in cols]
        if missing or not cols:
            raise SchemaError(missing or SQLITE_COLUMNS)
        query = (
            "SELECT type, tx, public_key, sequence_number, link_public_key,"
            " link_sequence_number, previous_hash, signature, block_timestamp,"
            " insert_time, block_hash FROM blocks"
            " ORDER BY block_timestamp, block_hash"
        )
        for row in con.execute(query):
            yield _sqlite_row_to_record(row)
    finally:
        con.close()


def _sqlite_row_to_record(row) -> BlockRecord | SkipEvent:
    (btype, tx, pk, seq, link_pk, link_seq, prev, sig, ts, ins, bhash) = row
    try:
        tx_obj = json.loads(_as_text(tx))
        if not isinstance(tx_obj, dict):
            raise ValueError("tx is not an object")
        return BlockRecord(
            block_type=_as_text(btype),
            tx_total_up=_nonneg_int(tx_obj["total_up"]),
            tx_total_down=_nonneg_int(tx_obj["total_down"]),
            tx_up=_nonneg_int(tx_obj["up"]),
            tx_down=_nonneg_int(tx_obj["down"]),
            public_key=_as_text(pk),
            sequence_number=_nonneg_int(seq),
            link_public_key=_as_text(link_pk),
            link_sequence_number=_nonneg_int(link_seq),
            previous_hash=_as_text(prev),
            signature=_as_text(sig),
            block_timestamp=int(ts),
            insert_time=int(ins),
            block_hash=_as_text(bhash),
        )
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        return SkipEvent(SKIP_MALFORMED_TX, f"block {_as_text(bhash)}: {exc}")


def _read_csv(path: Path) -> Iterator[BlockRecord | SkipEvent]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return
        missing = [c for c in CSV_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise SchemaError(missing)
        items: list[BlockRecord | SkipEvent] = []
        for row in reader:
            items.append(_csv_row_to_record(row))
    def sort_key(item):
        if isinstance(item, BlockRecord):
            return (item.block_timestamp, item.block_hash)
        return (0, "")
    items.sort(key=sort_key)
    yield from items


def _csv_row_to_record(row: dict) -> BlockRecord | SkipEvent:
    try:
        return BlockRecord(
            block_type=row["type"],
            tx_total_up=_nonneg_int(row["total_up"]),
            tx_total_down=_nonneg_int(row["total_down"]),
            tx_up=_nonneg_int(row["up"]),
            tx_down=_nonneg_int(row["down"]),
            public_key=row["public_key"],
            sequence_number=_nonneg_int(row["sequence_number"]),
            link_public_key=row["link_public_key"],
            link_sequence_number=_nonneg_int(row["link_sequence_number"]),
            previous_hash=row["previous_hash"],
            signature=row["signature"],
            block_timestamp=int(row["block_timestamp"]),
            insert_time=int(row["insert_time"]),
            block_hash=row["block_hash"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        return SkipEvent(SKIP_MALFORMED_TX, f"row {row.get('block_hash', '?')}: {exc}")


def flatten(
    records: Iterable[BlockRecord | SkipEvent],
) -> tuple[InteractionGraph, IngestReport]:
    """Accumulate per-pair net flows block by block and derive the graph.

    Skips self-pairs and duplicate half-blocks (same requester key and chain
    sequence number); every anomaly is counted, nothing fatal.
    """
    g = InteractionGraph()
    report = IngestReport()
    seen: set[tuple[str, int]] = set()

    def node_for(key: str) -> int:
        if g.has_label(key):
            return g.id_of(key)
        report.nodes_created += 1
        return g.add_node(key)

    for item in records:
        if isinstance(item, SkipEvent):
            report.skip(item.reason)
            continue
        if item.public_key == item.link_public_key:
            report.skip(SKIP_SELF_PAIR)
            continue
        half = (item.public_key, item.sequence_number)
        if half in seen:
            report.skip(SKIP_DUPLICATE)
            continue
        seen.add(half)
        report.blocks_read += 1
        report.blocks_counted += 1
        requester = node_for(item.public_key)
        responder = node_for(item.link_public_key)
        delta = g.upsert_net_flow(requester, responder, float(item.tx_up - item.tx_down))
        if delta is None:
            continue
        if delta.kind is DeltaKind.EDGE_ADDED:
            report.edges_created += 1
        elif delta.kind is DeltaKind.EDGE_REMOVED:
            report.edges_removed += 1
        elif delta.kind is DeltaKind.EDGE_REVERSED:
            report.edges_reversed += 1
    return g, report


def holdback_split(
    records: Sequence[BlockRecord | SkipEvent],
    n_nodes_held: int,
    n_edges_held: int,
    rng_seed: int | None = None,
) -> tuple[list[BlockRecord | SkipEvent], list[BlockRecord]]:
    """Partition the stream so the initial part omits every block touching the
    held-back nodes and pairs; the delta part holds exactly those blocks.

    Held nodes default to the last ``n_nodes_held`` keys to appear (their
    whole transaction history is held back); held pairs are the last
    ``n_edges_held`` distinct pairs not already touching a held node. Pass
    ``rng_seed`` to pick both uniformly at random instead.
    """
    blocks = [r for r in records if isinstance(r, BlockRecord)]
    key_order: list[str] = []
    key_seen: set[str] = set()
    pair_order: list[tuple[str, str]] = []
    pair_seen: set[tuple[str, str]] = set()
    for b in blocks:
        if b.public_key == b.link_public_key:
            continue
        for key in (b.public_key, b.link_public_key):
            if key not in key_seen:
                key_seen.add(key)
                key_order.append(key)
        pair = _pair(b.public_key, b.link_public_key)
        if pair not in pair_seen:
            pair_seen.add(pair)
            pair_order.append(pair)

    if n_nodes_held > len(key_order):
        raise IngestError(
            f"holdback of {n_nodes_held} nodes exceeds {len(key_order)} distinct keys"
        )
    if rng_seed is None:
        held_keys = set(key_order[len(key_order) - n_nodes_held:])
    else:
        rng = np.random.default_rng(rng_seed)
        picks = rng.choice(len(key_order), size=n_nodes_held, replace=False)
        held_keys = {key_order[int(i)] for i in picks}

    free_pairs = [
        p for p in pair_order if p[0] not in held_keys and p[1] not in held_keys
    ]
    if n_edges_held > len(free_pairs):
        raise IngestError(
            f"holdback of {n_edges_held} edges exceeds {len(free_pairs)}"
            " distinct pairs outside held nodes"
        )
    if rng_seed is None:
        held_pairs = set(free_pairs[len(free_pairs) - n_edges_held:])
    else:
        picks = rng.choice(len(free_pairs), size=n_edges_held, replace=False)
        held_pairs = {free_pairs[int(i)] for i in picks}

    initial: list[BlockRecord | SkipEvent] = []
    delta: list[BlockRecord] = []
    for item in records:
        if isinstance(item, SkipEvent):
            initial.append(item)
            continue
        held = (
            item.public_key in held_keys
            or item.link_public_key in held_keys
            or _pair(item.public_key, item.link_public_key) in held_pairs
        )
        (delta if held else initial).append(item)
    return initial, delta


def aggregate_delta_flows(
    delta_blocks: Sequence[BlockRecord], known_labels: set[str]
) -> list[tuple[str, str, str, float]]:
    """Turn held-back blocks into mutation rows for the update command:
    ``add_node`` rows for unseen keys, then one aggregated ``flow`` row per
    pair in first-seen order (requester->responder net sum)."""
    rows: list[tuple[str, str, str, float]] = []
    introduced: set[str] = set()
    flows: dict[tuple[str, str], float] = {}
    order: list[tuple[str, str]] = []
    for b in delta_blocks:
        if b.public_key == b.link_public_key:
            continue
        for key in (b.public_key, b.link_public_key):
            if key not in known_labels and key not in introduced:
                introduced.add(key)
                rows.append(("add_node", key, "", 0.0))
        pair = _pair(b.public_key, b.link_public_key)
        if pair not in flows:
            flows[pair] = 0.0
            order.append(pair)
        signed = float(b.tx_up - b.tx_down)
        flows[pair] += signed if b.public_key == pair[0] else -signed
    for pair in order:
        if flows[pair] != 0.0:
            rows.append(("flow", pair[0], pair[1], flows[pair]))
    return rows


def _pair(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a < b else (b, a)
