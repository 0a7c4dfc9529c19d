"""Synthetic inputs: random interaction graphs, random mutation scripts, and
a fake ledger large enough to exercise the full ingest -> rank -> update
pipeline without the original dataset.
"""
from __future__ import annotations

import sqlite3
from pathlib import Path

import numpy as np

from .graph import DeltaKind, GraphDelta, InteractionGraph

LEDGER_COLUMNS = [
    "type", "tx", "public_key", "sequence_number", "link_public_key",
    "link_sequence_number", "previous_hash", "signature", "block_timestamp",
    "insert_time", "block_hash",
]


def random_graph(
    n_nodes: int,
    out_degree: int = 2,
    weight_range: tuple[float, float] = (0.0, 10.0),
    rng_seed: int = 0,
) -> InteractionGraph:
    """Random graph with up to ``out_degree`` out-edges per node.

    Node ids are 0..n-1 (node 0 doubles as the conventional seed node). Each
    node draws distinct targets among nodes whose unordered pair is still
    free, so small graphs may fall short of the requested degree; that is the
    price of the one-edge-per-pair invariant and mirrors how dangling nodes
    arise naturally.
    """
    rng = np.random.default_rng(rng_seed)
    g = InteractionGraph()
    for _ in range(n_nodes):
        g.add_node()
    lo, hi = weight_range
    for u in range(n_nodes):
        candidates = [v for v in range(n_nodes) if v != u and g.net_flow(u, v) == 0.0]
        k = min(out_degree, len(candidates))
        if k == 0:
            continue
        targets = rng.choice(len(candidates), size=k, replace=False)
        for t in sorted(targets):
            v = candidates[int(t)]
            w = float(rng.uniform(lo, hi))
            if w <= 0.0:
                w = (lo + hi) / 2 or 1.0
            g.set_edge(u, v, w)
    return g


def random_mutation(
    g: InteractionGraph, rng: np.random.Generator, protect: frozenset[int] = frozenset()
) -> list[GraphDelta]:
    """Apply one random mutation to ``g`` and return its delta batch.

    Mutations route through the signed net-flow accumulator, so edge adds,
    reweights, reversals and removals all occur organically; node add/remove
    appear with low probability. Nodes in ``protect`` are never removed.
    """
    nodes = g.nodes()
    roll = rng.random()
    if roll < 0.05 or len(nodes) < 2:
        node = g.add_node()
        return [GraphDelta(kind=DeltaKind.NODE_ADDED, version=g.version, node=node)]
    if roll < 0.10:
        removable = [u for u in nodes if u not in protect]
        if removable:
            victim = int(removable[int(rng.integers(len(removable)))])
            return g.remove_node(victim)
    a, b = rng.choice(len(nodes), size=2, replace=False)
    a, b = int(nodes[int(a)]), int(nodes[int(b)])
    flow = g.net_flow(a, b)
    if flow != 0.0 and rng.random() < 0.25:
        delta = -flow  # exact cancellation: edge removal
    else:
        delta = float(rng.uniform(-10.0, 10.0))
        if delta == 0.0:
            delta = 1.0
    d = g.upsert_net_flow(a, b, delta)
    return [d] if d is not None else []


def synthetic_ledger_rows(
    n_keys: int = 300,
    n_blocks: int = 100_000,
    n_late_keys: int = 5,
    n_pairs: int = 1200,
    rng_seed: int = 7,
) -> list[dict]:
    """Build a plausible block stream: ``n_keys`` public keys, ``n_blocks``
    transactions concentrated on ``n_pairs`` recurring pairs.

    The last ``n_late_keys`` keys only transact in the final stretch with a
    couple of counterparties each, so a last-seen node holdback picks exactly
    them and the resulting delta stream stays small.
    """
    if n_late_keys >= n_keys:
        raise ValueError("n_late_keys must be smaller than n_keys")
    rng = np.random.default_rng(rng_seed)
    keys = [f"{i:056x}" for i in range(n_keys)]
    early = n_keys - n_late_keys

    pairs: set[tuple[int, int]] = set()
    # ring through all early keys guarantees every key transacts at least once
    for i in range(early):
        pairs.add(tuple(sorted((i, (i + 1) % early))))
    while len(pairs) < n_pairs:
        a, b = rng.integers(0, early, size=2)
        if a != b:
            pairs.add(tuple(sorted((int(a), int(b)))))
    pair_list = sorted(pairs)

    seq: dict[int, int] = {i: 0 for i in range(n_keys)}
    rows: list[dict] = []

    def emit(i: int, a: int, b: int) -> None:
        if rng.random() < 0.5:
            a, b = b, a
        up = int(rng.integers(0, 1_000_000))
        down = int(rng.integers(0, 1_000_000))
        seq[a] += 1
        rows.append({
            "type": "tribler_bandwidth",
            "up": up,
            "down": down,
            "total_up": 0,   # running totals are deliberately not maintained:
            "total_down": 0,  # flattening must never read them
            "public_key": keys[a],
            "sequence_number": seq[a],
            "link_public_key": keys[b],
            "link_sequence_number": seq[b] + 1,
            "previous_hash": f"{i:040x}",
            "signature": f"{i ^ 0xabcdef:040x}",
            "block_timestamp": 1_500_000_000 + i,
            "insert_time": 1_500_000_000 + i,
            "block_hash": f"{i:064x}",
        })

    n_late_blocks = 10 * n_late_keys
    n_main = n_blocks - n_late_blocks
    for i in range(n_main):
        a, b = pair_list[int(rng.integers(len(pair_list)))]
        emit(i, a, b)
    # late joiners: each trades a handful of times with two early partners
    for j in range(n_late_blocks):
        late = early + (j % n_late_keys)
        partner = int(rng.integers(0, early)) if j % 2 else (late * 13) % early
        emit(n_main + j, late, partner)
    return rows


def write_ledger_sqlite(rows: list[dict], path: str | Path) -> None:
    con = sqlite3.connect(str(path))
    try:
        con.execute(
            "CREATE TABLE blocks (type TEXT, tx TEXT, public_key TEXT,"
            " sequence_number INTEGER, link_public_key TEXT,"
            " link_sequence_number INTEGER, previous_hash TEXT, signature TEXT,"
            " block_timestamp INTEGER, insert_time INTEGER, block_hash TEXT)"
        )
        con.executemany(
            "INSERT INTO blocks VALUES (?,?,?,?,?,?,?,?,?,?,?)",
            (
                (
                    r["type"],
                    '{"total_up": %d, "total_down": %d, "up": %d, "down": %d}'
                    % (r["total_up"], r["total_down"], r["up"], r["down"]),
                    r["public_key"],
                    r["sequence_number"],
                    r["link_public_key"],
                    r["link_sequence_number"],
                    r["previous_hash"],
                    r["signature"],
                    r["block_timestamp"],
                    r["insert_time"],
                    r["block_hash"],
                )
                for r in rows
            ),
        )
        con.commit()
    finally:
        con.close()


def write_ledger_csv(rows: list[dict], path: str | Path) -> None:
    import csv

    fields = [
        "type", "up", "down", "total_up", "total_down", "public_key",
        "sequence_number", "link_public_key", "link_sequence_number",
        "previous_hash", "signature", "block_timestamp", "insert_time",
        "block_hash",
    ]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: r[k] for k in fields})
