import csv
import json
import sqlite3

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from walkrank.ingest import (
    CSV_COLUMNS,
    SKIP_DUPLICATE,
    SKIP_MALFORMED_TX,
    SKIP_SELF_PAIR,
    BlockRecord,
    IngestError,
    SchemaError,
    SkipEvent,
    aggregate_delta_flows,
    flatten,
    holdback_split,
    read_blocks,
)


def make_block(pk, link_pk, up, down, seq=1, ts=100, bhash=None, **overrides):
    fields = dict(
        block_type="tribler_bandwidth",
        tx_total_up=0,
        tx_total_down=0,
        tx_up=up,
        tx_down=down,
        public_key=pk,
        sequence_number=seq,
        link_public_key=link_pk,
        link_sequence_number=1,
        previous_hash="00",
        signature="00",
        block_timestamp=ts,
        insert_time=ts,
        block_hash=bhash if bhash is not None else f"{ts:08x}{pk}{seq}",
    )
    fields.update(overrides)
    return BlockRecord(**fields)


def write_sqlite(path, rows):
    con = sqlite3.connect(path)
    con.execute(
        "CREATE TABLE blocks (type TEXT, tx TEXT, public_key TEXT,"
        " sequence_number INTEGER, link_public_key TEXT,"
        " link_sequence_number INTEGER, previous_hash TEXT, signature TEXT,"
        " block_timestamp INTEGER, insert_time INTEGER, block_hash TEXT)"
    )
    con.executemany("INSERT INTO blocks VALUES (?,?,?,?,?,?,?,?,?,?,?)", rows)
    con.commit()
    con.close()


def sqlite_row(pk, link_pk, up, down, seq=1, ts=100, tx=None, bhash=None):
    tx_text = tx if tx is not None else json.dumps(
        {"total_up": 0, "total_down": 0, "up": up, "down": down}
    )
    return (
        "tribler_bandwidth", tx_text, pk, seq, link_pk, 1, "00", "00",
        ts, ts, bhash if bhash is not None else f"{ts:08x}{pk}{seq}",
    )


def write_csv(path, dict_rows, columns=None):
    columns = columns or CSV_COLUMNS
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in dict_rows:
            writer.writerow(row)


def csv_row(pk, link_pk, up, down, seq=1, ts=100):
    return {
        "type": "tribler_bandwidth", "up": up, "down": down,
        "total_up": 0, "total_down": 0, "public_key": pk,
        "sequence_number": seq, "link_public_key": link_pk,
        "link_sequence_number": 1, "previous_hash": "00", "signature": "00",
        "block_timestamp": ts, "insert_time": ts,
        "block_hash": f"{ts:08x}{pk}{seq}",
    }


# ---- read_blocks -----------------------------------------------------------

def test_sqlite_read_sorted_by_timestamp_then_hash(tmp_path):
    db = tmp_path / "ledger.db"
    write_sqlite(db, [
        sqlite_row("A", "B", 1, 0, seq=1, ts=300, bhash="zz"),
        sqlite_row("A", "B", 1, 0, seq=2, ts=100, bhash="bb"),
        sqlite_row("A", "B", 1, 0, seq=3, ts=100, bhash="aa"),
    ])
    records = list(read_blocks(db, "sqlite"))
    assert [(r.block_timestamp, r.block_hash) for r in records] == [
        (100, "aa"), (100, "bb"), (300, "zz"),
    ]


def test_csv_read_sorted(tmp_path):
    path = tmp_path / "ledger.csv"
    write_csv(path, [csv_row("A", "B", 1, 0, seq=i, ts=ts) for i, ts in
                     enumerate([500, 100, 300])])
    records = list(read_blocks(path, "csv"))
    assert [r.block_timestamp for r in records] == [100, 300, 500]


def test_empty_table_empty_stream(tmp_path):
    db = tmp_path / "empty.db"
    write_sqlite(db, [])
    records = list(read_blocks(db, "sqlite"))
    assert records == []
    g, report = flatten(records)
    assert report.blocks_read == 0
    assert g.node_count == 0


def test_missing_file_fatal(tmp_path):
    with pytest.raises(IngestError, match="no such file"):
        list(read_blocks(tmp_path / "nope.db", "sqlite"))


def test_csv_missing_column_fatal(tmp_path):
    path = tmp_path / "bad.csv"
    columns = [c for c in CSV_COLUMNS if c != "up"]
    rows = [{k: v for k, v in csv_row("A", "B", 1, 0).items() if k != "up"}]
    write_csv(path, rows, columns=columns)
    with pytest.raises(SchemaError, match="up") as exc:
        list(read_blocks(path, "csv"))
    assert exc.value.missing == ["up"]


def test_sqlite_missing_column_fatal(tmp_path):
    db = tmp_path / "bad.db"
    con = sqlite3.connect(db)
    con.execute("CREATE TABLE blocks (type TEXT, public_key TEXT)")
    con.commit()
    con.close()
    with pytest.raises(SchemaError, match="tx"):
        list(read_blocks(db, "sqlite"))


def test_sqlite_malformed_tx_yields_skip_event(tmp_path):
    db = tmp_path / "ledger.db"
    write_sqlite(db, [
        sqlite_row("A", "B", 1, 0, seq=1, ts=100),
        sqlite_row("A", "B", 0, 0, seq=2, ts=200,
                   tx=json.dumps({"total_up": 0, "total_down": 0, "down": 3})),
        sqlite_row("A", "B", 0, 0, seq=3, ts=300, tx="not json"),
    ])
    items = list(read_blocks(db, "sqlite"))
    skips = [i for i in items if isinstance(i, SkipEvent)]
    assert len(skips) == 2
    assert all(s.reason == SKIP_MALFORMED_TX for s in skips)
    _, report = flatten(items)
    assert report.skipped_by_reason[SKIP_MALFORMED_TX] == 2
    assert report.blocks_counted == 1


def test_csv_missing_up_value_counts_malformed(tmp_path):
    path = tmp_path / "ledger.csv"
    row = csv_row("A", "B", 1, 0)
    row["up"] = ""
    write_csv(path, [row])
    items = list(read_blocks(path, "csv"))
    assert isinstance(items[0], SkipEvent)
    _, report = flatten(items)
    assert report.skipped_by_reason[SKIP_MALFORMED_TX] == 1


def test_unknown_format_fatal(tmp_path):
    path = tmp_path / "x.bin"
    path.write_text("")
    with pytest.raises(IngestError, match="unknown source format"):
        list(read_blocks(path, "parquet"))


# ---- flatten ----------------------------------------------------------------

def test_flatten_two_blocks_net_six():
    # A uploads 10 to B, B uploads 4 back: B is the net downloader of 6,
    # so the stored edge runs B -> A with weight 6
    records = [
        make_block("A", "B", up=10, down=0, seq=1, ts=1),
        make_block("B", "A", up=4, down=0, seq=1, ts=2),
    ]
    g, report = flatten(records)
    adj = g.adjacency_by_labels()
    assert adj["B"] == {"A": 6.0}
    assert adj["A"] == {}
    assert report.blocks_counted == 2
    assert report.nodes_created == 2
    assert report.edges_created == 1


def test_flatten_self_pair_skipped():
    g, report = flatten([make_block("A", "A", up=5, down=0)])
    assert report.skipped_by_reason[SKIP_SELF_PAIR] == 1
    assert report.blocks_counted == 0
    assert g.node_count == 0


def test_flatten_duplicate_half_block_skipped():
    block = make_block("A", "B", up=10, down=0, seq=7, ts=5)
    g, report = flatten([block, block])
    assert report.skipped_by_reason[SKIP_DUPLICATE] == 1
    assert g.adjacency_by_labels()["B"] == {"A": 10.0}


def test_flatten_never_reads_totals():
    # totals wildly disagree with up/down sums; only up/down may matter
    records = [
        make_block("A", "B", up=3, down=1, seq=1,
                   tx_total_up=10 ** 9, tx_total_down=10 ** 9),
    ]
    g, _ = flatten(records)
    assert g.adjacency_by_labels()["B"] == {"A": 2.0}


def test_flatten_report_totals_consistent():
    records = [
        make_block("A", "B", up=10, down=0, seq=1, ts=1),
        make_block("A", "A", up=1, down=0, seq=2, ts=2),
        make_block("B", "A", up=10, down=0, seq=1, ts=3),
    ]
    g, report = flatten(records)
    assert report.blocks_read == report.blocks_counted + report.blocks_skipped
    # the two counted blocks cancel exactly: edge removed again
    assert g.edge_count == 0
    assert report.edges_removed == 1


@given(st.permutations(range(6)))
@settings(max_examples=40, deadline=None)
def test_flatten_order_independence(order):
    base = [
        make_block("A", "B", up=10, down=2, seq=1, ts=1),
        make_block("B", "A", up=7, down=0, seq=1, ts=2),
        make_block("A", "C", up=1, down=5, seq=2, ts=3),
        make_block("C", "B", up=2, down=2, seq=1, ts=4),
        make_block("B", "C", up=9, down=1, seq=2, ts=5),
        make_block("A", "B", up=0, down=4, seq=3, ts=6),
    ]
    g_base, _ = flatten(base)
    g_perm, _ = flatten([base[i] for i in order])
    assert g_perm.adjacency_by_labels() == g_base.adjacency_by_labels()


# ---- holdback ---------------------------------------------------------------

def _stream(n_keys=8, n_blocks=60):
    records = []
    for i in range(n_blocks):
        a = i % n_keys
        b = (i * 3 + 1) % n_keys
        if a == b:
            b = (b + 1) % n_keys
        records.append(
            make_block(f"k{a}", f"k{b}", up=(i * 7) % 50, down=(i * 5) % 40,
                       seq=i, ts=i)
        )
    return records


def test_holdback_zero_is_identity():
    records = _stream()
    initial, delta = holdback_split(records, 0, 0)
    assert delta == []
    assert initial == records


def test_holdback_partition_is_exact():
    records = _stream()
    initial, delta = holdback_split(records, 2, 3)
    assert len(initial) + len(delta) == len(records)
    merged = sorted(initial + delta, key=lambda r: r.block_timestamp)
    assert merged == records


def test_holdback_reassembly_flattens_identically():
    records = _stream()
    initial, delta = holdback_split(records, 2, 3)
    g_full, _ = flatten(records)
    g_merged, _ = flatten(initial + delta)
    assert g_merged.adjacency_by_labels() == g_full.adjacency_by_labels()


def test_holdback_initial_never_touches_held_nodes():
    records = _stream()
    initial, delta = holdback_split(records, 2, 0)
    held_keys = {k for r in delta for k in (r.public_key, r.link_public_key)}
    # the held keys that caused the split never appear in the initial stream
    initial_keys = {k for r in initial for k in (r.public_key, r.link_public_key)}
    assert len(held_keys - initial_keys) == 2


def test_holdback_last_seen_is_deterministic():
    records = _stream()
    split_a = holdback_split(records, 2, 3)
    split_b = holdback_split(records, 2, 3)
    assert split_a == split_b


def test_holdback_random_mode_seeded():
    records = _stream()
    split_a = holdback_split(records, 2, 3, rng_seed=11)
    split_b = holdback_split(records, 2, 3, rng_seed=11)
    split_c = holdback_split(records, 2, 3, rng_seed=12)
    assert split_a == split_b
    assert split_a != split_c


def test_holdback_too_large_fatal():
    records = _stream(n_keys=4, n_blocks=10)
    with pytest.raises(IngestError, match="exceeds"):
        holdback_split(records, 10, 0)
    with pytest.raises(IngestError, match="exceeds"):
        holdback_split(records, 0, 10_000)


def test_aggregate_delta_flows_matches_full_flatten():
    records = _stream()
    initial, delta = holdback_split(records, 1, 2)
    g, _ = flatten(initial)
    rows = aggregate_delta_flows(delta, set(g.labels().values()))
    ops = {op for op, *_ in rows}
    assert ops <= {"add_node", "flow"}
    for op, a, b, flow in rows:
        if op == "add_node":
            g.add_node(a)
        else:
            g.upsert_net_flow(g.id_of(a), g.id_of(b), flow)
    g_full, _ = flatten(records)
    assert g.adjacency_by_labels() == g_full.adjacency_by_labels()
