import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from walkrank.graph import (
    DeltaKind,
    InteractionGraph,
    LabelExistsError,
    NoSuchNodeError,
    SelfInteractionError,
    dump_graph_csv,
    load_graph_csv,
)


def test_add_node_first_insertion():
    g = InteractionGraph()
    node = g.add_node("pk_A")
    assert node == 0
    assert g.node_count == 1
    assert g.label_of(node) == "pk_A"


def test_add_node_duplicate_label_rejected():
    g = InteractionGraph()
    g.add_node("pk_A")
    with pytest.raises(LabelExistsError, match="label exists"):
        g.add_node("pk_A")


def test_add_many_nodes():
    g = InteractionGraph()
    for i in range(289):
        g.add_node(f"pk_{i}")
    assert g.node_count == 289


def test_upsert_single_interaction_creates_creditor_edge():
    g = InteractionGraph()
    a, b = g.add_node("a"), g.add_node("b")
    delta = g.upsert_net_flow(a, b, 5.0)
    assert delta.kind is DeltaKind.EDGE_ADDED
    # a uploaded 5 net, so a is the creditor and the edge points toward a
    assert (delta.source, delta.target, delta.new_weight) == (b, a, 5.0)
    assert g.out_edges(b) == {a: 5.0}
    assert g.in_edges(a) == {b: 5.0}


def test_upsert_exact_cancellation_removes_edge():
    g = InteractionGraph()
    a, b = g.add_node("a"), g.add_node("b")
    g.upsert_net_flow(a, b, 5.0)
    delta = g.upsert_net_flow(a, b, -5.0)
    assert delta.kind is DeltaKind.EDGE_REMOVED
    assert g.edge_count == 0
    assert g.net_flow(a, b) == 0.0


def test_upsert_sign_flip_reverses_edge():
    # signed-sum arithmetic by hand: +3 - 10 = -7, so b becomes the creditor
    g = InteractionGraph()
    a, b = g.add_node("a"), g.add_node("b")
    g.upsert_net_flow(a, b, 3.0)
    delta = g.upsert_net_flow(a, b, -10.0)
    assert delta.kind is DeltaKind.EDGE_REVERSED
    assert (delta.source, delta.target) == (a, b)
    assert delta.new_weight == pytest.approx(7.0)
    assert g.net_flow(a, b) == pytest.approx(-7.0)
    assert g.out_edges(a) == {b: pytest.approx(7.0)}


def test_upsert_reweight():
    g = InteractionGraph()
    a, b = g.add_node("a"), g.add_node("b")
    g.upsert_net_flow(a, b, 5.0)
    delta = g.upsert_net_flow(a, b, 3.0)
    assert delta.kind is DeltaKind.EDGE_REWEIGHTED
    assert delta.old_weight == 5.0
    assert delta.new_weight == 8.0


def test_upsert_rejects_self_interaction():
    g = InteractionGraph()
    a = g.add_node("a")
    with pytest.raises(SelfInteractionError, match="self-interaction rejected"):
        g.upsert_net_flow(a, a, 1.0)


def test_upsert_unknown_node():
    g = InteractionGraph()
    a = g.add_node("a")
    with pytest.raises(NoSuchNodeError, match="no such node"):
        g.upsert_net_flow(a, 99, 1.0)


def test_upsert_zero_delta_is_noop():
    g = InteractionGraph()
    a, b = g.add_node("a"), g.add_node("b")
    before = g.version
    assert g.upsert_net_flow(a, b, 0.0) is None
    assert g.version == before


def test_remove_isolated_node():
    g = InteractionGraph()
    a = g.add_node("a")
    deltas = g.remove_node(a)
    assert [d.kind for d in deltas] == [DeltaKind.NODE_REMOVED]
    assert g.node_count == 0


def test_remove_node_with_edges_counts_deltas():
    g = InteractionGraph()
    u = g.add_node("u")
    others = [g.add_node(f"n{i}") for i in range(3)]
    g.set_edge(others[0], u, 1.0)  # in-edge
    g.set_edge(others[1], u, 2.0)  # in-edge
    g.set_edge(u, others[2], 3.0)  # out-edge
    before = g.version
    deltas = g.remove_node(u)
    kinds = [d.kind for d in deltas]
    assert kinds.count(DeltaKind.EDGE_REMOVED) == 3
    assert kinds[-1] is DeltaKind.NODE_REMOVED
    # version bumped once per constituent change, deltas stamped in order
    assert [d.version for d in deltas] == list(range(before + 1, before + 5))
    assert g.edge_count == 0


def test_remove_unknown_node():
    g = InteractionGraph()
    with pytest.raises(NoSuchNodeError, match="no such node"):
        g.remove_node(5)


def test_out_distribution_proportional():
    g = InteractionGraph()
    u, x, y = g.add_node("u"), g.add_node("x"), g.add_node("y")
    g.set_edge(u, x, 3.0)
    g.set_edge(u, y, 1.0)
    assert g.out_distribution(u) == [(x, 0.75), (y, 0.25)]


def test_out_distribution_dangling_empty():
    g = InteractionGraph()
    u = g.add_node("u")
    assert g.out_distribution(u) == []
    assert g.is_dangling(u)


def test_out_distribution_single_edge():
    g = InteractionGraph()
    u, v = g.add_node("u"), g.add_node("v")
    g.set_edge(u, v, 10.0)
    assert g.out_distribution(u) == [(v, 1.0)]


def test_version_strictly_increases():
    g = InteractionGraph()
    seen = [g.version]
    a = g.add_node("a")
    seen.append(g.version)
    b = g.add_node("b")
    seen.append(g.version)
    g.upsert_net_flow(a, b, 2.0)
    seen.append(g.version)
    g.remove_node(b)
    seen.append(g.version)
    assert seen == sorted(set(seen))


# ---- properties over random operation sequences ---------------------------

_ops = st.lists(
    st.tuples(
        st.integers(min_value=0, max_value=7),
        st.integers(min_value=0, max_value=7),
        st.floats(min_value=-50, max_value=50, allow_nan=False),
    ),
    max_size=60,
)


def _build(ops, n_nodes=8):
    g = InteractionGraph()
    for i in range(n_nodes):
        g.add_node(f"n{i}")
    for a, b, delta in ops:
        if a != b:
            g.upsert_net_flow(a, b, delta)
    return g


@given(_ops)
@settings(max_examples=60, deadline=None)
def test_replay_determinism(ops):
    g1, g2 = _build(ops), _build(ops)
    assert g1.adjacency_by_labels() == g2.adjacency_by_labels()
    assert g1.version == g2.version


@given(_ops)
@settings(max_examples=60, deadline=None)
def test_transpose_coherence_and_pair_symmetry(ops):
    g = _build(ops)
    for u in g.nodes():
        for v, w in g.out_edges(u).items():
            assert g.in_edges(v)[u] == w
            assert u not in g.out_edges(v), "both directions stored for one pair"
    for v in g.nodes():
        for u, w in g.in_edges(v).items():
            assert g.out_edges(u)[v] == w


@given(_ops)
@settings(max_examples=60, deadline=None)
def test_conservation_and_cached_out_weights(ops):
    g = _build(ops)
    total_weight = sum(w for _, _, w in g.edges())
    total_flow = sum(
        abs(g.net_flow(a, b))
        for a in g.nodes()
        for b in g.nodes()
        if a < b
    )
    assert total_weight == pytest.approx(total_flow, rel=1e-9)
    for u in g.nodes():
        assert g.out_weight(u) == pytest.approx(
            sum(g.out_edges(u).values()), rel=1e-9, abs=1e-12
        )


@given(_ops)
@settings(max_examples=60, deadline=None)
def test_out_distribution_sums_to_one(ops):
    g = _build(ops)
    for u in g.nodes():
        dist = g.out_distribution(u)
        if dist:
            assert math.fsum(p for _, p in dist) == pytest.approx(1.0, abs=1e-12)
            assert all(p > 0 for _, p in dist)
        else:
            assert g.is_dangling(u)


# ---- CSV exchange format ---------------------------------------------------

def test_graph_csv_round_trip_bit_exact(tmp_path):
    g = InteractionGraph()
    a, b, c = g.add_node("alpha"), g.add_node("beta"), g.add_node("gamma")
    g.add_node("loner")
    g.set_edge(a, b, 1.0 / 3.0)
    g.set_edge(b, c, 1e9 + 0.123456789)
    g.set_edge(c, a, 7.25)
    path = tmp_path / "graph.csv"
    dump_graph_csv(g, path)
    g2 = load_graph_csv(path)
    assert g2.adjacency_by_labels() == g.adjacency_by_labels()
    assert sorted(g2.labels().values()) == sorted(g.labels().values())
    # dumping the reload reproduces the files byte for byte
    path2 = tmp_path / "again.csv"
    dump_graph_csv(g2, path2)
    assert path2.read_bytes() == path.read_bytes()
    assert (tmp_path / "again.nodes.csv").read_bytes() == (
        tmp_path / "graph.nodes.csv"
    ).read_bytes()


def test_graph_csv_uses_lf_line_endings(tmp_path):
    g = InteractionGraph()
    a, b = g.add_node("a"), g.add_node("b")
    g.set_edge(a, b, 2.0)
    path = tmp_path / "graph.csv"
    dump_graph_csv(g, path)
    data = path.read_bytes()
    assert b"\r" not in data
    assert data.startswith(b"source_label,target_label,weight\n")
