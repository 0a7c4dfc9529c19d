import numpy as np
import pytest

from walkrank.graph import InteractionGraph


@pytest.fixture
def two_node_graph():
    """seed -> B (weight 1), B dangling: closed-form scores (10/17, 7/17)."""
    g = InteractionGraph()
    s = g.add_node("seed")
    b = g.add_node("B")
    g.set_edge(s, b, 1.0)
    return g, s, b


@pytest.fixture
def triangle_graph():
    """Directed 3-cycle A -> B -> C -> A with unit weights."""
    g = InteractionGraph()
    a, b, c = g.add_node("A"), g.add_node("B"), g.add_node("C")
    g.set_edge(a, b, 1.0)
    g.set_edge(b, c, 1.0)
    g.set_edge(c, a, 1.0)
    return g, (a, b, c)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)
