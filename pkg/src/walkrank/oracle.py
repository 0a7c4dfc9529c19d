"""Reference personalized PageRank solvers used as ground truth for the
Monte Carlo estimator.

Convention used throughout the package: ``c`` is the per-step stop/reset
probability, ``1 - c`` the continuation probability, so the stationary
equation is

    pi = c * e_seed + (1 - c) * pi @ P~

where P~ row-normalizes edge weights and patches dangling rows to send all
mass back to the seed. The dangling patch matches the walker exactly: a walk
that hits a dangling node terminates and the next walk starts at the seed,
so teleport-to-seed is the stationary form of that behavior. A uniform
dangling spread would make these solvers measure a different quantity than
the estimator they are meant to check.

Both solvers are pure functions of an immutable graph snapshot and safe to
call concurrently.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import InteractionGraph, NoSuchNodeError

EXACT_SOLVE_MAX_NODES = 2_000


class GuardExceededError(ValueError):
    pass


@dataclass(frozen=True)
class PowerIterConfig:
    reset_probability: float
    seed_node: int
    tolerance: float = 1e-10
    max_iterations: int = 10_000

    def __post_init__(self) -> None:
        if not 0.0 < self.reset_probability < 1.0:
            raise ValueError(f"reset probability must lie in (0,1), got {self.reset_probability}")
        if self.tolerance <= 0.0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass
class RankVector:
    """Node scores with their labels; normally a probability vector.

    ``scores`` sums to 1 within 1e-9 except for deliberately degenerate
    all-zero vectors (never produced by the solvers or the estimator, which
    always place mass on the seed).
    """

    scores: dict[int, float]
    labels: dict[int, str] = field(default_factory=dict)

    def score(self, node: int) -> float:
        return self.scores.get(node, 0.0)

    def items_ranked(self) -> list[tuple[int, float]]:
        """Descending score; ties broken by ascending label."""
        return sorted(
            self.scores.items(), key=lambda kv: (-kv[1], self.labels.get(kv[0], str(kv[0])))
        )

    def linf_error(self, other: "RankVector") -> float:
        keys = set(self.scores) | set(other.scores)
        return max(abs(self.score(k) - other.score(k)) for k in keys) if keys else 0.0

    def l2_error(self, other: "RankVector") -> float:
        keys = set(self.scores) | set(other.scores)
        return math.sqrt(math.fsum((self.score(k) - other.score(k)) ** 2 for k in keys))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["node_label", "score"])
            for node, score in self.items_ranked():
                writer.writerow([self.labels.get(node, str(node)), f"{score:.17g}"])


@dataclass(frozen=True)
class PowerIterationResult:
    ranks: RankVector
    iterations: int
    converged: bool


def _node_index(g: InteractionGraph) -> tuple[list[int], dict[int, int]]:
    ids = sorted(g.nodes())
    return ids, {u: i for i, u in enumerate(ids)}


def _transition_parts(
    g: InteractionGraph, index: dict[int, int]
) -> tuple[sp.csr_matrix, np.ndarray]:
    """Sparse P^T over non-dangling rows plus a dangling indicator vector."""
    n = len(index)
    rows, cols, vals = [], [], []
    dangling = np.zeros(n)
    for u in index:
        dist = g.out_distribution(u)
        if not dist:
            dangling[index[u]] = 1.0
            continue
        for v, p in dist:
            rows.append(index[v])
            cols.append(index[u])
            vals.append(p)
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return mat, dangling


def personalized_power_iteration(
    g: InteractionGraph, cfg: PowerIterConfig
) -> PowerIterationResult:
    """Iterate pi <- c*e_seed + (1-c)*(P^T pi + e_seed * dangling mass) to the
    stated L1 tolerance. Never fails silently: hitting the iteration cap
    returns converged=False."""
    if not g.has_node(cfg.seed_node):
        raise NoSuchNodeError(f"no such node: {cfg.seed_node}")
    ids, index = _node_index(g)
    n = len(ids)
    c = cfg.reset_probability
    seed_idx = index[cfg.seed_node]
    mat, dangling = _transition_parts(g, index)

    pi = np.zeros(n)
    pi[seed_idx] = 1.0
    converged = False
    iterations = 0
    for iterations in range(1, cfg.max_iterations + 1):
        nxt = (1.0 - c) * (mat @ pi)
        nxt[seed_idx] += (1.0 - c) * float(dangling @ pi) + c
        if float(np.abs(nxt - pi).sum()) < cfg.tolerance:
            pi = nxt
            converged = True
            break
        pi = nxt
    pi = pi / pi.sum()
    ranks = RankVector(
        scores={u: float(pi[index[u]]) for u in ids}, labels=g.labels()
    )
    return PowerIterationResult(ranks=ranks, iterations=iterations, converged=converged)


def exact_solve(g: InteractionGraph, c: float, seed: int) -> RankVector:
    """Direct dense solve of the personalized stationary equation; the
    independent ground truth for small graphs."""
    if not 0.0 < c < 1.0:
        raise ValueError(f"reset probability must lie in (0,1), got {c}")
    if not g.has_node(seed):
        raise NoSuchNodeError(f"no such node: {seed}")
    n = g.node_count
    if n > EXACT_SOLVE_MAX_NODES:
        raise GuardExceededError(
            f"exact solve guard exceeded: {n} nodes > {EXACT_SOLVE_MAX_NODES}"
        )
    ids, index = _node_index(g)
    seed_idx = index[seed]
    a = np.zeros((n, n))
    for u in ids:
        dist = g.out_distribution(u)
        if not dist:
            a[index[u], seed_idx] = 1.0
            continue
        for v, p in dist:
            a[index[u], index[v]] = p
    rhs = np.zeros(n)
    rhs[seed_idx] = c
    pi = np.linalg.solve(np.eye(n) - (1.0 - c) * a.T, rhs)
    pi = pi / pi.sum()
    return RankVector(scores={u: float(pi[index[u]]) for u in ids}, labels=g.labels())
