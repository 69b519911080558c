"""Time-varying communication graphs and doubly stochastic mixing matrices.

Each round's undirected graph is random Bernoulli edges (seeded per round)
plus a deterministic backbone that cycles chain segments so every window of
four consecutive rounds contains the whole chain. Mixing weights follow the
uniform rule: 1/n per edge, diagonal absorbing the remainder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .oracle import PURPOSE_EDGES, StreamFactory


@dataclass(frozen=True)
class GraphSchedule:
    """Generator parameters for the per-round edge sets.

    Agents are labeled 1..n. edge_prob is the Bernoulli probability for each
    unordered pair; with backbone=True the cyclic chain-quarter edges are
    added on top.
    """

    n: int
    edge_prob: float
    backbone: bool
    seed: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not (0.0 <= self.edge_prob <= 1.0):
            raise ValueError("edge_prob must be in [0, 1]")


def backbone_edges(n: int, t: int) -> set[tuple[int, int]]:
    """Chain edges (i, i+1) for i in the active quarter-block at round t.

    The chain-edge indices 1..n-1 are split into four blocks of size
    ceil(n/4) (last block truncated); block k is active when t = k mod 4.
    """
    if n < 2:
        return set()
    size = math.ceil(n / 4)
    k = (t - 1) % 4
    lo = k * size + 1
    hi = min((k + 1) * size, n - 1)
    return {(i, i + 1) for i in range(lo, hi + 1)}


def generate_round_graph(schedule: GraphSchedule, t: int) -> set[tuple[int, int]]:
    """Edge set at round t: Bernoulli(edge_prob) per pair plus backbone edges."""
    if t < 1:
        raise ValueError("t must be >= 1")
    n = schedule.n
    edges: set[tuple[int, int]] = set()
    if schedule.edge_prob > 0.0 and n > 1:
        rng = StreamFactory(schedule.seed).stream(t, PURPOSE_EDGES)
        draws = rng.uniform(size=n * (n - 1) // 2)
        idx = 0
        for i in range(1, n + 1):
            for j in range(i + 1, n + 1):
                if draws[idx] < schedule.edge_prob:
                    edges.add((i, j))
                idx += 1
    if schedule.backbone:
        edges |= backbone_edges(n, t)
    return edges


@dataclass(frozen=True)
class MixingMatrix:
    """Doubly stochastic weights W with a uniform floor on positive entries."""

    entries: np.ndarray
    w_floor: float


def build_mixing(edges: set[tuple[int, int]], n: int) -> MixingMatrix:
    """Uniform-weight mixing matrix: 1/n per edge, diagonal 1 - row sum.

    For a simple graph the diagonal is at least 1/n, so every positive entry
    meets the floor and the symmetric construction is doubly stochastic.
    """
    W = np.zeros((n, n))
    for i, j in edges:
        if not (1 <= i <= n and 1 <= j <= n) or i == j:
            raise ValueError(f"edge ({i}, {j}) is not an unordered pair of distinct agents in 1..{n}")
        W[i - 1, j - 1] = W[j - 1, i - 1] = 1.0 / n
    np.fill_diagonal(W, 1.0 - W.sum(axis=1))
    return MixingMatrix(entries=W, w_floor=1.0 / n)


def validate_double_stochasticity(W: np.ndarray, tol: float) -> bool:
    """True iff rows and columns sum to 1 within tol and entries >= -tol."""
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError("W must be square")
    return bool(
        np.all(np.abs(W.sum(axis=1) - 1.0) <= tol)
        and np.all(np.abs(W.sum(axis=0) - 1.0) <= tol)
        and np.all(W >= -tol)
    )


class _UnionFind:
    """Classic disjoint-set forest with path compression and union by size."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, a: int) -> int:
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:  # compress
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a: int, b: int):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]


def _window_connected(n: int, window: list[set[tuple[int, int]]]) -> bool:
    uf = _UnionFind(n)
    for edges in window:
        for i, j in edges:
            uf.union(i - 1, j - 1)
    root = uf.find(0)
    return all(uf.find(v) == root for v in range(1, n))


def validate_joint_connectivity(graphs: list[set[tuple[int, int]]], B: int, n: int) -> bool:
    """True iff every union of B consecutive edge sets connects all n agents."""
    if B <= 0:
        raise ValueError("B must be positive")
    if len(graphs) < B:
        raise ValueError(f"need at least B={B} edge sets, got {len(graphs)}")
    return all(_window_connected(n, graphs[s : s + B]) for s in range(len(graphs) - B + 1))
