"""Empirical perturbed variation through maximum bipartite matching.

Source and target points are the two sides of a bipartite graph with an
edge whenever d(x_s, x_t) <= eps. A maximum-cardinality matching is found
with Hopcroft-Karp, or by a minimum-cost assignment when the closest pairs
are wanted; the unmatched fractions on both sides give the PV.
"""

from __future__ import annotations

import logging
from collections import deque
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

LOG = logging.getLogger(__name__)

NIL = -1
INF = np.iinfo(np.int64).max

# Which of the maximum matchings `compute_matching` returns.
PAIRINGS = ("first", "closest")


class BipartiteGraph:
    """G = ((U, V), E), U the source indices and V the target indices.

    Adjacency lists are kept in increasing index order, which fixes the
    matching found when several maximum matchings exist.
    """

    def __init__(self, num_u: int, num_v: int, edges: Sequence[tuple[int, int]]):
        if num_u < 1 or num_v < 1:
            raise ValueError("both sides of the graph need at least one vertex")
        self.num_u = num_u
        self.num_v = num_v
        adj = [set() for _ in range(num_u)]
        for u, v in edges:
            if not (0 <= u < num_u and 0 <= v < num_v):
                raise ValueError(f"edge ({u}, {v}) out of range")
            adj[u].add(v)
        self.adj_u = [sorted(vs) for vs in adj]

    @classmethod
    def from_points(cls, S_points, T_points, eps: float, distance="euclidean"):
        return cls.from_distances(pairwise_distances(S_points, T_points, distance), eps)

    @classmethod
    def from_distances(cls, dist: np.ndarray, eps: float):
        graph = cls.__new__(cls)
        graph.num_u, graph.num_v = dist.shape
        graph.adj_u = [np.flatnonzero(row <= eps).tolist() for row in dist]
        return graph

    @property
    def num_edges(self) -> int:
        return sum(len(vs) for vs in self.adj_u)


class HopcroftKarp:
    """Maximum-cardinality matching by shortest augmenting paths."""

    def __init__(self, graph: BipartiteGraph):
        self.graph = graph
        self.match_u = [NIL] * graph.num_u
        self.match_v = [NIL] * graph.num_v
        self.dist = [INF] * graph.num_u
        self.dist_nil = INF
        self._next = [0] * graph.num_u

    def _layer(self) -> bool:
        """BFS from the free source vertices; True if a free target is reachable."""
        queue = deque()
        for u in range(self.graph.num_u):
            if self.match_u[u] == NIL:
                self.dist[u] = 0
                queue.append(u)
            else:
                self.dist[u] = INF
        self.dist_nil = INF
        while queue:
            u = queue.popleft()
            if self.dist[u] >= self.dist_nil:
                continue
            for v in self.graph.adj_u[u]:
                w = self.match_v[v]
                if w == NIL:
                    if self.dist_nil == INF:
                        self.dist_nil = self.dist[u] + 1
                elif self.dist[w] == INF:
                    self.dist[w] = self.dist[u] + 1
                    queue.append(w)
        return self.dist_nil != INF

    def _augment(self, root: int) -> bool:
        """Iterative DFS along the BFS layers, flipping the path if one is found."""
        stack = [root]
        via = []
        while stack:
            u = stack[-1]
            adj = self.graph.adj_u[u]
            advanced = False
            while self._next[u] < len(adj):
                v = adj[self._next[u]]
                self._next[u] += 1
                w = self.match_v[v]
                if w == NIL:
                    if self.dist_nil == self.dist[u] + 1:
                        via.append(v)
                        for uu, vv in zip(stack, via):
                            self.match_u[uu] = vv
                            self.match_v[vv] = uu
                            # paths of one phase are vertex disjoint
                            self.dist[uu] = INF
                        return True
                elif self.dist[w] == self.dist[u] + 1:
                    via.append(v)
                    stack.append(w)
                    advanced = True
                    break
            if not advanced:
                self.dist[u] = INF
                stack.pop()
                if via:
                    via.pop()
        return False

    def __call__(self) -> list[tuple[int, int]]:
        self.match_u = [NIL] * self.graph.num_u
        self.match_v = [NIL] * self.graph.num_v
        phases = 0
        while self._layer():
            phases += 1
            self._next = [0] * self.graph.num_u
            for u in range(self.graph.num_u):
                if self.match_u[u] == NIL and self.dist[u] == 0:
                    self._augment(u)
        LOG.debug("maximum matching found in %s phases", phases)
        return [(u, v) for u, v in enumerate(self.match_u) if v != NIL]


def has_augmenting_path(graph: BipartiteGraph, pairs) -> bool:
    """True if `pairs` can still be grown, i.e. it is not maximum."""
    solver = HopcroftKarp(graph)
    for u, v in pairs:
        solver.match_u[u] = v
        solver.match_v[v] = u
    return solver._layer()


def pairwise_distances(S_points, T_points, distance="euclidean") -> np.ndarray:
    """`distance` is a scipy metric name or a callable on two points."""
    S_points = np.asarray(getattr(S_points, "points", S_points), dtype=float)
    T_points = np.asarray(getattr(T_points, "points", T_points), dtype=float)
    return cdist(S_points, T_points, metric=distance)


@dataclass(frozen=True, eq=False)
class Matching:
    pairs: np.ndarray
    eps: float
    m_s: int
    m_t: int

    def __post_init__(self):
        pairs = np.array(self.pairs, dtype=np.int64).reshape(-1, 2)
        pairs.setflags(write=False)
        object.__setattr__(self, "pairs", pairs)

    def __len__(self) -> int:
        return self.pairs.shape[0]

    @property
    def source_indices(self) -> np.ndarray:
        return self.pairs[:, 0]

    @property
    def target_indices(self) -> np.ndarray:
        return self.pairs[:, 1]

    @property
    def unmatched_source(self) -> int:
        return self.m_s - len(self)

    @property
    def unmatched_target(self) -> int:
        return self.m_t - len(self)

    @property
    def pv(self) -> float:
        return 0.5 * (self.unmatched_source / self.m_s + self.unmatched_target / self.m_t)

    def to_dict(self) -> dict:
        return {
            "eps": self.eps,
            "pv": self.pv,
            "size": len(self),
            "m_s": self.m_s,
            "m_t": self.m_t,
        }


def closest_pairs(dist: np.ndarray, eps: float) -> list[tuple[int, int]]:
    """Maximum matching of the eps-graph with the least total squared distance.

    Non-edges cost more than any full set of in-radius pairs, so the
    assignment never trades an edge for a shorter one.
    """
    within = dist <= eps
    if not within.any():
        return []
    sq = dist**2
    big = min(dist.shape) * float(sq[within].max()) + 1.0
    cost = np.where(within, sq, big)
    rows, cols = linear_sum_assignment(cost)
    keep = within[rows, cols]
    return list(zip(rows[keep].tolist(), cols[keep].tolist()))


def compute_matching(
    S_points,
    T_points,
    eps: float,
    distance: str | Callable = "euclidean",
    pairing: str = "first",
) -> Matching:
    """Maximum matching of the eps-graph.

    `pairing` picks among the maximum matchings: "first" is the
    Hopcroft-Karp result in index order, "closest" the one with the least
    total squared distance. Both have the same size, hence the same PV.
    """
    if not eps > 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    if pairing not in PAIRINGS:
        raise ValueError(f"unknown pairing {pairing!r}, expected one of {PAIRINGS}")
    dist = pairwise_distances(S_points, T_points, distance)
    if pairing == "closest":
        pairs = closest_pairs(dist, eps)
    else:
        pairs = HopcroftKarp(BipartiteGraph.from_distances(dist, eps))()
    m_s, m_t = dist.shape
    LOG.debug(
        "eps=%.4g: %s edges, %s matched %s of (%s, %s)",
        eps,
        int(np.count_nonzero(dist <= eps)),
        pairing,
        len(pairs),
        m_s,
        m_t,
    )
    return Matching(pairs, float(eps), m_s, m_t)


def pv_estimate(S_points, T_points, eps: float, distance="euclidean") -> float:
    return compute_matching(S_points, T_points, eps, distance).pv


def epsilon_quantiles(S_points, T_points, quantiles, distance="euclidean") -> list[float]:
    """Radii at the given quantiles of all source-target distances."""
    dist = pairwise_distances(S_points, T_points, distance)
    return [float(r) for r in np.quantile(dist, quantiles)]
