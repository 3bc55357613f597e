from functools import lru_cache

import numpy as np
import pytest

from pvmincq.dataset import ShiftSpec, apply_shift, generate_moons
from pvmincq.pv import (
    BipartiteGraph,
    HopcroftKarp,
    Matching,
    compute_matching,
    epsilon_quantiles,
    has_augmenting_path,
    pairwise_distances,
    pv_estimate,
)


def brute_force_matching_size(adjacent: np.ndarray) -> int:
    """Exhaustive maximum matching over subsets of used targets."""
    num_u, num_v = adjacent.shape

    @lru_cache(maxsize=None)
    def best(u: int, used: int) -> int:
        if u == num_u:
            return 0
        result = best(u + 1, used)
        for v in range(num_v):
            if adjacent[u, v] and not used & (1 << v):
                result = max(result, 1 + best(u + 1, used | (1 << v)))
        return result

    return best(0, 0)


@pytest.mark.parametrize("pairing", ["first", "closest"])
def test_matching_equals_brute_force(pairing):
    rng = np.random.default_rng(0)
    for _ in range(200):
        m_s, m_t = rng.integers(1, 9, size=2)
        S = rng.uniform(size=(m_s, 2))
        T = rng.uniform(size=(m_t, 2))
        eps = rng.uniform(0.05, 0.8)

        matching = compute_matching(S, T, eps, pairing=pairing)
        adjacent = pairwise_distances(S, T) <= eps
        assert len(matching) == brute_force_matching_size(adjacent)

        # a valid matching over edges of the graph
        assert len(set(matching.source_indices.tolist())) == len(matching)
        assert len(set(matching.target_indices.tolist())) == len(matching)
        assert all(adjacent[s, t] for s, t in matching.pairs)
        graph = BipartiteGraph.from_points(S, T, eps)
        assert not has_augmenting_path(graph, matching.pairs)


def test_hopcroft_karp_on_a_known_graph():
    # the greedy choice 0-0 must be undone to reach the perfect matching
    graph = BipartiteGraph(3, 3, [(0, 0), (0, 1), (1, 0), (2, 1), (2, 2)])

    pairs = HopcroftKarp(graph)()
    assert len(pairs) == 3
    assert sorted(s for s, _ in pairs) == [0, 1, 2]
    assert sorted(t for _, t in pairs) == [0, 1, 2]


def test_has_augmenting_path_detects_a_non_maximum_matching():
    graph = BipartiteGraph(2, 2, [(0, 0), (0, 1), (1, 0)])

    assert has_augmenting_path(graph, [(0, 0)])
    assert not has_augmenting_path(graph, [(0, 1), (1, 0)])


def test_graph_rejects_out_of_range_edges():
    with pytest.raises(ValueError):
        BipartiteGraph(2, 2, [(0, 2)])


def test_pv_of_a_sample_with_itself_is_zero():
    S = generate_moons(20, 20, 0.05, 1).points
    for eps in (1e-9, 0.01, 1.0):
        assert pv_estimate(S, S, eps) == 0.0


def test_pv_properties():
    rng = np.random.default_rng(1)
    for _ in range(100):
        S = rng.normal(size=(rng.integers(2, 15), 2))
        T = rng.normal(loc=0.5, size=(rng.integers(2, 15), 2))
        sweep = np.linspace(0.01, 3.0, 10)

        values = [pv_estimate(S, T, eps) for eps in sweep]
        assert all(0.0 <= v <= 1.0 for v in values)
        assert all(a >= b for a, b in zip(values, values[1:]))
        eps = float(rng.choice(sweep))
        assert pv_estimate(S, T, eps) == pytest.approx(pv_estimate(T, S, eps))


def test_pv_formula():
    matching = Matching([(1, 0)], eps=0.5, m_s=4, m_t=2)

    assert matching.unmatched_source == 3
    assert matching.unmatched_target == 1
    assert matching.pv == pytest.approx(0.5 * (3 / 4 + 1 / 2))
    assert matching.to_dict() == {"eps": 0.5, "pv": matching.pv, "size": 1, "m_s": 4, "m_t": 2}


def test_disjoint_samples_have_pv_one():
    S = np.zeros((3, 2))
    T = np.full((4, 2), 10.0)

    matching = compute_matching(S, T, 1.0)
    assert len(matching) == 0
    assert matching.pv == 1.0


@pytest.mark.parametrize("eps", [0.0, -1.0])
def test_eps_must_be_positive(eps):
    with pytest.raises(ValueError):
        compute_matching(np.zeros((1, 2)), np.zeros((1, 2)), eps)


def test_pv_grows_with_the_rotation():
    source = generate_moons(60, 60, 0.05, 2)
    target = generate_moons(60, 60, 0.05, 3)
    center = source.centroid()

    pvs = [
        pv_estimate(
            source.points,
            apply_shift(target, ShiftSpec.rotation(angle), center=center).points,
            0.2,
        )
        for angle in (10, 40, 90)
    ]
    assert pvs[0] < pvs[2]


def test_epsilon_quantiles_are_increasing():
    rng = np.random.default_rng(3)
    S, T = rng.normal(size=(10, 2)), rng.normal(size=(12, 2))

    radii = epsilon_quantiles(S, T, [0.05, 0.1, 0.25, 0.5])
    assert radii == sorted(radii)
    assert radii[-1] == pytest.approx(float(np.median(pairwise_distances(S, T))))


def test_pluggable_distance():
    S = np.array([[0.0, 0.0]])
    T = np.array([[0.6, 0.6]])

    assert len(compute_matching(S, T, 1.0, distance="euclidean")) == 1
    assert len(compute_matching(S, T, 1.0, distance="cityblock")) == 0


def total_squared_distance(S, T, matching) -> float:
    dist = pairwise_distances(S, T)
    return float(sum(dist[s, t] ** 2 for s, t in matching.pairs))


def test_closest_pairing_is_no_longer_than_hopcroft_karp():
    rng = np.random.default_rng(4)
    for _ in range(100):
        S = rng.uniform(size=(rng.integers(1, 12), 2))
        T = rng.uniform(size=(rng.integers(1, 12), 2))
        eps = rng.uniform(0.05, 0.8)

        first = compute_matching(S, T, eps, pairing="first")
        closest = compute_matching(S, T, eps, pairing="closest")
        assert len(closest) == len(first)
        assert closest.pv == first.pv
        assert total_squared_distance(S, T, closest) <= total_squared_distance(
            S, T, first
        ) + 1e-12


def test_closest_pairing_on_a_known_instance():
    S = np.array([[0.0, 0.0], [1.0, 0.0]])
    T = np.array([[1.1, 0.0], [0.1, 0.0]])

    # index order pairs each source point with the far target
    assert compute_matching(S, T, 2.0, pairing="first").pairs.tolist() == [[0, 0], [1, 1]]
    assert compute_matching(S, T, 2.0, pairing="closest").pairs.tolist() == [[0, 1], [1, 0]]


def test_closest_pairing_without_edges():
    matching = compute_matching(np.zeros((2, 2)), np.full((3, 2), 5.0), 1.0, pairing="closest")

    assert len(matching) == 0
    assert matching.pv == 1.0


def test_unknown_pairing():
    with pytest.raises(ValueError, match="pairing"):
        compute_matching(np.zeros((1, 2)), np.zeros((1, 2)), 1.0, pairing="nearest")


def test_closest_pairing_carries_labels_across_a_translation():
    source = generate_moons(150, 150, 0.05, 0)
    target = apply_shift(generate_moons(150, 150, 0.05, 1), ShiftSpec.translation((1.0, -0.5)))
    eps = float(pairwise_distances(source, target).max())

    matching = compute_matching(source, target, eps, pairing="closest")
    assert len(matching) == 300
    transferred = source.labels[matching.source_indices]
    truth = target.labels[matching.target_indices]
    assert np.mean(transferred == truth) >= 0.9
