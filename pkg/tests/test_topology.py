import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from topolab.topology import (
    CycleError,
    Topology,
    TopologyError,
    TopologyKind,
    build_named,
    chain,
    degree,
    degrees,
    densify_path,
    full,
    is_acyclic,
    sparsify_path,
    sparsity,
    template_adjacency,
    topological_sort,
)

KINDS = ["full", "chain", "star", "layered:2", "layered:3", "random:0.3", "random:0.8", "tree:1", "tree:2", "tree:3"]


def edge_set(t):
    return set(t.edges)


class TestConstruction:
    def test_chain_three(self):
        assert edge_set(build_named(TopologyKind("chain"), 3)) == {(1, 0), (2, 1)}

    def test_star_four(self):
        assert edge_set(build_named(TopologyKind("star"), 4)) == {(1, 0), (2, 0), (3, 0)}

    def test_layered_hand_expansion(self):
        got = edge_set(build_named(TopologyKind("layered", 3), 6))
        assert got == {(2, 0), (2, 1), (3, 0), (3, 1), (4, 2), (4, 3), (5, 2), (5, 3)}

    def test_layered_remainder_goes_first(self):
        # 7 agents in 3 layers -> sizes 3, 2, 2
        t = build_named(TopologyKind("layered", 3), 7)
        assert t.in_neighbors(3) == [0, 1, 2]
        assert t.in_neighbors(5) == [3, 4]

    def test_random_density_one_is_full(self, rng):
        assert build_named(TopologyKind("random", 1.0), 4, rng) == full(4)

    def test_random_density_zero_is_chain(self, rng):
        assert build_named(TopologyKind("random", 0.0), 5, rng) == chain(5)

    def test_tree_binary(self):
        assert edge_set(build_named(TopologyKind("tree", 2), 5)) == {(1, 0), (2, 0), (3, 1), (4, 1)}

    def test_upper_triangle_rejected(self):
        adj = np.zeros((3, 3), dtype=bool)
        adj[0, 2] = True
        with pytest.raises(TopologyError):
            Topology(3, adj)

    def test_self_loop_rejected(self):
        with pytest.raises(TopologyError):
            Topology.from_edges(2, [(1, 1)])

    def test_adjacency_is_read_only(self):
        t = chain(3)
        with pytest.raises(ValueError):
            t.adj[2, 0] = True

    @pytest.mark.parametrize("text", ["layered:0", "tree:0", "random:1.5", "ring"])
    def test_bad_kinds(self, text):
        with pytest.raises(TopologyError):
            TopologyKind.parse(text)

    def test_layered_needs_enough_agents(self):
        with pytest.raises(TopologyError):
            build_named(TopologyKind("layered", 5), 3)

    def test_json_round_trip(self):
        t = build_named(TopologyKind("layered", 2), 5)
        assert Topology.from_json(t.to_json()) == t
        assert json.loads(chain(3).to_json()) == {"n": 3, "edges": [[1, 0], [2, 1]]}


class TestRandomDensity:
    @pytest.mark.parametrize("p,n", [(0.3, 6), (0.7, 5)])
    def test_edge_count_mean(self, p, n):
        counts = np.array(
            [build_named(TopologyKind("random", p), n, np.random.default_rng(s)).num_edges for s in range(10_000)]
        )
        free = n * (n - 1) // 2 - (n - 1)
        expected = p * free + (n - 1)
        se = np.sqrt(free * p * (1 - p) / counts.size)
        assert abs(counts.mean() - expected) < 3 * se


class TestPaths:
    def test_six_agent_lengths(self, rng):
        assert len(sparsify_path(6, rng)) == 11
        assert len(densify_path(6, rng)) == 11

    def test_two_agents_single_step(self, rng):
        path = sparsify_path(2, rng)
        assert len(path) == 1 and path.steps[0] == full(2) == chain(2)

    def test_sparsity_endpoints(self, rng):
        path = sparsify_path(6, rng)
        assert sparsity(path.steps[0]) == 0.0
        assert sparsity(path.steps[-1]) == pytest.approx(2 / 3)

    def test_three_agent_densify(self, rng):
        assert [t.num_edges for t in densify_path(3, rng)] == [2, 3]

    def test_reversed_densify_is_a_sparsify_path(self, rng):
        steps = densify_path(5, rng).steps[::-1]
        assert steps[0] == full(5) and steps[-1] == chain(5)
        for a, b in zip(steps, steps[1:]):
            assert edge_set(a) - edge_set(b) and len(edge_set(a) ^ edge_set(b)) == 1

    def test_needs_two_agents(self, rng):
        with pytest.raises(TopologyError):
            sparsify_path(1, rng)

    @given(n=st.integers(2, 8), seed=st.integers(0, 2**32 - 1), direction=st.sampled_from(["sparsify", "densify"]))
    def test_path_structure(self, n, seed, direction):
        make = sparsify_path if direction == "sparsify" else densify_path
        path = make(n, np.random.default_rng(seed))
        again = make(n, np.random.default_rng(seed))
        assert path.steps == again.steps
        start, end = (full(n), chain(n)) if direction == "sparsify" else (chain(n), full(n))
        assert path.steps[0] == start and path.steps[-1] == end
        for a, b in zip(path.steps, path.steps[1:]):
            assert len(edge_set(a) ^ edge_set(b)) == 1
            assert edge_set(chain(n)) <= edge_set(b)


class TestOrderAndDegree:
    def test_chain_order(self):
        assert topological_sort(chain(3)) == [0, 1, 2]

    def test_min_index_tie_break(self):
        assert topological_sort(Topology.from_edges(3, [(2, 0), (2, 1)])) == [0, 1, 2]

    def test_full_order(self):
        assert topological_sort(full(4)) == [0, 1, 2, 3]

    def test_is_acyclic_detects_cycles(self):
        adj = np.zeros((3, 3), dtype=bool)
        adj[1, 0] = adj[2, 1] = adj[0, 2] = True
        assert not is_acyclic(adj)
        assert is_acyclic(np.tril(np.ones((4, 4), dtype=bool), -1))

    def test_cycle_error_is_a_topology_error(self):
        assert issubclass(CycleError, TopologyError)

    def test_sparsity_examples(self):
        assert sparsity(full(6)) == 0.0
        assert sparsity(chain(6)) == pytest.approx(2 / 3)
        assert sparsity(Topology.empty(6)) == 1.0
        with pytest.raises(TopologyError):
            sparsity(Topology.empty(1))

    def test_degree_examples(self):
        assert degree(chain(3), 1) == 2
        assert degree(chain(3), 0) == 1
        assert all(degree(full(4), i) == 3 for i in range(4))
        with pytest.raises(IndexError):
            degree(chain(3), 3)

    @given(n=st.integers(1, 9), kind=st.sampled_from(KINDS), seed=st.integers(0, 10**6))
    def test_generated_topologies(self, n, kind, seed):
        k = TopologyKind.parse(kind)
        if k.tag == "layered" and k.param > n:
            return
        t = build_named(k, n, np.random.default_rng(seed))
        assert not np.triu(t.adj).any()
        assert degrees(t).sum() == 2 * t.num_edges
        order = topological_sort(t)
        pos = {a: i for i, a in enumerate(order)}
        assert all(pos[s] < pos[r] for r, s in t.edges)
        if n >= 2:
            assert 0.0 <= sparsity(t) <= 1.0

    def test_acyclic_on_many_generated(self):
        rng = np.random.default_rng(7)
        for _ in range(100_000):
            n = int(rng.integers(1, 9))
            kind = TopologyKind.parse(KINDS[int(rng.integers(len(KINDS)))])
            if kind.tag == "layered" and kind.param > n:
                kind = TopologyKind("full")
            assert is_acyclic(build_named(kind, n, rng).adj)


def test_templates_are_symmetric():
    for kind in ("full", "chain"):
        a = template_adjacency(kind, 5)
        assert np.array_equal(a, a.T) and not np.diag(a).any()
    assert template_adjacency("chain", 4).sum() == 6
