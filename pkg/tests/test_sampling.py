import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jobgraph.errors import ConfigMismatch, MissingNode
from jobgraph.graph import (
    ALL_EDGE_TYPES,
    MEMBER_SKILL,
    SEEKER_ENGAGEMENT,
    HeteroGraph,
    NodeRef,
    NodeType,
)
from jobgraph.sampling import SamplerConfig, sample_neighborhood

from conftest import canonical_tree, mk


def star_graph(weights):
    """One member connected to len(weights) jobs with the given weights."""
    g = HeteroGraph(feature_dims=2)
    root = mk(NodeType.MEMBER, 0)
    g.add_node(root, np.zeros(2))
    for i, w in enumerate(weights):
        ref = mk(NodeType.JOB, i)
        g.add_node(ref, np.full(2, float(i), dtype=np.float32))
        g.add_edge(SEEKER_ENGAGEMENT, root, ref, w)
    return g, root


class TestSamplerConfig:
    def test_hops_equals_fanout_length(self):
        assert SamplerConfig(fanout=(4, 2, 1)).hops == 3

    def test_rejects_zero_fanout(self):
        with pytest.raises(ConfigMismatch):
            SamplerConfig(fanout=(3, 0))

    def test_ppr_alpha_required_iff_ppr(self):
        with pytest.raises(ConfigMismatch):
            SamplerConfig(fanout=(2,), strategy="approx_ppr")
        with pytest.raises(ConfigMismatch):
            SamplerConfig(fanout=(2,), strategy="uniform", ppr_alpha=0.15)
        SamplerConfig(fanout=(2,), strategy="approx_ppr", ppr_alpha=0.15)

    def test_unknown_strategy(self):
        with pytest.raises(ConfigMismatch):
            SamplerConfig(fanout=(2,), strategy="lucky")


class TestBasics:
    def test_exhaustive_fanout_returns_full_neighborhood_once(self):
        g, root = star_graph([1.0, 1.0, 1.0])
        cg = sample_neighborhood(g, root, SamplerConfig(fanout=(3,), seed=0))
        assert [n.id for n in cg.layers[1].nodes] == [0, 1, 2]

    def test_exhaustive_equals_breadth_first_expansion(self, tiny_graph):
        root = mk(NodeType.MEMBER, 1)
        cg = sample_neighborhood(
            tiny_graph, root, SamplerConfig(fanout=(100, 100), seed=3)
        )
        # manual BFS over the same canonical edge-type order
        ets = sorted(ALL_EDGE_TYPES, key=lambda e: e.name)
        layer1 = tiny_graph.neighbors_multi(root, ets)
        assert [n for n in cg.layers[1].nodes] == [r for r, _ in layer1]
        expect2 = []
        for ref, _ in layer1:
            expect2.extend(r for r, _ in tiny_graph.neighbors_multi(ref, ets))
        assert list(cg.layers[2].nodes) == expect2

    def test_missing_root(self, tiny_graph):
        with pytest.raises(MissingNode):
            sample_neighborhood(tiny_graph, mk(NodeType.MEMBER, 404),
                                SamplerConfig(fanout=(2,)))

    def test_edge_types_per_hop_length_checked(self, tiny_graph):
        with pytest.raises(ConfigMismatch):
            sample_neighborhood(
                tiny_graph, mk(NodeType.MEMBER, 1),
                SamplerConfig(fanout=(2, 2)), edge_types_per_hop=[ALL_EDGE_TYPES],
            )

    def test_determinism_same_seed_bit_identical(self, tiny_graph):
        cfg = SamplerConfig(fanout=(2, 2), seed=99)
        a = sample_neighborhood(tiny_graph, mk(NodeType.MEMBER, 1), cfg)
        b = sample_neighborhood(tiny_graph, mk(NodeType.MEMBER, 1), cfg)
        assert a.signature() == b.signature()

    def test_features_attached_to_occurrences(self, tiny_graph):
        cg = sample_neighborhood(tiny_graph, mk(NodeType.MEMBER, 1),
                                 SamplerConfig(fanout=(10,), seed=1))
        for i, ref in enumerate(cg.layers[1].nodes):
            np.testing.assert_array_equal(
                cg.layers[1].features[i], tiny_graph.features_of(ref)
            )

    def test_exclude_edge_hides_pair_both_directions(self, tiny_graph):
        m, j = mk(NodeType.MEMBER, 1), mk(NodeType.JOB, 1)
        cfg = SamplerConfig(fanout=(100, 100), seed=0)
        cg = sample_neighborhood(tiny_graph, m, cfg, exclude_edge=(m, j))
        assert j not in cg.layers[1].nodes
        # j may appear deeper via other paths, but never as a direct child of m
        for occ, parent in zip(cg.layers[2].nodes, cg.layers[2].parents):
            if occ == m:
                continue
            if cg.layers[1].nodes[int(parent)] == j:
                assert occ != m

    def test_zero_degree_root_yields_empty_layers(self):
        g = HeteroGraph(feature_dims=2)
        root = mk(NodeType.MEMBER, 0)
        g.add_node(root, np.zeros(2))
        cg = sample_neighborhood(g, root, SamplerConfig(fanout=(3, 3), seed=0))
        assert len(cg.layers[1]) == 0 and len(cg.layers[2]) == 0


class TestSamplingSoundness:
    @given(seed=st.integers(0, 10_000), fanout=st.tuples(
        st.integers(1, 4), st.integers(1, 4)))
    @settings(max_examples=40, deadline=None)
    def test_every_sampled_node_is_a_true_neighbor(self, seed, fanout):
        rng = np.random.default_rng(7)
        g = HeteroGraph(feature_dims=2)
        root = mk(NodeType.MEMBER, 1)
        g.add_node(root, rng.normal(size=2))
        for i in range(4):
            g.add_node(mk(NodeType.JOB, i), rng.normal(size=2))
            g.add_edge(SEEKER_ENGAGEMENT, root, mk(NodeType.JOB, i),
                       float(i), reciprocal=True)
        for i in range(2):
            g.add_node(mk(NodeType.SKILL, i), rng.normal(size=2))
            g.add_edge(MEMBER_SKILL, root, mk(NodeType.SKILL, i), 1.0, reciprocal=True)
        cfg = SamplerConfig(fanout=fanout, seed=seed)
        cg = sample_neighborhood(g, root, cfg)
        ets = list(ALL_EDGE_TYPES)
        for layer_idx in (1, 2):
            layer = cg.layers[layer_idx]
            parents = cg.layers[layer_idx - 1]
            for occ, parent in zip(layer.nodes, layer.parents):
                neighborhood = [r for r, _ in
                                g.neighbors_multi(parents.nodes[int(parent)], ets)]
                assert occ in neighborhood


class TestDistributions:
    def test_uniform_inclusion_two_of_three(self):
        g, root = star_graph([1.0, 1.0, 1.0])
        trials = 3000
        counts = np.zeros(3)
        for t in range(trials):
            cg = sample_neighborhood(g, root, SamplerConfig(fanout=(2,), seed=t))
            for ref in cg.layers[1].nodes:
                counts[ref.id] += 1
        freq = counts / trials
        np.testing.assert_allclose(freq, 2.0 / 3.0, atol=0.035)

    def test_weighted_with_replacement_three_to_one(self):
        g, root = star_graph([3.0, 1.0])
        trials = 4000
        hits = 0
        cfg = SamplerConfig(fanout=(1,), strategy="weighted", with_replacement=True)
        for t in range(trials):
            cg = sample_neighborhood(g, root, dataclasses.replace(cfg, seed=t))
            hits += cg.layers[1].nodes[0].id == 0
        assert abs(hits / trials - 0.75) < 0.02

    def test_weighted_zero_weight_excluded_when_sampling(self):
        g, root = star_graph([0.0, 5.0])
        cfg = SamplerConfig(fanout=(1,), strategy="weighted")
        for t in range(50):
            cg = sample_neighborhood(g, root, dataclasses.replace(cfg, seed=t))
            assert [n.id for n in cg.layers[1].nodes] == [1]

    def test_ppr_prefers_multiply_reachable_neighbor(self):
        # member -> {job0, job1, skill}; skill -> job1: walks revisit job1 more
        g = HeteroGraph(feature_dims=2)
        root = mk(NodeType.MEMBER, 0)
        j0, j1, s = mk(NodeType.JOB, 0), mk(NodeType.JOB, 1), mk(NodeType.SKILL, 0)
        for n in (root, j0, j1, s):
            g.add_node(n, np.zeros(2))
        g.add_edge(SEEKER_ENGAGEMENT, root, j0, 1.0, reciprocal=True)
        g.add_edge(SEEKER_ENGAGEMENT, root, j1, 1.0, reciprocal=True)
        g.add_edge(MEMBER_SKILL, root, s, 1.0, reciprocal=True)
        g.add_edge(MEMBER_SKILL.reverse(), s, root, 0.0)  # keep store symmetric
        g.add_edge(
            SEEKER_ENGAGEMENT.reverse(), j1, root, 0.0
        )
        from jobgraph.graph import JOB_SKILL
        g.add_edge(JOB_SKILL, j1, s, 5.0, reciprocal=True)
        counts = {0: 0, 1: 0}
        cfg = SamplerConfig(fanout=(1,), strategy="approx_ppr", ppr_alpha=0.15,
                            with_replacement=True)
        for t in range(400):
            cg = sample_neighborhood(g, root, dataclasses.replace(cfg, seed=t))
            for ref in cg.layers[1].nodes:
                if ref.node_type == NodeType.JOB:
                    counts[ref.id] += 1
        assert counts[1] > counts[0]

    def test_ppr_exhaustive_short_circuits(self):
        g, root = star_graph([1.0, 2.0])
        cfg = SamplerConfig(fanout=(5,), strategy="approx_ppr", ppr_alpha=0.2)
        cg = sample_neighborhood(g, root, cfg)
        assert [n.id for n in cg.layers[1].nodes] == [0, 1]


class TestComputeGraphShape:
    def test_layer_zero_single_root_and_parent_links(self, tiny_graph):
        cg = sample_neighborhood(tiny_graph, mk(NodeType.MEMBER, 1),
                                 SamplerConfig(fanout=(3, 2), seed=5))
        assert len(cg.layers[0]) == 1
        assert cg.layers[0].parents[0] == -1
        for layer_idx in (1, 2):
            layer = cg.layers[layer_idx]
            assert np.all(layer.parents >= 0)
            assert np.all(layer.parents < len(cg.layers[layer_idx - 1]))

    def test_canonical_tree_helper_is_order_insensitive(self, tiny_graph):
        cfg = SamplerConfig(fanout=(100, 100), seed=0)
        cg = sample_neighborhood(tiny_graph, mk(NodeType.MEMBER, 1), cfg)
        assert canonical_tree(cg) == canonical_tree(cg)
