import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jobgraph.errors import (
    InvalidLabel,
    ShapeMismatch,
    StaleForwardState,
    ZeroNormEmbedding,
)
from jobgraph.graph import NodeRef, NodeType
from jobgraph.model import (
    ACTIVATIONS,
    EncoderParams,
    LayerParams,
    Mlp,
    aggregate_attention,
    aggregate_mean,
    attention_coefficients,
    augment_features,
    backward_batch,
    decode_cosine,
    decode_dot,
    decode_mlp,
    encode,
    encode_batch,
    init_encoder_params,
    load_encoder_checkpoint,
    loss_cross_entropy,
    make_in_batch_labels,
    save_encoder_checkpoint,
    score_matrix_dot,
    score_pairs,
    sigmoid,
)
from jobgraph.sampling import ComputeGraph, Layer

from conftest import gradcheck, randomize_params


def layer(out_dim, in_dim, activation="identity", seed=0):
    rng = np.random.default_rng(seed)
    return LayerParams(
        weight=rng.normal(0, 0.7, (out_dim, in_dim)).astype(np.float32),
        bias=rng.normal(0, 0.5, out_dim).astype(np.float32),
        self_weight=rng.normal(0, 0.7, (out_dim, in_dim)).astype(np.float32),
        attention=rng.normal(0, 0.5, 2 * out_dim).astype(np.float32),
        activation=activation,
    )


def identity_layer(dim):
    return LayerParams(
        weight=np.eye(dim, dtype=np.float32),
        bias=np.zeros(dim, dtype=np.float32),
        self_weight=np.zeros((dim, dim), dtype=np.float32),
        attention=np.zeros(2 * dim, dtype=np.float32),
        activation="identity",
    )


def manual_compute_graph(root_features, neighbor_features, grandchildren=None,
                         feature_dim=None):
    """Build a ComputeGraph by hand: one root, its neighbors, optional
    per-neighbor grandchild lists."""
    root_features = np.asarray(root_features, dtype=np.float32)
    d = feature_dim or root_features.shape[0]
    layers = [
        Layer(
            nodes=[NodeRef(NodeType.MEMBER, 0)],
            parents=np.asarray([-1], dtype=np.int64),
            weights=np.zeros(1),
            features=root_features.reshape(1, -1),
        )
    ]
    n1 = len(neighbor_features)
    layers.append(
        Layer(
            nodes=[NodeRef(NodeType.SKILL, i) for i in range(n1)],
            parents=np.zeros(n1, dtype=np.int64),
            weights=np.ones(n1),
            features=(np.asarray(neighbor_features, dtype=np.float32).reshape(n1, d)
                      if n1 else np.zeros((0, d), dtype=np.float32)),
        )
    )
    if grandchildren is not None:
        nodes, parents, feats = [], [], []
        for parent_idx, rows in enumerate(grandchildren):
            for row in rows:
                nodes.append(NodeRef(NodeType.JOB, len(nodes)))
                parents.append(parent_idx)
                feats.append(np.asarray(row, dtype=np.float32))
        layers.append(
            Layer(
                nodes=nodes,
                parents=np.asarray(parents, dtype=np.int64),
                weights=np.ones(len(nodes)),
                features=(np.stack(feats) if feats
                          else np.zeros((0, d), dtype=np.float32)),
            )
        )
    return ComputeGraph(root=layers[0].nodes[0], layers=layers)


class TestAggregateMean:
    def test_identity_single_neighbor(self):
        lp = identity_layer(3)
        x = np.array([[1.0, -2.0, 0.5]])
        np.testing.assert_allclose(aggregate_mean(x, lp), x[0])

    def test_symmetric_neighbors_cancel(self):
        lp = layer(3, 3, activation="identity", seed=1)
        lp.bias[...] = 0.0
        x = np.array([[1.0, 2.0, 3.0], [-1.0, -2.0, -3.0]])
        np.testing.assert_allclose(aggregate_mean(x, lp), np.zeros(3), atol=1e-12)

    def test_matches_elementwise_oracle(self):
        rng = np.random.default_rng(3)
        lp = layer(5, 4, activation="relu", seed=2)
        x = rng.normal(size=(3, 4))
        got = aggregate_mean(x, lp)
        # independent scalar oracle
        acc = np.zeros(5)
        for row in x:
            pre = np.zeros(5)
            for o in range(5):
                s = float(lp.bias[o])
                for i in range(4):
                    s += float(lp.weight[o, i]) * row[i]
                pre[o] = s
            acc += np.maximum(pre, 0.0)
        np.testing.assert_allclose(got, acc / 3.0, atol=1e-6)

    def test_empty_neighbors_rejected(self):
        with pytest.raises(ShapeMismatch):
            aggregate_mean(np.zeros((0, 3)), identity_layer(3))

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeMismatch):
            aggregate_mean(np.zeros((2, 4)), identity_layer(3))

    @given(seed=st.integers(0, 1000))
    @settings(max_examples=25, deadline=None)
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        lp = layer(4, 4, activation="relu", seed=seed)
        x = rng.normal(size=(5, 4))
        perm = rng.permutation(5)
        a = aggregate_mean(x, lp)
        b = aggregate_mean(x[perm], lp)
        np.testing.assert_allclose(a, b, atol=1e-9)


class TestAggregateAttention:
    def test_single_neighbor_ignores_attention_vector(self):
        lp = layer(3, 3, activation="identity", seed=4)
        center = np.array([0.3, -0.1, 2.0])
        x = np.array([[1.0, 2.0, 3.0]])
        got = aggregate_attention(center, x, lp)
        f = x[0] @ lp.weight.T.astype(np.float64) + lp.bias
        np.testing.assert_allclose(got, f, atol=1e-12)
        np.testing.assert_allclose(attention_coefficients(center, x, lp), [1.0])

    def test_zero_attention_vector_reduces_to_mean(self):
        lp = layer(4, 3, activation="relu", seed=5)
        lp.attention[...] = 0.0
        center = np.array([0.5, 0.5, -0.5])
        x = np.random.default_rng(6).normal(size=(4, 3))
        np.testing.assert_allclose(
            aggregate_attention(center, x, lp), aggregate_mean(x, lp), atol=0
        )
        np.testing.assert_allclose(attention_coefficients(center, x, lp), 0.25)

    def test_alphas_match_scalar_softmax_oracle(self):
        rng = np.random.default_rng(7)
        lp = layer(3, 3, activation="identity", seed=8)
        center = rng.normal(size=3)
        x = rng.normal(size=(3, 3))
        alphas = attention_coefficients(center, x, lp)
        w, b = lp.weight.astype(np.float64), lp.bias.astype(np.float64)
        a_c, a_n = lp.attention[:3].astype(np.float64), lp.attention[3:].astype(np.float64)
        f_center = w @ center + b
        scores = []
        for row in x:
            e = float(a_c @ f_center + a_n @ (w @ row + b))
            scores.append(e if e > 0 else 0.2 * e)  # leaky slope 0.2
        exp = np.exp(np.array(scores) - max(scores))
        oracle = exp / exp.sum()
        np.testing.assert_allclose(alphas, oracle, atol=1e-6)
        assert abs(alphas.sum() - 1.0) < 1e-12

    @given(seed=st.integers(0, 1000))
    @settings(max_examples=25, deadline=None)
    def test_attention_simplex_property(self, seed):
        rng = np.random.default_rng(seed)
        lp = layer(3, 4, activation="relu", seed=seed)
        center = rng.normal(size=4)
        x = rng.normal(size=(int(rng.integers(1, 7)), 4))
        alphas = attention_coefficients(center, x, lp)
        assert np.all(alphas >= 0)
        assert abs(alphas.sum() - 1.0) < 1e-9

    @given(seed=st.integers(0, 1000))
    @settings(max_examples=25, deadline=None)
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        lp = layer(4, 4, activation="relu", seed=seed + 1)
        center = rng.normal(size=4)
        x = rng.normal(size=(5, 4))
        perm = rng.permutation(5)
        a = aggregate_attention(center, x, lp)
        b = aggregate_attention(center, x[perm], lp)
        np.testing.assert_allclose(a, b, atol=1e-9)


class TestEncode:
    def test_one_layer_mean_collapses_to_neighbor_features(self):
        # U = 0, identity pieces, single neighbor: embedding = neighbor features
        d = 4
        params = EncoderParams(layers=[identity_layer(d + 6)], aggregation="mean",
                               feature_dim=d)
        # make input dim match: weight must be (out, d+6); identity works since
        # augment appends the one-hot after the raw features
        neighbor = np.array([1.0, 2.0, 3.0, 4.0], dtype=np.float32)
        cg = manual_compute_graph(np.zeros(d, dtype=np.float32), [neighbor])
        emb = encode(cg, params)
        np.testing.assert_allclose(emb[:d], neighbor)

    def test_zero_neighbors_uses_self_path_only(self):
        d = 3
        lp = identity_layer(d + 6)
        lp.self_weight = np.eye(d + 6, dtype=np.float32) * 2.0
        params = EncoderParams(layers=[lp], aggregation="mean", feature_dim=d)
        root = np.array([1.0, -1.0, 0.5], dtype=np.float32)
        cg = manual_compute_graph(root, [])
        emb = encode(cg, params)
        np.testing.assert_allclose(emb[:d], 2.0 * root)

    def test_two_layer_matches_recursive_oracle(self):
        rng = np.random.default_rng(11)
        d = 4
        params = init_encoder_params(d, (5, 3), aggregation="mean", seed=12)
        randomize_params(params, 13)
        neighbors = [rng.normal(size=d) for _ in range(2)]
        grands = [[rng.normal(size=d) for _ in range(2)] for _ in range(2)]
        cg = manual_compute_graph(rng.normal(size=d), neighbors, grands)
        got = encode_batch([cg], params)[0][0]

        # independent recursive evaluation (per-occurrence, no vectorization)
        def f(level, x):
            lp = params.layers[level - 1]
            act = (lambda v: np.maximum(v, 0)) if lp.activation == "relu" else (lambda v: v)
            return act(lp.weight.astype(np.float64) @ x + lp.bias.astype(np.float64))

        def combine(level, h_self, child_hs):
            lp = params.layers[level - 1]
            act = (lambda v: np.maximum(v, 0)) if lp.activation == "relu" else (lambda v: v)
            agg = (np.mean([f(level, h) for h in child_hs], axis=0)
                   if child_hs else np.zeros(lp.out_dim))
            return act(lp.self_weight.astype(np.float64) @ h_self + agg)

        def rep(node, level):
            # node: (features, children)
            feats, children = node
            if level == 0:
                return feats
            return combine(level, rep(node, level - 1),
                           [rep(c, level - 1) for c in children])

        aug = lambda x, t: np.concatenate([x, np.eye(6)[t]])
        tree = (
            aug(cg.layers[0].features[0].astype(np.float64), 0),
            [
                (aug(np.asarray(neighbors[i], dtype=np.float32).astype(np.float64), 2),
                 [(aug(np.asarray(g, dtype=np.float32).astype(np.float64), 1), [])
                  for g in grands[i]])
                for i in range(2)
            ],
        )

        def rep2(node, level):
            feats, children = node
            if level == 0:
                return feats
            return combine(level, rep2((feats, children), level - 1),
                           [rep2(c, level - 1) for c in children])

        oracle = rep2(tree, 2)
        np.testing.assert_allclose(got, oracle, atol=1e-6)

    def test_hop_count_mismatch_rejected(self):
        params = init_encoder_params(4, (3, 3), seed=0)
        cg = manual_compute_graph(np.zeros(4, dtype=np.float32), [np.ones(4)])
        with pytest.raises(ShapeMismatch):
            encode(cg, params)

    def test_feature_dim_mismatch_rejected(self):
        params = init_encoder_params(5, (3,), seed=0)
        cg = manual_compute_graph(np.zeros(4, dtype=np.float32), [np.ones(4)])
        with pytest.raises(ShapeMismatch):
            encode(cg, params)

    def test_deterministic(self):
        params = init_encoder_params(4, (3, 3), seed=1)
        randomize_params(params, 2)
        rng = np.random.default_rng(3)
        cg = manual_compute_graph(rng.normal(size=4), [rng.normal(size=4)],
                                  [[rng.normal(size=4)]])
        a = encode(cg, params)
        b = encode(cg, params)
        assert a.tobytes() == b.tobytes()

    def test_untrained_default_embeds_connected_nodes_identically(self):
        params = init_encoder_params(4, (8, 6), seed=9)
        rng = np.random.default_rng(10)
        cg1 = manual_compute_graph(rng.normal(size=4), [rng.normal(size=4)],
                                   [[rng.normal(size=4)]])
        cg2 = manual_compute_graph(rng.normal(size=4), [rng.normal(size=4), rng.normal(size=4)],
                                   [[rng.normal(size=4)], []])
        e1, e2 = encode(cg1, params), encode(cg2, params)
        np.testing.assert_allclose(e1, e2, atol=1e-7)
        assert np.linalg.norm(e1) > 0  # cosine stays defined at init


class TestDecoders:
    def test_dot_zero_and_orthonormal_cases(self):
        z = np.zeros((1, 3))
        assert decode_dot(z, z)[0, 0] == 0.0
        e1, e2 = np.eye(3)[0][None, :], np.eye(3)[1][None, :]
        assert decode_dot(e1, e2)[0, 0] == 0.0
        assert decode_dot(e1, e1)[0, 0] == 1.0

    def test_dot_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(20)
        m, j = rng.normal(size=(2, 5)), rng.normal(size=(3, 5))
        got = decode_dot(m, j)
        for a in range(2):
            for b in range(3):
                s = sum(m[a, k] * j[b, k] for k in range(5))
                assert abs(got[a, b] - s) < 1e-6

    def test_cosine_self_and_antiparallel(self):
        v = np.array([[1.0, 2.0, -1.0]])
        assert abs(decode_cosine(v, v)[0, 0] - 1.0) < 1e-12
        assert abs(decode_cosine(v, -2.0 * v)[0, 0] + 1.0) < 1e-12

    def test_cosine_bounds_and_oracle(self):
        rng = np.random.default_rng(21)
        m, j = rng.normal(size=(4, 6)), rng.normal(size=(5, 6))
        got = decode_cosine(m, j)
        assert np.all(got >= -1.0) and np.all(got <= 1.0)
        for a in range(4):
            for b in range(5):
                oracle = float(m[a] @ j[b] / (np.linalg.norm(m[a]) * np.linalg.norm(j[b])))
                assert abs(got[a, b] - oracle) < 1e-6

    def test_cosine_zero_norm_identifies_offender(self):
        good = np.ones((1, 3))
        bad = np.vstack([np.ones(3), np.zeros(3)])
        with pytest.raises(ZeroNormEmbedding) as err:
            decode_cosine(good, bad)
        assert err.value.side == "job" and err.value.index == 1

    def test_mlp_zero_network_scores_zero(self):
        mlp = Mlp([6, 4, 1], zero_init=True)
        m, j = np.ones((2, 3)), np.ones((2, 3))
        np.testing.assert_array_equal(decode_mlp(m, j, mlp), np.zeros((2, 2)))

    def test_mlp_single_linear_layer_closed_form(self):
        mlp = Mlp([6, 1], zero_init=True)
        w_m = np.array([0.5, -1.0, 2.0])
        w_j = np.array([1.0, 1.0, -0.5])
        mlp.weights[0] = np.concatenate([w_m, w_j])[None, :].astype(np.float32)
        rng = np.random.default_rng(22)
        m, j = rng.normal(size=(3, 3)), rng.normal(size=(2, 3))
        got = decode_mlp(m, j, mlp)
        for a in range(3):
            for b in range(2):
                expect = float(w_m.astype(np.float32) @ m[a] + w_j.astype(np.float32) @ j[b])
                assert abs(got[a, b] - expect) < 1e-6

    def test_mlp_hidden_layer_matches_manual_forward(self):
        rng = np.random.default_rng(23)
        mlp = Mlp([4, 3, 1], seed=24)
        m, j = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
        got = decode_mlp(m, j, mlp)
        for a in range(2):
            for b in range(2):
                x = np.concatenate([m[a], j[b]])
                h = np.maximum(mlp.weights[0].astype(np.float64) @ x + mlp.biases[0], 0.0)
                y = float((mlp.weights[1].astype(np.float64) @ h + mlp.biases[1])[0])
                assert abs(got[a, b] - y) < 1e-6

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeMismatch):
            decode_dot(np.ones((1, 3)), np.ones((1, 4)))
        with pytest.raises(ShapeMismatch):
            decode_mlp(np.ones((1, 3)), np.ones((1, 3)), Mlp([4, 1]))


class TestLoss:
    def test_ln2_fixed_point_label_one(self):
        loss, grad = loss_cross_entropy(np.array([[0.0]]), np.array([[1.0]]))
        assert abs(loss - math.log(2.0)) < 1e-12
        assert abs(grad[0, 0] + 0.5) < 1e-12

    def test_ln2_fixed_point_label_zero(self):
        loss, grad = loss_cross_entropy(np.array([[0.0]]), np.array([[0.0]]))
        assert abs(loss - math.log(2.0)) < 1e-12
        assert abs(grad[0, 0] - 0.5) < 1e-12

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(30)
        scores = rng.normal(scale=3.0, size=(2, 2))
        labels = (rng.random((2, 2)) < 0.5).astype(float)
        loss, grad = loss_cross_entropy(scores, labels)
        oracle = 0.0
        for a in range(2):
            for b in range(2):
                s, y = scores[a, b], labels[a, b]
                sig = 1.0 / (1.0 + math.exp(-s))
                oracle -= y * math.log(sig) + (1 - y) * math.log(1 - sig)
                assert abs(grad[a, b] - (sig - y)) < 1e-9
        assert abs(loss - oracle) < 1e-9

    def test_saturated_correct_scores_vanish(self):
        scores = np.array([[30.0, -30.0], [-30.0, 30.0]])
        labels = np.array([[1.0, 0.0], [0.0, 1.0]])
        loss, _ = loss_cross_entropy(scores, labels)
        assert 0.0 <= loss < 1e-6

    def test_loss_nonnegative_property(self):
        rng = np.random.default_rng(31)
        for _ in range(50):
            s = rng.normal(scale=5.0, size=(3, 3))
            y = (rng.random((3, 3)) < 0.5).astype(float)
            loss, _ = loss_cross_entropy(s, y)
            assert loss >= 0.0

    def test_extreme_scores_stay_finite(self):
        loss, grad = loss_cross_entropy(np.array([[800.0, -800.0]]),
                                        np.array([[0.0, 1.0]]))
        assert np.isfinite(loss) and np.all(np.isfinite(grad))

    def test_shape_and_label_validation(self):
        with pytest.raises(ShapeMismatch):
            loss_cross_entropy(np.zeros((2, 2)), np.zeros((2, 3)))
        with pytest.raises(InvalidLabel):
            loss_cross_entropy(np.zeros((1, 1)), np.array([[0.5]]))


class TestInBatchLabels:
    def test_size_one(self):
        np.testing.assert_array_equal(make_in_batch_labels(1), [[1.0]])

    def test_size_three_identity(self):
        np.testing.assert_array_equal(make_in_batch_labels(3), np.eye(3))

    @given(size=st.integers(1, 40))
    def test_row_sums_are_one(self, size):
        assert np.all(make_in_batch_labels(size).sum(axis=1) == 1.0)


def _random_training_setup(seed, aggregation, decoder, batch=2, d=4, dims=(4, 3)):
    """Small random batch of compute graphs plus a loss closure for gradcheck."""
    rng = np.random.default_rng(seed)
    params = init_encoder_params(d, dims, aggregation=aggregation, seed=seed)
    randomize_params(params, seed + 1)
    mlp = Mlp([2 * dims[-1], 3, 1], seed=seed + 2) if decoder == "mlp" else None

    def random_cg():
        n1 = int(rng.integers(1, 4))
        neighbors = [rng.normal(size=d) for _ in range(n1)]
        grands = [[rng.normal(size=d) for _ in range(int(rng.integers(0, 3)))]
                  for _ in range(n1)]
        if len(dims) == 2:
            return manual_compute_graph(rng.normal(size=d), neighbors, grands)
        return manual_compute_graph(rng.normal(size=d), neighbors)

    members = [random_cg() for _ in range(batch)]
    jobs = [random_cg() for _ in range(batch)]
    if decoder == "in_batch":
        labels = make_in_batch_labels(batch)
    else:
        labels = (rng.random(batch) < 0.5).astype(float)

    def forward():
        emb, cache = encode_batch(members + jobs, params)
        m_emb, j_emb = emb[:batch], emb[batch:]
        if decoder == "in_batch":
            scores, dec_back = score_matrix_dot(m_emb, j_emb)
        else:
            scores, dec_back = score_pairs(m_emb, j_emb, decoder, mlp)
        loss, d_scores = loss_cross_entropy(scores, labels)
        return loss, d_scores, dec_back, cache

    return params, mlp, forward


class TestBackward:
    def test_zero_upstream_gradient_gives_zero_param_gradients(self):
        params, _, forward = _random_training_setup(50, "mean", "in_batch")
        _, _, dec_back, cache = forward()
        dm, dj, _ = dec_back(np.zeros((2, 2)))
        grads = backward_batch(cache, np.concatenate([dm, dj]))
        for g in grads.values():
            np.testing.assert_array_equal(g, 0.0)

    @pytest.mark.parametrize("aggregation", ["mean", "attention"])
    @pytest.mark.parametrize("decoder", ["dot", "cosine", "mlp", "in_batch"])
    def test_gradients_match_central_differences(self, aggregation, decoder):
        combo = ["mean", "attention"].index(aggregation) * 4 + [
            "dot", "cosine", "mlp", "in_batch"
        ].index(decoder)
        params, mlp, forward = _random_training_setup(61 + 13 * combo, aggregation, decoder)
        loss, d_scores, dec_back, cache = forward()
        dm, dj, mlp_grads = dec_back(d_scores)
        grads = backward_batch(cache, np.concatenate([dm, dj]))
        flat = dict(params.param_dict())
        if mlp is not None:
            grads.update({f"decoder.{k}": v for k, v in mlp_grads.items()})
            flat.update({f"decoder.{k}": v for k, v in mlp.param_dict().items()})

        def loss_only():
            return forward()[0]

        gradcheck(flat, grads, loss_only)

    def test_duplicated_pair_doubles_gradient(self):
        rng = np.random.default_rng(70)
        d = 4
        params = init_encoder_params(d, (4, 3), seed=71)
        randomize_params(params, 72)
        cg_m = manual_compute_graph(rng.normal(size=d), [rng.normal(size=d)],
                                    [[rng.normal(size=d)]])
        cg_j = manual_compute_graph(rng.normal(size=d), [rng.normal(size=d)], [[]])

        def run(times):
            members, jobs = [cg_m] * times, [cg_j] * times
            emb, cache = encode_batch(members + jobs, params)
            scores, dec_back = score_pairs(emb[:times], emb[times:], "dot")
            loss, ds = loss_cross_entropy(scores, np.ones(times))
            dm, dj, _ = dec_back(ds)
            return loss, backward_batch(cache, np.concatenate([dm, dj]))

        loss1, grads1 = run(1)
        loss2, grads2 = run(2)
        assert abs(loss2 - 2 * loss1) < 1e-9
        for key in grads1:
            np.testing.assert_allclose(grads2[key], 2.0 * grads1[key], atol=1e-9)

    def test_trailing_childless_parent_gradients(self):
        # regression: a last layer-1 occurrence with no children used to
        # corrupt the preceding segment's reduction span
        rng = np.random.default_rng(140)
        d = 4
        params = init_encoder_params(d, (4, 3), seed=141)
        randomize_params(params, 142)
        cg = manual_compute_graph(
            rng.normal(size=d),
            [rng.normal(size=d), rng.normal(size=d)],
            [[rng.normal(size=d), rng.normal(size=d)], []],
        )

        def loss_fn():
            e, _ = encode_batch([cg], params)
            return float(e.sum())

        e, cache = encode_batch([cg], params)
        grads = backward_batch(cache, np.ones_like(e))
        gradcheck(dict(params.param_dict()), grads, loss_fn)

    def test_stale_forward_state_detected(self):
        params, _, forward = _random_training_setup(80, "mean", "dot")
        _, d_scores, dec_back, cache = forward()
        dm, dj, _ = dec_back(d_scores)
        params.bump_version()  # simulates an optimizer step since the forward
        with pytest.raises(StaleForwardState):
            backward_batch(cache, np.concatenate([dm, dj]))


class TestEncoderDeterminism:
    def test_bit_identical_across_runs(self):
        params, _, _ = _random_training_setup(90, "attention", "dot")[0], None, None
        rng = np.random.default_rng(91)
        cg = manual_compute_graph(rng.normal(size=4), [rng.normal(size=4)] * 3,
                                  [[rng.normal(size=4)], [], [rng.normal(size=4)]])
        p = init_encoder_params(4, (4, 3), aggregation="attention", seed=92)
        randomize_params(p, 93)
        a, _ = encode_batch([cg], p)
        b, _ = encode_batch([cg], p)
        assert a.tobytes() == b.tobytes()


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        params = init_encoder_params(6, (8, 5), aggregation="attention", seed=100)
        randomize_params(params, 101)
        mlp = Mlp([10, 4, 1], seed=102)
        path = str(tmp_path / "model.ckpt")
        save_encoder_checkpoint(path, params, "mlp", mlp)
        loaded, decoder_kind, loaded_mlp = load_encoder_checkpoint(path)
        assert decoder_kind == "mlp"
        assert loaded.aggregation == "attention"
        assert loaded.feature_dim == 6
        for a, b in zip(params.layers, loaded.layers):
            np.testing.assert_array_equal(a.weight, b.weight)
            np.testing.assert_array_equal(a.bias, b.bias)
            np.testing.assert_array_equal(a.self_weight, b.self_weight)
            np.testing.assert_array_equal(a.attention, b.attention)
            assert a.activation == b.activation
        for a, b in zip(mlp.weights, loaded_mlp.weights):
            np.testing.assert_array_equal(a, b)

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"not a checkpoint at all")
        from jobgraph.errors import CheckpointError
        with pytest.raises(CheckpointError):
            load_encoder_checkpoint(str(path))

    def test_embeddings_survive_round_trip(self, tmp_path):
        params = init_encoder_params(4, (4, 3), seed=110)
        randomize_params(params, 111)
        rng = np.random.default_rng(112)
        cg = manual_compute_graph(rng.normal(size=4), [rng.normal(size=4)],
                                  [[rng.normal(size=4)]])
        before = encode(cg, params)
        path = str(tmp_path / "model.ckpt")
        save_encoder_checkpoint(path, params, "in_batch")
        loaded, _, _ = load_encoder_checkpoint(path)
        after = encode(cg, loaded)
        assert before.tobytes() == after.tobytes()
