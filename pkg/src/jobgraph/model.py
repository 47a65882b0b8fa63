"""Encoder-decoder model over sampled compute graphs, with hand-rolled gradients.

The encoder is an inductive neighborhood-aggregation network. Writing h^0(v)
for a node occurrence's raw input (features plus a node-type one-hot) and
f_l(x) = act_l(W_l x + b_l) for the per-layer feature transform, each layer
combines self and neighbor information:

    h^l(v) = act_l( U_l h^(l-1)(v) + AGG_l({f_l(h^(l-1)(c)) : c children of v}) )

AGG is an unweighted mean or a learned softmax attention over the children;
an occurrence with no sampled children contributes a zero aggregate, so
cold nodes still embed through the self path. Hidden layers rectify,
the output layer is linear. All reductions accumulate in float64;
parameters and stored features stay float32.

Scores come from dot-product, cosine, or MLP decoders; training minimizes
a summed sigmoid cross-entropy. Gradients for every parameter are computed
by an explicit reverse pass over the layered evaluation (no autodiff) and
are validated against central finite differences in the test suite.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    CheckpointError,
    InvalidLabel,
    ShapeMismatch,
    StaleForwardState,
    ZeroNormEmbedding,
)
from .graph import NodeType
from .sampling import ComputeGraph

NODE_TYPE_ORDER = list(NodeType)
_TYPE_INDEX = {t: i for i, t in enumerate(NODE_TYPE_ORDER)}
NUM_NODE_TYPES = len(NODE_TYPE_ORDER)

ATTENTION_LEAK = 0.2


# -- activations ---------------------------------------------------------------

def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _drelu(pre: np.ndarray) -> np.ndarray:
    return (pre > 0.0).astype(pre.dtype)


def _identity(x: np.ndarray) -> np.ndarray:
    return x


def _done(pre: np.ndarray) -> np.ndarray:
    return np.ones_like(pre)


ACTIVATIONS = {"relu": (_relu, _drelu), "identity": (_identity, _done)}


def _leaky(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, x, ATTENTION_LEAK * x)


def _dleaky(pre: np.ndarray) -> np.ndarray:
    return np.where(pre > 0.0, 1.0, ATTENTION_LEAK)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    t = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + t), t / (1.0 + t))


# -- parameters ------------------------------------------------------------------

@dataclass
class LayerParams:
    """One encoder layer: transform (weight, bias), self combine, attention vector."""

    weight: np.ndarray       # (out, in) float32, the W inside f
    bias: np.ndarray         # (out,) float32
    self_weight: np.ndarray  # (out, in) float32
    attention: np.ndarray    # (2*out,) float32, used only in attention mode
    activation: str = "relu"

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class EncoderParams:
    """Learnable encoder state; ``version`` tracks optimizer steps so that a
    backward pass can detect it no longer matches its forward cache."""

    layers: list[LayerParams]
    aggregation: str = "mean"  # "mean" | "attention"
    feature_dim: int = 16
    version: int = 0

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.feature_dim + NUM_NODE_TYPES

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def validate(self) -> None:
        if self.aggregation not in ("mean", "attention"):
            raise ShapeMismatch(f"unknown aggregation {self.aggregation!r}")
        expect_in = self.input_dim
        for i, layer in enumerate(self.layers):
            if layer.weight.shape != (layer.out_dim, expect_in):
                raise ShapeMismatch(
                    f"layer {i} weight shape {layer.weight.shape}, expected "
                    f"({layer.out_dim}, {expect_in})"
                )
            if layer.self_weight.shape != layer.weight.shape:
                raise ShapeMismatch(f"layer {i} self_weight shape mismatch")
            if layer.bias.shape != (layer.out_dim,):
                raise ShapeMismatch(f"layer {i} bias shape mismatch")
            if layer.attention.shape != (2 * layer.out_dim,):
                raise ShapeMismatch(f"layer {i} attention shape mismatch")
            for arr in (layer.weight, layer.bias, layer.self_weight, layer.attention):
                if not np.all(np.isfinite(arr)):
                    raise ShapeMismatch(f"layer {i} has non-finite parameters")
            expect_in = layer.out_dim

    def param_dict(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for i, layer in enumerate(self.layers):
            out[f"layer{i}.weight"] = layer.weight
            out[f"layer{i}.bias"] = layer.bias
            out[f"layer{i}.self_weight"] = layer.self_weight
            if self.aggregation == "attention":
                out[f"layer{i}.attention"] = layer.attention
        return out

    def bump_version(self) -> None:
        self.version += 1

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            layers=[
                LayerParams(
                    l.weight.copy(), l.bias.copy(), l.self_weight.copy(),
                    l.attention.copy(), l.activation,
                )
                for l in self.layers
            ],
            aggregation=self.aggregation,
            feature_dim=self.feature_dim,
            version=self.version,
        )


def init_encoder_params(
    feature_dim: int,
    layer_dims: Sequence[int] = (32, 32),
    aggregation: str = "mean",
    seed: int = 0,
) -> EncoderParams:
    """He-initialized hidden layers; a lazy output head (zero weights, small
    random bias) so an untrained model embeds every connected node to the
    same vector. That makes untrained rankings pure ties, keeps cosine
    well-defined, and the head becomes live after the first optimizer step.
    Attention vectors start at zero, which makes attention equal mean
    aggregation until trained.
    """
    rng = np.random.default_rng(seed)
    layers: list[LayerParams] = []
    in_dim = feature_dim + NUM_NODE_TYPES
    for i, out_dim in enumerate(layer_dims):
        last = i == len(layer_dims) - 1
        if last:
            weight = np.zeros((out_dim, in_dim), dtype=np.float32)
            self_weight = np.zeros((out_dim, in_dim), dtype=np.float32)
            bias = rng.normal(0.0, 0.1, size=out_dim).astype(np.float32)
        else:
            scale = np.sqrt(2.0 / in_dim)
            weight = rng.normal(0.0, scale, size=(out_dim, in_dim)).astype(np.float32)
            self_weight = rng.normal(0.0, scale, size=(out_dim, in_dim)).astype(np.float32)
            bias = np.zeros(out_dim, dtype=np.float32)
        layers.append(
            LayerParams(
                weight=weight,
                bias=bias,
                self_weight=self_weight,
                attention=np.zeros(2 * out_dim, dtype=np.float32),
                activation="identity" if last else "relu",
            )
        )
        in_dim = out_dim
    params = EncoderParams(layers=layers, aggregation=aggregation, feature_dim=feature_dim)
    params.validate()
    return params


def augment_features(features: np.ndarray, node_types: Sequence[NodeType]) -> np.ndarray:
    """Append the node-type one-hot so all types share one transform per layer."""
    n = features.shape[0]
    out = np.zeros((n, features.shape[1] + NUM_NODE_TYPES), dtype=np.float64)
    out[:, : features.shape[1]] = features
    if n:
        idx = np.fromiter((_TYPE_INDEX[t] for t in node_types), dtype=np.int64, count=n)
        out[np.arange(n), features.shape[1] + idx] = 1.0
    return out


# -- standalone aggregation ops (the per-node reference semantics) -------------

def _transform(x: np.ndarray, layer: LayerParams) -> np.ndarray:
    act, _ = ACTIVATIONS[layer.activation]
    return act(x @ layer.weight.T.astype(np.float64) + layer.bias.astype(np.float64))


def aggregate_mean(neighbor_features: np.ndarray, layer: LayerParams) -> np.ndarray:
    """Mean of the transformed neighbor inputs: (1/|N|) sum_n f(x_n)."""
    x = np.asarray(neighbor_features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeMismatch("aggregate_mean needs a non-empty (n, in_dim) array")
    if x.shape[1] != layer.in_dim:
        raise ShapeMismatch(f"neighbor dim {x.shape[1]} != layer in_dim {layer.in_dim}")
    return _transform(x, layer).mean(axis=0)


def attention_coefficients(
    center_features: np.ndarray, neighbor_features: np.ndarray, layer: LayerParams
) -> np.ndarray:
    """Softmax attention weights over neighbors.

    Scores are a leaky-rectified linear form over the concatenated
    transformed center and neighbor: leaky(a . [f(center) || f(n)]).
    A zero attention vector therefore yields uniform weights (mean).
    """
    x = np.asarray(neighbor_features, dtype=np.float64)
    center = np.asarray(center_features, dtype=np.float64).reshape(1, -1)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeMismatch("attention needs a non-empty (n, in_dim) array")
    if x.shape[1] != layer.in_dim or center.shape[1] != layer.in_dim:
        raise ShapeMismatch("center/neighbor dims do not match layer in_dim")
    f_center = _transform(center, layer)[0]
    f_neigh = _transform(x, layer)
    a = layer.attention.astype(np.float64)
    a_center, a_neigh = a[: layer.out_dim], a[layer.out_dim :]
    scores = _leaky(f_center @ a_center + f_neigh @ a_neigh)
    scores = scores - scores.max()
    expd = np.exp(scores)
    return expd / expd.sum()


def aggregate_attention(
    center_features: np.ndarray, neighbor_features: np.ndarray, layer: LayerParams
) -> np.ndarray:
    """Attention-weighted sum of transformed neighbors: sum_n alpha_n f(x_n)."""
    alphas = attention_coefficients(center_features, neighbor_features, layer)
    f_neigh = _transform(np.asarray(neighbor_features, dtype=np.float64), layer)
    return alphas @ f_neigh


# -- segment helpers (children are stored contiguously per parent) --------------

def _segment_starts(counts: np.ndarray) -> np.ndarray:
    starts = np.zeros(counts.shape[0], dtype=np.int64)
    if counts.shape[0] > 1:
        np.cumsum(counts[:-1], out=starts[1:])
    return starts


def segment_sum(rows: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Sum contiguous row blocks; zero rows for empty segments.

    reduceat is applied only at the starts of non-empty segments: a start
    index equal to len(rows) (possible with trailing empty segments) is
    illegal, and naively clamping it would corrupt the previous segment.
    """
    n_seg = counts.shape[0]
    if rows.ndim == 1:
        rows = rows[:, None]
        squeeze = True
    else:
        squeeze = False
    out = np.zeros((n_seg, rows.shape[1]), dtype=np.float64)
    nonzero = np.flatnonzero(counts)
    if rows.shape[0] and nonzero.size:
        starts = _segment_starts(counts)
        out[nonzero] = np.add.reduceat(
            rows.astype(np.float64, copy=False), starts[nonzero], axis=0
        )
    return out[:, 0] if squeeze else out


def segment_max(values: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Max per contiguous block; -inf for empty segments (never indexed)."""
    out = np.full(counts.shape[0], -np.inf)
    nonzero = np.flatnonzero(counts)
    if values.shape[0] and nonzero.size:
        starts = _segment_starts(counts)
        out[nonzero] = np.maximum.reduceat(values, starts[nonzero])
    return out


def segment_softmax(values: np.ndarray, parent_idx: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Per-parent softmax over contiguous child blocks."""
    if values.shape[0] == 0:
        return values.astype(np.float64)
    seg_max = segment_max(values, counts)
    shifted = values - seg_max[parent_idx]
    expd = np.exp(shifted)
    denom = segment_sum(expd, counts)
    return expd / denom[parent_idx]


# -- batched forward/backward ----------------------------------------------------


@dataclass
class ForwardCache:
    """Everything the reverse pass needs, pinned to one parameter version."""

    params: EncoderParams
    params_version: int
    num_roots: int
    x: list[np.ndarray]                 # augmented inputs per depth (float64)
    parents: list[np.ndarray]           # global parent index per depth >= 1
    counts: list[np.ndarray]            # children count per occurrence per depth
    h: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)
    cells: dict[tuple[int, int], dict[str, np.ndarray]] = field(default_factory=dict)


def _stack_compute_graphs(cgs: Sequence[ComputeGraph], params: EncoderParams):
    depth = params.num_layers
    for cg in cgs:
        if cg.hops != depth:
            raise ShapeMismatch(
                f"compute graph has {cg.hops} hops, encoder has {depth} layers"
            )
        if cg.layers[0].features.shape[1] != params.feature_dim:
            raise ShapeMismatch(
                f"feature dim {cg.layers[0].features.shape[1]} != encoder "
                f"feature_dim {params.feature_dim}"
            )
    xs: list[np.ndarray] = []
    parents: list[np.ndarray] = []
    counts: list[np.ndarray] = []
    for d in range(depth + 1):
        feats = [cg.layers[d].features for cg in cgs]
        types: list[NodeType] = []
        for cg in cgs:
            types.extend(ref.node_type for ref in cg.layers[d].nodes)
        stacked = (
            np.concatenate(feats, axis=0)
            if feats
            else np.zeros((0, params.feature_dim), dtype=np.float32)
        )
        xs.append(augment_features(stacked, types))
        if d > 0:
            offset = 0
            blocks = []
            for cg in cgs:
                blocks.append(cg.layers[d].parents + offset)
                offset += len(cg.layers[d - 1])
            parent_global = (
                np.concatenate(blocks) if blocks else np.zeros(0, dtype=np.int64)
            )
            parents.append(parent_global)
            counts.append(np.bincount(parent_global, minlength=xs[d - 1].shape[0]))
    return xs, parents, counts


def encode_batch(
    cgs: Sequence[ComputeGraph], params: EncoderParams
) -> tuple[np.ndarray, ForwardCache]:
    """Embed many compute graphs in one vectorized pass.

    Occurrences at depth d are evaluated at encoder layers 1..(L-d) via
    dynamic programming; the root rows at layer L are the embeddings
    (float64; cast to float32 at storage boundaries).
    """
    params.validate()
    xs, parents, counts = _stack_compute_graphs(cgs, params)
    depth = params.num_layers
    cache = ForwardCache(
        params=params,
        params_version=params.version,
        num_roots=len(cgs),
        x=xs,
        parents=parents,
        counts=counts,
    )
    for d in range(depth + 1):
        cache.h[(d, 0)] = xs[d]
    attention = params.aggregation == "attention"
    for level in range(1, depth + 1):
        layer = params.layers[level - 1]
        w = layer.weight.astype(np.float64)
        b = layer.bias.astype(np.float64)
        u = layer.self_weight.astype(np.float64)
        act, _ = ACTIVATIONS[layer.activation]
        for d in range(0, depth - level + 1):
            h_self = cache.h[(d, level - 1)]
            h_child = cache.h[(d + 1, level - 1)]
            parent_idx = parents[d]
            count = counts[d]
            cell: dict[str, np.ndarray] = {}
            fc_pre = h_child @ w.T + b
            f_child = act(fc_pre)
            cell["fc_pre"] = fc_pre
            if attention:
                fcen_pre = h_self @ w.T + b
                f_center = act(fcen_pre)
                cell["fcen_pre"] = fcen_pre
                a = layer.attention.astype(np.float64)
                a_c, a_n = a[: layer.out_dim], a[layer.out_dim :]
                e_pre = f_center[parent_idx] @ a_c + f_child @ a_n
                e = _leaky(e_pre)
                alpha = segment_softmax(e, parent_idx, count)
                cell["e_pre"] = e_pre
                cell["alpha"] = alpha
                cell["f_center"] = f_center
                cell["f_child"] = f_child
                agg = segment_sum(alpha[:, None] * f_child, count)
            else:
                safe = np.maximum(count, 1)
                agg = segment_sum(f_child, count) / safe[:, None]
            za = h_self @ u.T + agg
            cell["za"] = za
            cache.cells[(d, level)] = cell
            cache.h[(d, level)] = act(za)
    embeddings = cache.h[(0, depth)]
    return embeddings, cache


def encode(cg: ComputeGraph, params: EncoderParams) -> np.ndarray:
    """Embedding of one query node (float32)."""
    emb, _ = encode_batch([cg], params)
    return emb[0].astype(np.float32)


def backward_batch(cache: ForwardCache, d_embeddings: np.ndarray) -> dict[str, np.ndarray]:
    """Reverse pass: gradients of a scalar loss w.r.t. every encoder parameter.

    ``d_embeddings`` is dLoss/d(root embeddings), shape (num_roots, out_dim).
    Raises StaleForwardState when the parameters were stepped since the
    matching forward pass.
    """
    params = cache.params
    if params.version != cache.params_version:
        raise StaleForwardState(
            f"parameters at version {params.version}, forward cache at "
            f"{cache.params_version}"
        )
    depth = params.num_layers
    if d_embeddings.shape != cache.h[(0, depth)].shape:
        raise ShapeMismatch("d_embeddings shape does not match the forward pass")
    attention = params.aggregation == "attention"

    grads: dict[str, np.ndarray] = {}
    for i, layer in enumerate(params.layers):
        grads[f"layer{i}.weight"] = np.zeros_like(layer.weight, dtype=np.float64)
        grads[f"layer{i}.bias"] = np.zeros_like(layer.bias, dtype=np.float64)
        grads[f"layer{i}.self_weight"] = np.zeros_like(layer.self_weight, dtype=np.float64)
        if attention:
            grads[f"layer{i}.attention"] = np.zeros_like(layer.attention, dtype=np.float64)

    d_h: dict[tuple[int, int], np.ndarray] = {
        (d, level): np.zeros_like(cache.h[(d, level)])
        for (d, level) in cache.h
    }
    d_h[(0, depth)] = d_embeddings.astype(np.float64)

    for level in range(depth, 0, -1):
        layer = params.layers[level - 1]
        w = layer.weight.astype(np.float64)
        u = layer.self_weight.astype(np.float64)
        _, dact = ACTIVATIONS[layer.activation]
        for d in range(0, depth - level + 1):
            cell = cache.cells[(d, level)]
            parent_idx = cache.parents[d]
            count = cache.counts[d]
            h_self = cache.h[(d, level - 1)]
            h_child = cache.h[(d + 1, level - 1)]
            g = d_h[(d, level)] * dact(cell["za"])
            # self path
            grads[f"layer{level-1}.self_weight"] += g.T @ h_self
            d_h[(d, level - 1)] += g @ u
            # aggregation path
            if attention:
                alpha = cell["alpha"]
                f_child = cell["f_child"]
                f_center = cell["f_center"]
                d_agg_child = g[parent_idx]           # dLoss/d(agg) routed to children
                d_alpha = np.einsum("ij,ij->i", d_agg_child, f_child)
                d_f_child = alpha[:, None] * d_agg_child
                # softmax backward per parent segment
                inner = segment_sum(alpha * d_alpha, count)
                d_e = alpha * (d_alpha - inner[parent_idx])
                d_e_pre = d_e * _dleaky(cell["e_pre"])
                a = layer.attention.astype(np.float64)
                a_c, a_n = a[: layer.out_dim], a[layer.out_dim :]
                grads[f"layer{level-1}.attention"][: layer.out_dim] += (
                    d_e_pre @ f_center[parent_idx]
                )
                grads[f"layer{level-1}.attention"][layer.out_dim :] += d_e_pre @ f_child
                d_f_child += np.outer(d_e_pre, a_n)
                d_f_center = np.zeros_like(f_center)
                np.add.at(d_f_center, parent_idx, np.outer(d_e_pre, a_c))
                # center transform backward
                d_pre_center = d_f_center * dact(cell["fcen_pre"])
                grads[f"layer{level-1}.weight"] += d_pre_center.T @ h_self
                grads[f"layer{level-1}.bias"] += d_pre_center.sum(axis=0)
                d_h[(d, level - 1)] += d_pre_center @ w
            else:
                safe = np.maximum(count, 1).astype(np.float64)
                d_f_child = g[parent_idx] / safe[parent_idx, None]
            # children transform backward
            d_pre_child = d_f_child * dact(cell["fc_pre"])
            grads[f"layer{level-1}.weight"] += d_pre_child.T @ h_child
            grads[f"layer{level-1}.bias"] += d_pre_child.sum(axis=0)
            d_h[(d + 1, level - 1)] += d_pre_child @ w
    return grads


# -- decoders --------------------------------------------------------------------

def _as_2d(arr, name: str) -> np.ndarray:
    out = np.asarray(arr, dtype=np.float64)
    if out.ndim == 1:
        out = out[None, :]
    if out.ndim != 2:
        raise ShapeMismatch(f"{name} must be a 2-d embedding matrix")
    return out


def decode_dot(member_embeddings, job_embeddings) -> np.ndarray:
    """Score matrix of all member x job dot products."""
    m = _as_2d(member_embeddings, "member_embeddings")
    j = _as_2d(job_embeddings, "job_embeddings")
    if m.shape[1] != j.shape[1]:
        raise ShapeMismatch(f"embedding dims differ: {m.shape[1]} vs {j.shape[1]}")
    return m @ j.T


def decode_cosine(member_embeddings, job_embeddings) -> np.ndarray:
    """Cosine score matrix; rejects zero-norm embeddings naming the offender."""
    m = _as_2d(member_embeddings, "member_embeddings")
    j = _as_2d(job_embeddings, "job_embeddings")
    if m.shape[1] != j.shape[1]:
        raise ShapeMismatch(f"embedding dims differ: {m.shape[1]} vs {j.shape[1]}")
    m_norm = np.linalg.norm(m, axis=1)
    j_norm = np.linalg.norm(j, axis=1)
    for idx in np.flatnonzero(m_norm == 0.0):
        raise ZeroNormEmbedding("member", int(idx))
    for idx in np.flatnonzero(j_norm == 0.0):
        raise ZeroNormEmbedding("job", int(idx))
    scores = (m / m_norm[:, None]) @ (j / j_norm[:, None]).T
    return np.clip(scores, -1.0, 1.0)


def decode_mlp(member_embeddings, job_embeddings, mlp: "Mlp") -> np.ndarray:
    """MLP decoder over concatenated pairs, scored for every member x job."""
    m = _as_2d(member_embeddings, "member_embeddings")
    j = _as_2d(job_embeddings, "job_embeddings")
    if mlp.dims[0] != m.shape[1] + j.shape[1]:
        raise ShapeMismatch(
            f"mlp input dim {mlp.dims[0]} != concatenated dim {m.shape[1] + j.shape[1]}"
        )
    n_m, n_j = m.shape[0], j.shape[0]
    pairs = np.concatenate(
        [np.repeat(m, n_j, axis=0), np.tile(j, (n_m, 1))], axis=1
    )
    scores, _ = mlp.forward(pairs)
    return scores.reshape(n_m, n_j)


# -- cross-entropy loss ------------------------------------------------------------

def loss_cross_entropy(scores, labels) -> tuple[float, np.ndarray]:
    """Summed sigmoid cross-entropy and its gradient sigma(s) - y.

    Computed in the standard stable form (never exponentiating a large
    positive score, never taking log of an explicit sigmoid).
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape:
        raise ShapeMismatch(f"scores shape {s.shape} != labels shape {y.shape}")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise InvalidLabel("labels must be 0 or 1")
    loss = float(np.sum(np.maximum(s, 0.0) - s * y + np.log1p(np.exp(-np.abs(s)))))
    grad = sigmoid(s) - y
    return loss, grad


def make_in_batch_labels(batch_size: int) -> np.ndarray:
    """Identity-pattern labels: the aligned pair is the positive, rest negatives."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    return np.eye(batch_size, dtype=np.float64)


# -- pairwise scoring with gradients (training paths) ------------------------------

def score_pairs(
    member_embeddings: np.ndarray,
    job_embeddings: np.ndarray,
    kind: str,
    mlp: "Mlp | None" = None,
):
    """Aligned per-pair scores s_k = score(M_k, J_k) plus a backward closure.

    The closure maps dLoss/ds to (dM, dJ, mlp_grads).
    """
    m = np.asarray(member_embeddings, dtype=np.float64)
    j = np.asarray(job_embeddings, dtype=np.float64)
    if m.shape != j.shape and kind != "mlp":
        raise ShapeMismatch("paired scoring needs aligned embedding matrices")
    if kind == "dot":
        s = np.einsum("ij,ij->i", m, j)

        def backward(ds):
            return ds[:, None] * j, ds[:, None] * m, None

        return s, backward
    if kind == "cosine":
        m_norm = np.linalg.norm(m, axis=1)
        j_norm = np.linalg.norm(j, axis=1)
        for idx in np.flatnonzero(m_norm == 0.0):
            raise ZeroNormEmbedding("member", int(idx))
        for idx in np.flatnonzero(j_norm == 0.0):
            raise ZeroNormEmbedding("job", int(idx))
        inv = 1.0 / (m_norm * j_norm)
        dots = np.einsum("ij,ij->i", m, j)
        s = dots * inv

        def backward(ds):
            dm = ds[:, None] * (j * inv[:, None] - (s / m_norm**2)[:, None] * m)
            dj = ds[:, None] * (m * inv[:, None] - (s / j_norm**2)[:, None] * j)
            return dm, dj, None

        return s, backward
    if kind == "mlp":
        if mlp is None:
            raise ShapeMismatch("mlp decoder requires decoder parameters")
        x = np.concatenate([m, j], axis=1)
        if mlp.dims[0] != x.shape[1]:
            raise ShapeMismatch(
                f"mlp input dim {mlp.dims[0]} != concatenated dim {x.shape[1]}"
            )
        s, mcache = mlp.forward(x)
        d = m.shape[1]

        def backward(ds):
            mlp_grads, dx = mlp.backward(mcache, ds)
            return dx[:, :d], dx[:, d:], mlp_grads

        return s, backward
    raise ShapeMismatch(f"unknown paired decoder kind {kind!r}")


def score_matrix_dot(member_embeddings: np.ndarray, job_embeddings: np.ndarray):
    """Full score matrix for in-batch training, with a backward closure."""
    m = np.asarray(member_embeddings, dtype=np.float64)
    j = np.asarray(job_embeddings, dtype=np.float64)
    s = m @ j.T

    def backward(ds):
        return ds @ j, ds.T @ m, None

    return s, backward


# -- shared feed-forward net (MLP decoder and downstream ranker) --------------------

class Mlp:
    """Plain feed-forward net: rectified hidden layers, linear scalar output."""

    def __init__(self, dims: Sequence[int], seed: int = 0, zero_init: bool = False):
        if len(dims) < 2 or dims[-1] != 1:
            raise ShapeMismatch(f"mlp dims must end in 1, got {list(dims)}")
        self.dims = tuple(int(d) for d in dims)
        rng = np.random.default_rng(seed)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for i in range(len(self.dims) - 1):
            fan_in = self.dims[i]
            if zero_init:
                w = np.zeros((self.dims[i + 1], fan_in), dtype=np.float32)
            else:
                w = rng.normal(0.0, np.sqrt(2.0 / fan_in),
                               size=(self.dims[i + 1], fan_in)).astype(np.float32)
            self.weights.append(w)
            self.biases.append(np.zeros(self.dims[i + 1], dtype=np.float32))

    def forward(self, x: np.ndarray):
        """Returns (scores shape (n,), cache)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.dims[0]:
            raise ShapeMismatch(f"mlp expects (n, {self.dims[0]}) input, got {x.shape}")
        pres = []
        h = x
        hs = [h]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            pre = h @ w.T.astype(np.float64) + b.astype(np.float64)
            pres.append(pre)
            h = pre if i == last else _relu(pre)
            hs.append(h)
        return h[:, 0], (hs, pres)

    def backward(self, cache, d_scores: np.ndarray):
        """Returns ({"w0": ..., "b0": ..., ...}, dX)."""
        hs, pres = cache
        grads: dict[str, np.ndarray] = {}
        delta = np.asarray(d_scores, dtype=np.float64)[:, None]
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            if i != last:
                delta = delta * _drelu(pres[i])
            grads[f"w{i}"] = delta.T @ hs[i]
            grads[f"b{i}"] = delta.sum(axis=0)
            delta = delta @ self.weights[i].astype(np.float64)
        return grads, delta

    def param_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"w{i}"] = w
            out[f"b{i}"] = b
        return out


# -- checkpoint container -----------------------------------------------------------

_MAGIC = b"JGCKPT1\n"


def _write_container(path: str, header: dict, arrays: Sequence[np.ndarray]) -> None:
    blob_meta = [list(a.shape) for a in arrays]
    header = dict(header, blobs=blob_meta)
    payload = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_container(path: str) -> tuple[dict, list[np.ndarray]]:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise CheckpointError(f"{path}: not a jobgraph checkpoint")
        (length,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(length).decode("utf-8"))
        arrays = []
        for shape in header["blobs"]:
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise CheckpointError(f"{path}: truncated blob")
            arrays.append(np.frombuffer(raw, dtype="<f4").reshape(shape).copy())
        if fh.read(1):
            raise CheckpointError(f"{path}: trailing bytes after declared blobs")
    return header, arrays


def save_encoder_checkpoint(
    path: str,
    params: EncoderParams,
    decoder_kind: str = "in_batch",
    decoder_mlp: Mlp | None = None,
) -> None:
    """Self-describing binary checkpoint; layout documented in the README.

    Header: JSON with layer dims, activations, aggregation mode, decoder
    spec and blob shapes. Blobs: per layer weight, bias, self_weight,
    attention (row-major little-endian float32), then decoder MLP
    weight/bias pairs when present.
    """
    header = {
        "model": "encoder",
        "format_version": 1,
        "layer_count": params.num_layers,
        "feature_dim": params.feature_dim,
        "aggregation": params.aggregation,
        "activations": [l.activation for l in params.layers],
        "decoder": {
            "kind": decoder_kind,
            "dims": list(decoder_mlp.dims) if decoder_mlp is not None else None,
        },
    }
    arrays: list[np.ndarray] = []
    for layer in params.layers:
        arrays.extend([layer.weight, layer.bias, layer.self_weight, layer.attention])
    if decoder_mlp is not None:
        for w, b in zip(decoder_mlp.weights, decoder_mlp.biases):
            arrays.extend([w, b])
    _write_container(path, header, arrays)


def load_encoder_checkpoint(path: str) -> tuple[EncoderParams, str, Mlp | None]:
    header, arrays = _read_container(path)
    if header.get("model") != "encoder":
        raise CheckpointError(f"{path}: expected an encoder checkpoint")
    n_layers = header["layer_count"]
    layers = []
    for i in range(n_layers):
        weight, bias, self_weight, attention = arrays[4 * i : 4 * i + 4]
        layers.append(
            LayerParams(
                weight=weight,
                bias=bias,
                self_weight=self_weight,
                attention=attention,
                activation=header["activations"][i],
            )
        )
    params = EncoderParams(
        layers=layers,
        aggregation=header["aggregation"],
        feature_dim=header["feature_dim"],
    )
    params.validate()
    decoder_kind = header["decoder"]["kind"]
    mlp = None
    dims = header["decoder"]["dims"]
    if dims:
        mlp = Mlp(dims, zero_init=True)
        rest = arrays[4 * n_layers :]
        for i in range(len(dims) - 1):
            mlp.weights[i] = rest[2 * i]
            mlp.biases[i] = rest[2 * i + 1]
    return params, decoder_kind, mlp


def checkpoint_model_id(path: str) -> str:
    """Short content hash identifying the frozen model in embedding records."""
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()[:12]
