"""Layered neighborhood sampling: the compute graphs fed to the encoder.

A compute graph is a tree of node occurrences rooted at a query node.
Layer 0 holds the root; layer l holds up to fanout[l-1] sampled neighbors
per layer-(l-1) occurrence, each carrying its parent index, the sampled
edge weight, and a copy of the node's feature vector. The same node may
occur several times, once per sampling path.

The sampler core works over an abstract candidate function so that both
the batch graph store and the nearline key-value stores can drive it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigMismatch, MissingNode
from .graph import ALL_EDGE_TYPES, EdgeType, HeteroGraph, NodeRef

PPR_WALK_LENGTH = 20
PPR_WALKS_PER_FANOUT = 8
PPR_MIN_WALKS = 32

STRATEGIES = ("uniform", "weighted", "approx_ppr")

# candidate provider: node -> sequence of (neighbor, weight)
CandidateFn = Callable[[NodeRef], Sequence[tuple[NodeRef, float]]]
FeatureFn = Callable[[NodeRef], "np.ndarray | None"]


@dataclass(frozen=True)
class SamplerConfig:
    """How neighborhoods are drawn. ``hops`` equals ``len(fanout)``."""

    fanout: tuple[int, ...] = (10, 5)
    strategy: str = "uniform"
    with_replacement: bool = False
    ppr_alpha: float | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "fanout", tuple(int(f) for f in self.fanout))
        if len(self.fanout) < 1:
            raise ConfigMismatch("fanout must list at least one hop")
        if any(f < 1 for f in self.fanout):
            raise ConfigMismatch(f"every fanout entry must be >= 1, got {self.fanout}")
        if self.strategy not in STRATEGIES:
            raise ConfigMismatch(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.strategy == "approx_ppr":
            if self.ppr_alpha is None or not (0.0 < self.ppr_alpha < 1.0):
                raise ConfigMismatch("approx_ppr requires ppr_alpha in (0, 1)")
        elif self.ppr_alpha is not None:
            raise ConfigMismatch("ppr_alpha is only valid with the approx_ppr strategy")

    @property
    def hops(self) -> int:
        return len(self.fanout)


@dataclass
class Layer:
    """One depth of a compute graph, struct-of-arrays for vectorized encoding."""

    nodes: list[NodeRef]
    parents: np.ndarray  # int64 index into the previous layer; -1 for the root
    weights: np.ndarray  # float64 sampled edge weight; 0 for the root
    features: np.ndarray  # float32, shape (len(nodes), feature_dim)

    def __len__(self) -> int:
        return len(self.nodes)


@dataclass
class ComputeGraph:
    """Layered neighborhood sample rooted at a query node."""

    root: NodeRef
    layers: list[Layer]

    @property
    def hops(self) -> int:
        return len(self.layers) - 1

    def size(self) -> int:
        return sum(len(layer) for layer in self.layers)

    def signature(self) -> bytes:
        """Byte-stable fingerprint used by determinism tests."""
        parts = [str(self.root).encode()]
        for layer in self.layers:
            parts.append(b"|".join(str(n).encode() for n in layer.nodes))
            parts.append(layer.parents.tobytes())
            parts.append(layer.weights.tobytes())
            parts.append(layer.features.tobytes())
        return b"\x00".join(parts)


def _draw_indices(
    weights: np.ndarray,
    k: int,
    strategy: str,
    with_replacement: bool,
    rng: np.random.Generator,
    ppr_counts: np.ndarray | None = None,
) -> np.ndarray:
    """Pick candidate indices according to the strategy.

    Without replacement and k >= |candidates| short-circuits to the full
    list in stored order, which makes exhaustive fanout equal a plain
    breadth-first expansion.
    """
    n = weights.shape[0]
    if not with_replacement and k >= n:
        return np.arange(n, dtype=np.int64)
    if strategy == "uniform":
        if with_replacement:
            return rng.integers(0, n, size=k).astype(np.int64)
        if 4 * k < n:
            # Floyd-style distinct draws beat a full permutation for small k
            seen: set[int] = set()
            out = []
            while len(out) < k:
                pick = int(rng.integers(0, n))
                if pick not in seen:
                    seen.add(pick)
                    out.append(pick)
            return np.asarray(out, dtype=np.int64)
        return rng.permutation(n)[:k].astype(np.int64)
    if strategy == "weighted":
        p = weights.astype(np.float64)
    else:  # approx_ppr: draw proportional to truncated-walk visit counts
        p = ppr_counts.astype(np.float64)
    total = p.sum()
    if total <= 0.0:
        # degenerate distribution (all-zero weights / no walk visits)
        return rng.choice(n, size=min(k, n) if not with_replacement else k,
                          replace=with_replacement).astype(np.int64)
    if with_replacement:
        return rng.choice(n, size=k, p=p / total, replace=True).astype(np.int64)
    nonzero = np.flatnonzero(p)
    take = min(k, nonzero.shape[0])
    picked = rng.choice(nonzero, size=take, p=p[nonzero] / total, replace=False)
    return picked.astype(np.int64)


def _ppr_visit_counts(
    node: NodeRef,
    candidates: list[tuple[NodeRef, float]],
    candidate_fn: CandidateFn,
    alpha: float,
    n_walks: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Visit frequency of each direct neighbor under restart random walks.

    Walks restart at ``node`` with probability ``alpha`` per step, follow
    weighted transitions otherwise, and are truncated at PPR_WALK_LENGTH.
    Only landings on direct neighbors are credited, so the sampled layer
    stays sound (every sampled node is a true neighbor).
    """
    counts: dict[NodeRef, int] = {}
    cache: dict[NodeRef, tuple[list[NodeRef], np.ndarray]] = {}

    def transitions(at: NodeRef):
        hit = cache.get(at)
        if hit is None:
            cands = candidate_fn(at)
            refs = [c[0] for c in cands]
            w = np.asarray([c[1] for c in cands], dtype=np.float64)
            total = w.sum()
            probs = w / total if total > 0 else None
            hit = (refs, probs)
            cache[at] = hit
        return hit

    for _ in range(n_walks):
        here = node
        for _ in range(PPR_WALK_LENGTH):
            if rng.random() < alpha:
                here = node
                continue
            refs, probs = transitions(here)
            if not refs:
                here = node
                continue
            if probs is None:
                here = refs[int(rng.integers(len(refs)))]
            else:
                here = refs[int(rng.choice(len(refs), p=probs))]
            counts[here] = counts.get(here, 0) + 1

    return np.asarray([counts.get(ref, 0) for ref, _ in candidates], dtype=np.float64)


def sample_layers(
    root: NodeRef,
    config: SamplerConfig,
    candidate_fn_per_hop: Sequence[CandidateFn],
    feature_fn: FeatureFn,
    rng: np.random.Generator,
    drop_counter: list[int] | None = None,
) -> ComputeGraph:
    """Generic layered sampler over abstract candidate/feature providers.

    ``feature_fn`` returning None drops the occurrence (and its subtree);
    drops increment ``drop_counter[0]`` when a counter is supplied. The
    root must resolve to features.
    """
    root_feats = feature_fn(root)
    if root_feats is None:
        raise MissingNode(str(root))
    layers = [
        Layer(
            nodes=[root],
            parents=np.asarray([-1], dtype=np.int64),
            weights=np.zeros(1, dtype=np.float64),
            features=root_feats.reshape(1, -1),
        )
    ]
    for hop in range(config.hops):
        fanout = config.fanout[hop]
        candidate_fn = candidate_fn_per_hop[hop]
        nodes: list[NodeRef] = []
        parents: list[int] = []
        weights: list[float] = []
        feats: list[np.ndarray] = []
        for parent_idx, parent in enumerate(layers[hop].nodes):
            candidates = candidate_fn(parent)
            if not candidates:
                continue
            cand_weights = np.asarray([c[1] for c in candidates], dtype=np.float64)
            ppr_counts = None
            if config.strategy == "approx_ppr" and not (
                not config.with_replacement and fanout >= len(candidates)
            ):
                n_walks = max(PPR_WALKS_PER_FANOUT * fanout, PPR_MIN_WALKS)
                ppr_counts = _ppr_visit_counts(
                    parent, candidates, candidate_fn, config.ppr_alpha, n_walks, rng
                )
            picked = _draw_indices(
                cand_weights, fanout, config.strategy, config.with_replacement, rng, ppr_counts
            )
            for idx in picked:
                ref, weight = candidates[idx]
                f = feature_fn(ref)
                if f is None:
                    if drop_counter is not None:
                        drop_counter[0] += 1
                    continue
                nodes.append(ref)
                parents.append(parent_idx)
                weights.append(weight)
                feats.append(f)
        feature_dim = layers[0].features.shape[1]
        layers.append(
            Layer(
                nodes=nodes,
                parents=np.asarray(parents, dtype=np.int64),
                weights=np.asarray(weights, dtype=np.float64),
                features=(
                    np.stack(feats).astype(np.float32)
                    if feats
                    else np.zeros((0, feature_dim), dtype=np.float32)
                ),
            )
        )
    return ComputeGraph(root=root, layers=layers)


def sample_neighborhood(
    graph: HeteroGraph,
    root: NodeRef,
    config: SamplerConfig,
    edge_types_per_hop: Sequence[Iterable[EdgeType]] | None = None,
    exclude_edge: tuple[NodeRef, NodeRef] | None = None,
) -> ComputeGraph:
    """Sample a compute graph around ``root`` from the batch graph store.

    ``edge_types_per_hop`` restricts which edge types feed each hop
    (default: all edge types every hop); its length must equal the
    configured hop count. ``exclude_edge`` hides the direct link between
    two nodes (both directions) wherever they occur in the tree; training
    uses it to mask the supervised pair so the encoder cannot read the
    answer off the target edge. Same seed, same snapshot: identical output.
    """
    if not graph.has_node(root):
        raise MissingNode(str(root))
    if edge_types_per_hop is None:
        edge_types_per_hop = [ALL_EDGE_TYPES] * config.hops
    if len(edge_types_per_hop) != config.hops:
        raise ConfigMismatch(
            f"edge_types_per_hop has {len(edge_types_per_hop)} entries "
            f"for {config.hops} hops"
        )
    rng = np.random.default_rng(config.seed)
    hop_fns: list[CandidateFn] = []
    for ets in edge_types_per_hop:
        ets = sorted(ets, key=lambda e: e.name)
        token = "|".join(e.name for e in ets)

        def fn(node: NodeRef, _ets=tuple(ets), _token=token) -> list[tuple[NodeRef, float]]:
            merged = graph.merged_adjacency(node, _ets, _token)
            if exclude_edge is not None:
                a, b = exclude_edge
                if node == a:
                    return [c for c in merged if c[0] != b]
                if node == b:
                    return [c for c in merged if c[0] != a]
            return merged

        hop_fns.append(fn)

    def feature_fn(node: NodeRef) -> np.ndarray:
        return graph.features_of(node)  # graph invariant: endpoints always exist

    return sample_layers(root, config, hop_fns, feature_fn, rng)
