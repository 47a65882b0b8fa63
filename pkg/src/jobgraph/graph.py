"""In-memory heterogeneous job-marketplace graph.

Six node types (members, jobs and four attribute types), typed directed
edges with non-negative weights, per-node dense float32 features, and
reciprocal-edge support. Mutations bump a snapshot version; reads never
observe a half-applied batch (single-writer discipline, see module docs
in the README).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    InvalidWeight,
    MissingEndpoint,
    MissingNode,
    NonFiniteFeature,
    SignatureMismatch,
)


class NodeType(enum.Enum):
    """The six entity categories of the marketplace graph."""

    MEMBER = "Member"
    JOB = "Job"
    SKILL = "Skill"
    TITLE = "Title"
    COMPANY = "Company"
    POSITION = "Position"

    def __str__(self) -> str:  # file format uses the canonical names
        return self.value


_NODE_TYPE_BY_NAME = {t.value: t for t in NodeType}


def node_type_from_name(name: str) -> NodeType:
    try:
        return _NODE_TYPE_BY_NAME[name]
    except KeyError:
        raise ValueError(f"unknown node type {name!r}") from None


class NodeRef(NamedTuple):
    """Typed node identity; the universal key of the system."""

    node_type: NodeType
    id: int

    def __str__(self) -> str:
        return f"{self.node_type.value}:{self.id}"

    @classmethod
    def parse(cls, text: str) -> "NodeRef":
        type_name, sep, id_text = text.partition(":")
        if not sep:
            raise ValueError(f"node reference {text!r} is not '<type>:<id>'")
        node_id = int(id_text)
        if node_id < 0:
            raise ValueError(f"node id must be non-negative, got {node_id}")
        return cls(node_type_from_name(type_name), node_id)


def member(node_id: int) -> NodeRef:
    return NodeRef(NodeType.MEMBER, node_id)


def job(node_id: int) -> NodeRef:
    return NodeRef(NodeType.JOB, node_id)


def skill(node_id: int) -> NodeRef:
    return NodeRef(NodeType.SKILL, node_id)


class EdgeKind(enum.Enum):
    """Base edge taxonomy: attribute links plus the two interaction groups."""

    MEMBER_TITLE = ("MemberTitle", NodeType.MEMBER, NodeType.TITLE)
    MEMBER_COMPANY = ("MemberCompany", NodeType.MEMBER, NodeType.COMPANY)
    MEMBER_POSITION = ("MemberPosition", NodeType.MEMBER, NodeType.POSITION)
    MEMBER_SKILL = ("MemberSkill", NodeType.MEMBER, NodeType.SKILL)
    JOB_TITLE = ("JobTitle", NodeType.JOB, NodeType.TITLE)
    JOB_COMPANY = ("JobCompany", NodeType.JOB, NodeType.COMPANY)
    JOB_POSITION = ("JobPosition", NodeType.JOB, NodeType.POSITION)
    JOB_SKILL = ("JobSkill", NodeType.JOB, NodeType.SKILL)
    SEEKER_ENGAGEMENT = ("SeekerEngagement", NodeType.MEMBER, NodeType.JOB)
    RECRUITER_INTERACTION = ("RecruiterInteraction", NodeType.JOB, NodeType.MEMBER)

    def __init__(self, label: str, src: NodeType, dst: NodeType):
        self.label = label
        self.src = src
        self.dst = dst


@dataclass(frozen=True)
class EdgeType:
    """An edge kind, optionally wrapped once as its manual reciprocal.

    ``Reverse(Reverse(t))`` is not representable: :meth:`reverse` on a
    reversed type unwraps back to the forward type.
    """

    kind: EdgeKind
    is_reverse: bool = False

    @property
    def name(self) -> str:
        return f"Reverse({self.kind.label})" if self.is_reverse else self.kind.label

    @property
    def signature(self) -> tuple[NodeType, NodeType]:
        if self.is_reverse:
            return (self.kind.dst, self.kind.src)
        return (self.kind.src, self.kind.dst)

    def reverse(self) -> "EdgeType":
        return EdgeType(self.kind, not self.is_reverse)

    @classmethod
    def parse(cls, text: str) -> "EdgeType":
        is_reverse = False
        if text.startswith("Reverse(") and text.endswith(")"):
            is_reverse = True
            text = text[len("Reverse(") : -1]
        for kind in EdgeKind:
            if kind.label == text:
                return cls(kind, is_reverse)
        raise ValueError(f"unknown edge type {text!r}")

    def __str__(self) -> str:
        return self.name


MEMBER_TITLE = EdgeType(EdgeKind.MEMBER_TITLE)
MEMBER_COMPANY = EdgeType(EdgeKind.MEMBER_COMPANY)
MEMBER_POSITION = EdgeType(EdgeKind.MEMBER_POSITION)
MEMBER_SKILL = EdgeType(EdgeKind.MEMBER_SKILL)
JOB_TITLE = EdgeType(EdgeKind.JOB_TITLE)
JOB_COMPANY = EdgeType(EdgeKind.JOB_COMPANY)
JOB_POSITION = EdgeType(EdgeKind.JOB_POSITION)
JOB_SKILL = EdgeType(EdgeKind.JOB_SKILL)
SEEKER_ENGAGEMENT = EdgeType(EdgeKind.SEEKER_ENGAGEMENT)
RECRUITER_INTERACTION = EdgeType(EdgeKind.RECRUITER_INTERACTION)

FORWARD_EDGE_TYPES: tuple[EdgeType, ...] = tuple(EdgeType(kind) for kind in EdgeKind)
ALL_EDGE_TYPES: tuple[EdgeType, ...] = FORWARD_EDGE_TYPES + tuple(
    EdgeType(kind, True) for kind in EdgeKind
)
ATTRIBUTE_EDGE_BY_PAIR = {et.signature: et for et in FORWARD_EDGE_TYPES}


def check_features(features: Sequence[float] | np.ndarray) -> np.ndarray:
    """Validate and normalize a feature vector to a contiguous float32 array."""
    arr = np.asarray(features, dtype=np.float32)
    if arr.ndim != 1:
        raise DimensionMismatch(f"feature vector must be 1-d, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteFeature("feature vector contains NaN or Inf")
    return np.ascontiguousarray(arr)


class HeteroGraph:
    """Typed adjacency lists plus per-node-type feature tables.

    Feature dimensionality is fixed per node type, either up front through
    ``feature_dims`` (an int applying to every type, or a per-type mapping)
    or locked by the first node added of each type.
    """

    def __init__(self, feature_dims: int | dict[NodeType, int] | None = None):
        self._features: dict[NodeType, dict[int, np.ndarray]] = {t: {} for t in NodeType}
        self._adj: dict[EdgeType, dict[NodeRef, list[tuple[NodeRef, float]]]] = {}
        self._dims: dict[NodeType, int] = {}
        if isinstance(feature_dims, int):
            self._dims = {t: feature_dims for t in NodeType}
        elif feature_dims:
            self._dims = dict(feature_dims)
        self._version = 0
        # merged adjacency views are rebuilt constantly by samplers; cache them
        # per (edge-type-set token, node) and drop everything on any mutation
        self._merged_cache: dict[tuple[str, NodeRef], list[tuple[NodeRef, float]]] = {}

    # -- snapshots -----------------------------------------------------------

    @property
    def snapshot_version(self) -> int:
        return self._version

    def _bump(self) -> None:
        self._version += 1
        if self._merged_cache:
            self._merged_cache.clear()

    # -- nodes ---------------------------------------------------------------

    def feature_dim(self, node_type: NodeType) -> int | None:
        return self._dims.get(node_type)

    def add_node(self, node: NodeRef, features: Sequence[float] | np.ndarray) -> None:
        """Insert or replace a node. Re-adding an existing id overwrites features."""
        arr = check_features(features)
        expected = self._dims.get(node.node_type)
        if expected is None:
            self._dims[node.node_type] = arr.shape[0]
        elif arr.shape[0] != expected:
            raise DimensionMismatch(
                f"{node}: feature dim {arr.shape[0]} != configured {expected} "
                f"for {node.node_type.value}"
            )
        self._features[node.node_type][node.id] = arr
        self._bump()

    def has_node(self, node: NodeRef) -> bool:
        return node.id in self._features[node.node_type]

    def features_of(self, node: NodeRef) -> np.ndarray:
        try:
            return self._features[node.node_type][node.id]
        except KeyError:
            raise MissingNode(str(node)) from None

    def nodes(self, node_type: NodeType | None = None) -> Iterator[NodeRef]:
        types = [node_type] if node_type is not None else list(NodeType)
        for t in types:
            for node_id in self._features[t]:
                yield NodeRef(t, node_id)

    def node_count(self, node_type: NodeType | None = None) -> int:
        if node_type is not None:
            return len(self._features[node_type])
        return sum(len(table) for table in self._features.values())

    # -- edges ---------------------------------------------------------------

    def add_edge(
        self,
        edge_type: EdgeType,
        src: NodeRef,
        dst: NodeRef,
        weight: float = 1.0,
        reciprocal: bool = False,
    ) -> None:
        """Append a typed edge; with ``reciprocal`` also append the reverse.

        Both directions of a reciprocal insert land in one snapshot bump.
        """
        src_t, dst_t = edge_type.signature
        if (src.node_type, dst.node_type) != (src_t, dst_t):
            raise SignatureMismatch(
                f"{edge_type.name} expects {src_t.value}->{dst_t.value}, "
                f"got {src.node_type.value}->{dst.node_type.value}"
            )
        if not self.has_node(src):
            raise MissingEndpoint(f"source {src} not in graph")
        if not self.has_node(dst):
            raise MissingEndpoint(f"destination {dst} not in graph")
        w = float(weight)
        if not math.isfinite(w) or w < 0.0:
            raise InvalidWeight(f"edge weight must be finite and >= 0, got {weight}")
        self._adj.setdefault(edge_type, {}).setdefault(src, []).append((dst, w))
        if reciprocal:
            rev = edge_type.reverse()
            self._adj.setdefault(rev, {}).setdefault(dst, []).append((src, w))
        self._bump()

    def neighbors(self, node: NodeRef, edge_type: EdgeType) -> list[tuple[NodeRef, float]]:
        """Stored adjacency of ``node`` under one edge type, in insertion order."""
        if not self.has_node(node):
            raise MissingNode(str(node))
        return list(self._adj.get(edge_type, {}).get(node, ()))

    def neighbors_multi(
        self, node: NodeRef, edge_types: Iterable[EdgeType]
    ) -> list[tuple[NodeRef, float]]:
        """Adjacency merged over several edge types, types in canonical name order."""
        ordered = sorted(edge_types, key=lambda e: e.name)
        return self.merged_adjacency(node, ordered, "|".join(e.name for e in ordered))

    def merged_adjacency(
        self, node: NodeRef, ordered_edge_types: Sequence[EdgeType], cache_token: str
    ) -> list[tuple[NodeRef, float]]:
        """Cached merge of adjacency lists; ``ordered_edge_types`` must already
        be in the caller's canonical order and ``cache_token`` identify it."""
        key = (cache_token, node)
        hit = self._merged_cache.get(key)
        if hit is not None:
            return hit
        merged: list[tuple[NodeRef, float]] = []
        for et in ordered_edge_types:
            bucket = self._adj.get(et)
            if bucket:
                hits = bucket.get(node)
                if hits:
                    merged += hits
        self._merged_cache[key] = merged
        return merged

    def degree(self, node: NodeRef, edge_type: EdgeType) -> int:
        return len(self._adj.get(edge_type, {}).get(node, ()))

    def edge_types_present(self) -> list[EdgeType]:
        return sorted((et for et, adj in self._adj.items() if adj), key=lambda e: e.name)

    def edge_count(self, edge_type: EdgeType) -> int:
        return sum(len(lst) for lst in self._adj.get(edge_type, {}).values())

    def edges(self, edge_type: EdgeType) -> Iterator[tuple[NodeRef, NodeRef, float]]:
        for src, lst in self._adj.get(edge_type, {}).items():
            for dst, w in lst:
                yield src, dst, w

    # -- whole-graph helpers ---------------------------------------------------

    def without_node_type(self, node_type: NodeType) -> "HeteroGraph":
        """Copy of the graph with one node type and all its incident edges removed."""
        out = HeteroGraph({t: d for t, d in self._dims.items() if t != node_type})
        for t in NodeType:
            if t == node_type:
                continue
            for node_id, feats in self._features[t].items():
                out.add_node(NodeRef(t, node_id), feats)
        for et, adj in self._adj.items():
            if node_type in et.signature:
                continue
            for src, lst in adj.items():
                for dst, w in lst:
                    out.add_edge(et, src, dst, w)
        return out

    def validate(self) -> None:
        """Full-scan re-check of the schema invariants; raises on violation."""
        for et, adj in self._adj.items():
            src_t, dst_t = et.signature
            for src, lst in adj.items():
                if src.node_type != src_t or not self.has_node(src):
                    raise SignatureMismatch(f"bad source {src} for {et.name}")
                for dst, w in lst:
                    if dst.node_type != dst_t:
                        raise SignatureMismatch(f"bad destination {dst} for {et.name}")
                    if not self.has_node(dst):
                        raise MissingEndpoint(f"{dst} referenced by {et.name} edge")
                    if not math.isfinite(w) or w < 0.0:
                        raise InvalidWeight(f"{src}->{dst} weight {w}")


def graphs_equal(a: HeteroGraph, b: HeteroGraph) -> bool:
    """Structural equality: same nodes, bit-identical features, same adjacency
    order. Snapshot versions are bookkeeping and not compared."""
    for t in NodeType:
        if list(a._features[t].keys()) != list(b._features[t].keys()):
            return False
        for node_id, feats in a._features[t].items():
            other = b._features[t][node_id]
            if feats.shape != other.shape or feats.tobytes() != other.tobytes():
                return False
    a_types = {et for et, adj in a._adj.items() if any(adj.values())}
    b_types = {et for et, adj in b._adj.items() if any(adj.values())}
    if a_types != b_types:
        return False
    for et in a_types:
        a_adj = {k: v for k, v in a._adj[et].items() if v}
        b_adj = {k: v for k, v in b._adj[et].items() if v}
        if a_adj != b_adj:
            return False
    return True


def compute_top_skills(
    entity_skills: Sequence[tuple[NodeRef, float]],
    global_skill_frequency: dict[NodeRef, int],
    k: int,
    total_entity_count: int,
) -> list[NodeRef]:
    """Pick the k most relevant skills by rarity-weighted score.

    score = raw_weight * log(total_entity_count / frequency). A skill every
    entity carries scores zero regardless of its raw weight; rare skills are
    boosted. Ties break by ascending skill id. Fewer than k inputs returns
    all of them, sorted by the same ordering. Empty input returns [].
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not entity_skills:
        return []
    if total_entity_count < 1:
        raise ValueError("total_entity_count must be >= 1")
    scored = []
    for ref, raw_weight in entity_skills:
        freq = global_skill_frequency.get(ref)
        if freq is None or freq < 1:
            raise ValueError(f"skill {ref} has no frequency >= 1")
        score = float(raw_weight) * math.log(total_entity_count / freq)
        scored.append((-score, ref.id, ref))
    scored.sort()
    return [ref for _, _, ref in scored[:k]]
