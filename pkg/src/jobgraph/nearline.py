"""Nearline inference: event-driven incremental embedding updates.

Instead of querying a full graph engine, the pipeline maintains bounded
per-node-type neighbor lists and an input-feature store, both fed from an
append-only event log. When a node's neighborhood changes, its compute
graph is reassembled by a sequential join (node -> neighbor lists ->
neighbor features), pushed through the frozen encoder and published to a
versioned embedding store.

Events for one partition key are applied in log order; repeated
invalidations inside a debounce window (simulated time, derived from
event timestamps) coalesce into one inference. Worker counts only change
how joins are parallelized, never the published values, so a 1-worker
and a 4-worker run produce identical stores.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import MalformedEvent, MissingNode, UnknownNode
from .graph import NodeRef, NodeType
from .model import EncoderParams, encode_batch
from .sampling import ComputeGraph, SamplerConfig, sample_layers
from .util import mix_seed

EVENT_KINDS = (
    "job_created",
    "seeker_engagement",
    "recruiter_interaction",
    "member_attributes_updated",
    "job_closed",
)

ENGAGEMENT_ACTIONS = ("save", "apply", "click")

DEFAULT_ACTION_WEIGHTS = {"save": 1.0, "apply": 2.0, "click": 0.5}

_LATENCY_BUCKETS_MS = (1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000, 5000)


@dataclass(frozen=True)
class NearlineConfig:
    capacity: int = 128
    debounce_ms: int = 100
    action_weights: dict = field(default_factory=lambda: dict(DEFAULT_ACTION_WEIGHTS))
    recruiter_weight: float = 1.0

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if self.debounce_ms < 1:
            raise ValueError("debounce_ms must be >= 1")


@dataclass
class MarketplaceEvent:
    """One timestamped marketplace happening; payload fields depend on kind."""

    ts: int
    kind: str
    partition_key: NodeRef
    payload: dict

    def to_json(self) -> str:
        doc: dict = {"ts": self.ts, "kind": self.kind, "partition_key": str(self.partition_key)}
        for key, value in self.payload.items():
            if isinstance(value, NodeRef):
                doc[key] = str(value)
            elif key == "features":
                doc[key] = [float(v) for v in value]
            elif key == "attributes":
                doc[key] = [
                    [str(ref), float(w), None if f is None else [float(v) for v in f]]
                    for ref, w, f in value
                ]
            else:
                doc[key] = value
        return json.dumps(doc, sort_keys=True)


def _require(doc: dict, key: str):
    if key not in doc:
        raise MalformedEvent(f"missing field {key!r}")
    return doc[key]


def _parse_ref(value) -> NodeRef:
    try:
        return NodeRef.parse(str(value))
    except ValueError as exc:
        raise MalformedEvent(str(exc)) from None


def _parse_features(value) -> np.ndarray:
    if not isinstance(value, (list, tuple)) or not value:
        raise MalformedEvent("features must be a non-empty list of numbers")
    arr = np.asarray(value, dtype=np.float32)
    if not np.all(np.isfinite(arr)):
        raise MalformedEvent("features must be finite")
    return arr


def _parse_attributes(value) -> list[tuple[NodeRef, float, np.ndarray | None]]:
    if not isinstance(value, list):
        raise MalformedEvent("attributes must be a list")
    out = []
    for entry in value:
        if not isinstance(entry, (list, tuple)) or len(entry) != 3:
            raise MalformedEvent("attribute entries must be [ref, weight, features|null]")
        ref, weight, feats = entry
        weight = float(weight)
        if not np.isfinite(weight) or weight < 0:
            raise MalformedEvent(f"attribute weight must be finite and >= 0, got {weight}")
        out.append((_parse_ref(ref), weight, None if feats is None else _parse_features(feats)))
    return out


def parse_event(text: str) -> MarketplaceEvent:
    """Parse one event-log line (a JSON object); raises MalformedEvent."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedEvent(f"not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise MalformedEvent("event line must be a JSON object")
    kind = _require(doc, "kind")
    if kind not in EVENT_KINDS:
        raise MalformedEvent(f"unknown event kind {kind!r}")
    ts = _require(doc, "ts")
    if not isinstance(ts, int) or ts < 0:
        raise MalformedEvent("ts must be a non-negative integer")
    partition_key = _parse_ref(_require(doc, "partition_key"))
    payload: dict = {}
    if kind == "job_created":
        payload["job"] = _parse_ref(_require(doc, "job"))
        payload["features"] = _parse_features(_require(doc, "features"))
        payload["attributes"] = _parse_attributes(doc.get("attributes", []))
    elif kind == "member_attributes_updated":
        payload["member"] = _parse_ref(_require(doc, "member"))
        payload["features"] = _parse_features(_require(doc, "features"))
        payload["attributes"] = _parse_attributes(doc.get("attributes", []))
    elif kind == "seeker_engagement":
        payload["member"] = _parse_ref(_require(doc, "member"))
        payload["job"] = _parse_ref(_require(doc, "job"))
        action = _require(doc, "action")
        if action not in ENGAGEMENT_ACTIONS:
            raise MalformedEvent(f"unknown engagement action {action!r}")
        payload["action"] = action
    elif kind == "recruiter_interaction":
        payload["job"] = _parse_ref(_require(doc, "job"))
        payload["member"] = _parse_ref(_require(doc, "member"))
    elif kind == "job_closed":
        payload["job"] = _parse_ref(_require(doc, "job"))
    event = MarketplaceEvent(ts=ts, kind=kind, partition_key=partition_key, payload=payload)
    _check_payload_types(event)
    return event


def _check_payload_types(event: MarketplaceEvent) -> None:
    p = event.payload
    try:
        if event.kind == "job_created" and p["job"].node_type != NodeType.JOB:
            raise MalformedEvent(f"job_created payload names {p['job']}, not a Job")
        if event.kind == "job_closed" and p["job"].node_type != NodeType.JOB:
            raise MalformedEvent(f"job_closed payload names {p['job']}, not a Job")
        if event.kind == "member_attributes_updated" and p["member"].node_type != NodeType.MEMBER:
            raise MalformedEvent(f"payload names {p['member']}, not a Member")
        if event.kind in ("seeker_engagement", "recruiter_interaction"):
            if p["member"].node_type != NodeType.MEMBER or p["job"].node_type != NodeType.JOB:
                raise MalformedEvent("engagement payload endpoints have wrong node types")
    except KeyError as exc:
        raise MalformedEvent(f"missing payload field {exc}") from None


def write_event_log(path: str, events: Iterable[MarketplaceEvent]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for event in events:
            fh.write(event.to_json() + "\n")


# -- stores ------------------------------------------------------------------------

class NeighborStore:
    """Bounded recency-ordered neighbor lists, one per (node, neighbor type).

    Re-observing a neighbor updates its weight and moves it to the most
    recent slot; overflow evicts the oldest entry.
    """

    def __init__(self, capacity: int = 128):
        self.capacity = capacity
        self._lists: dict[NodeRef, dict[NodeType, dict[NodeRef, tuple[float, int]]]] = {}
        self._merged_cache: dict[NodeRef, list[tuple[NodeRef, float]]] = {}

    def observe(self, key: NodeRef, neighbor: NodeRef, weight: float, ts: int) -> None:
        per_type = self._lists.setdefault(key, {})
        bucket = per_type.setdefault(neighbor.node_type, {})
        if neighbor in bucket:
            del bucket[neighbor]  # move to most-recent position
        bucket[neighbor] = (float(weight), ts)
        while len(bucket) > self.capacity:
            oldest = next(iter(bucket))
            del bucket[oldest]
        self._merged_cache.pop(key, None)

    def neighbors(self, key: NodeRef, neighbor_type: NodeType) -> list[tuple[NodeRef, float, int]]:
        bucket = self._lists.get(key, {}).get(neighbor_type)
        if not bucket:
            return []
        return [(ref, w, ts) for ref, (w, ts) in bucket.items()]

    def merged_neighbors(self, key: NodeRef) -> list[tuple[NodeRef, float]]:
        """All neighbors grouped by neighbor type (canonical type order).

        Joins hit hot keys repeatedly, so the merge is cached per key and
        invalidated by writes.
        """
        cached = self._merged_cache.get(key)
        if cached is not None:
            return cached
        per_type = self._lists.get(key)
        if not per_type:
            return []
        merged: list[tuple[NodeRef, float]] = []
        for node_type in NodeType:
            bucket = per_type.get(node_type)
            if bucket:
                merged += [(ref, value[0]) for ref, value in bucket.items()]
        self._merged_cache[key] = merged
        return merged

    def max_list_length(self) -> int:
        longest = 0
        for per_type in self._lists.values():
            for bucket in per_type.values():
                longest = max(longest, len(bucket))
        return longest


class FeatureStore:
    """Latest input features per node, guarded by update timestamps."""

    def __init__(self):
        self._rows: dict[NodeRef, tuple[np.ndarray, int]] = {}

    def put(self, node: NodeRef, features: np.ndarray, ts: int) -> None:
        existing = self._rows.get(node)
        if existing is not None and existing[1] > ts:
            return  # an older snapshot never overwrites a newer one
        self._rows[node] = (np.asarray(features, dtype=np.float32), ts)

    def get(self, node: NodeRef) -> np.ndarray | None:
        row = self._rows.get(node)
        return None if row is None else row[0]

    def __contains__(self, node: NodeRef) -> bool:
        return node in self._rows

    def __len__(self) -> int:
        return len(self._rows)


@dataclass
class EmbeddingRecord:
    node: NodeRef
    vector: np.ndarray  # float32
    version: int
    produced_at: int
    model_id: str


class EmbeddingStore:
    """Versioned key-value store; publication per key is atomic and
    strictly increments the node's version."""

    def __init__(self):
        self._records: dict[NodeRef, EmbeddingRecord] = {}
        self._lock = threading.Lock()

    def publish(
        self, node: NodeRef, vector: np.ndarray, produced_at: int, model_id: str
    ) -> EmbeddingRecord:
        vec = np.asarray(vector, dtype=np.float32)
        with self._lock:
            prev = self._records.get(node)
            record = EmbeddingRecord(
                node=node,
                vector=vec,
                version=1 if prev is None else prev.version + 1,
                produced_at=produced_at,
                model_id=model_id,
            )
            self._records[node] = record
        return record

    def get(self, node: NodeRef) -> EmbeddingRecord | None:
        with self._lock:
            return self._records.get(node)

    def nodes(self) -> list[NodeRef]:
        with self._lock:
            return sorted(self._records, key=lambda r: (r.node_type.value, r.id))

    def __len__(self) -> int:
        return len(self._records)

    def compact(self, remove: Iterable[NodeRef]) -> int:
        """Delete records for the given nodes (tombstone cleanup); returns count."""
        removed = 0
        with self._lock:
            for node in remove:
                if node in self._records:
                    del self._records[node]
                    removed += 1
        return removed

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for node in self.nodes():
            record = self._records[node]
            digest.update(str(node).encode())
            digest.update(str(record.version).encode())
            digest.update(record.vector.tobytes())
        return digest.hexdigest()

    def export_file(self, path: str) -> None:
        """Line format: <node_type>:<id><TAB><version><TAB><comma-separated floats>."""
        with open(path, "w", encoding="utf-8") as fh:
            for node in self.nodes():
                record = self._records[node]
                floats = ",".join(str(np.float32(v)) for v in record.vector)
                fh.write(f"{node}\t{record.version}\t{floats}\n")

    @classmethod
    def load_file(cls, path: str) -> "EmbeddingStore":
        store = cls()
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, raw in enumerate(fh, start=1):
                line = raw.rstrip("\n")
                if not line:
                    continue
                fields = line.split("\t")
                if len(fields) != 3:
                    raise MalformedEvent(f"{path}:{line_no}: embedding line needs 3 fields")
                node = NodeRef.parse(fields[0])
                version = int(fields[1])
                vector = np.asarray([float(v) for v in fields[2].split(",")], dtype=np.float32)
                store._records[node] = EmbeddingRecord(
                    node=node, vector=vector, version=version, produced_at=0, model_id=""
                )
        return store


@dataclass
class NearlineStores:
    """The mutable state the pipeline maintains, plus its drop counters."""

    neighbor_store: NeighborStore
    feature_store: FeatureStore
    config: NearlineConfig
    last_ts: dict[NodeRef, int] = field(default_factory=dict)
    tombstones: set[NodeRef] = field(default_factory=set)
    stale_dropped: int = 0
    tombstone_skipped: int = 0
    feature_drops: int = 0
    unknown_nodes: int = 0

    @classmethod
    def fresh(cls, config: NearlineConfig | None = None) -> "NearlineStores":
        config = config or NearlineConfig()
        return cls(
            neighbor_store=NeighborStore(config.capacity),
            feature_store=FeatureStore(),
            config=config,
        )


# -- ingestion -----------------------------------------------------------------------

def ingest(event: MarketplaceEvent, stores: NearlineStores) -> set[NodeRef]:
    """Apply one event to the stores; returns the nodes whose embeddings went stale.

    Stale events (older than the key's last update) and events for
    tombstoned keys are dropped and counted, not errors.
    """
    _check_payload_types(event)
    key = event.partition_key
    last = stores.last_ts.get(key)
    if last is not None and event.ts < last:
        stores.stale_dropped += 1
        return set()
    if key in stores.tombstones:
        stores.tombstone_skipped += 1
        return set()
    stores.last_ts[key] = event.ts

    p = event.payload
    dirty: set[NodeRef] = set()
    if event.kind in ("job_created", "member_attributes_updated"):
        center = p["job"] if event.kind == "job_created" else p["member"]
        stores.feature_store.put(center, p["features"], event.ts)
        for ref, weight, feats in p["attributes"]:
            stores.neighbor_store.observe(center, ref, weight, event.ts)
            stores.neighbor_store.observe(ref, center, weight, event.ts)
            if feats is not None:
                stores.feature_store.put(ref, feats, event.ts)
        dirty.add(center)
    elif event.kind == "seeker_engagement":
        member_ref, job_ref = p["member"], p["job"]
        if job_ref in stores.tombstones:
            stores.tombstone_skipped += 1
            return set()
        weight = stores.config.action_weights.get(p["action"], 1.0)
        stores.neighbor_store.observe(job_ref, member_ref, weight, event.ts)
        stores.neighbor_store.observe(member_ref, job_ref, weight, event.ts)
        dirty.update((member_ref, job_ref))
    elif event.kind == "recruiter_interaction":
        member_ref, job_ref = p["member"], p["job"]
        if job_ref in stores.tombstones:
            stores.tombstone_skipped += 1
            return set()
        weight = stores.config.recruiter_weight
        stores.neighbor_store.observe(job_ref, member_ref, weight, event.ts)
        stores.neighbor_store.observe(member_ref, job_ref, weight, event.ts)
        dirty.update((member_ref, job_ref))
    elif event.kind == "job_closed":
        stores.tombstones.add(p["job"])
    return dirty


# -- sequential join and inference ------------------------------------------------------

def sequential_join(
    node: NodeRef, stores: NearlineStores, sampler: SamplerConfig
) -> ComputeGraph:
    """Assemble a compute graph from the key-value stores alone.

    Fetches the node's features, then per-type neighbor lists, then each
    neighbor's features, recursively per hop. Neighbors without stored
    features are dropped (counted). With exhaustive fanout this matches
    what the batch graph store would produce for the same logical state.
    """
    if node not in stores.feature_store:
        raise UnknownNode(str(node))

    def candidate_fn(at: NodeRef) -> list[tuple[NodeRef, float]]:
        return stores.neighbor_store.merged_neighbors(at)

    drop_counter = [0]

    def feature_fn(at: NodeRef) -> np.ndarray | None:
        return stores.feature_store.get(at)

    rng = np.random.default_rng(
        mix_seed(sampler.seed, 0x10E, list(NodeType).index(node.node_type), node.id)
    )
    try:
        cg = sample_layers(
            node,
            sampler,
            [candidate_fn] * sampler.hops,
            feature_fn,
            rng,
            drop_counter=drop_counter,
        )
    except MissingNode:
        raise UnknownNode(str(node)) from None
    stores.feature_drops += drop_counter[0]
    return cg


def infer_and_publish(
    dirty: Iterable[NodeRef],
    params: EncoderParams,
    stores: NearlineStores,
    embedding_store: EmbeddingStore,
    sampler: SamplerConfig,
    model_id: str = "",
    produced_at: int = 0,
    workers: int = 1,
) -> list[EmbeddingRecord]:
    """Join, encode and publish every dirty node (sorted for determinism).

    Unknown nodes are skipped and counted rather than aborting the batch.
    Joins may run in a thread pool; the stacked encode and the ordered
    publishes are deterministic regardless of worker count.
    """
    keys = sorted(set(dirty), key=lambda r: (r.node_type.value, r.id))
    if not keys:
        return []

    unknown = 0
    joined: list[tuple[NodeRef, ComputeGraph]] = []
    if workers > 1 and len(keys) > 1:
        def attempt(key: NodeRef):
            try:
                return key, sequential_join(key, stores, sampler)
            except UnknownNode:
                return key, None

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(attempt, keys))
        for key, cg in results:
            if cg is None:
                unknown += 1
            else:
                joined.append((key, cg))
    else:
        for key in keys:
            try:
                joined.append((key, sequential_join(key, stores, sampler)))
            except UnknownNode:
                unknown += 1
    stores.unknown_nodes += unknown
    if not joined:
        return []
    embeddings, _ = encode_batch([cg for _, cg in joined], params)
    records = []
    for (key, _), vector in zip(joined, embeddings):
        records.append(
            embedding_store.publish(key, vector.astype(np.float32), produced_at, model_id)
        )
    return records


# -- pipeline ---------------------------------------------------------------------------

@dataclass
class PipelineStats:
    events_total: int = 0
    events_applied: int = 0
    dead_lettered: int = 0
    stale_dropped: int = 0
    tombstone_skipped: int = 0
    published: int = 0
    refreshed: int = 0
    unknown_nodes: int = 0
    feature_drops: int = 0
    buckets_flushed: int = 0
    wall_clock_s: float = 0.0
    latency_counts: dict = field(default_factory=dict)

    @property
    def events_per_s(self) -> float:
        if self.wall_clock_s <= 0:
            return 0.0
        return self.events_total / self.wall_clock_s

    def record_latency(self, latency_ms: int) -> None:
        for bound in _LATENCY_BUCKETS_MS:
            if latency_ms <= bound:
                self.latency_counts[bound] = self.latency_counts.get(bound, 0) + 1
                return
        self.latency_counts["inf"] = self.latency_counts.get("inf", 0) + 1

    def to_text(self) -> str:
        keys = (
            "events_total", "events_applied", "dead_lettered", "stale_dropped",
            "tombstone_skipped", "published", "refreshed", "unknown_nodes",
            "feature_drops", "buckets_flushed",
        )
        body = "".join(f"{k}: {getattr(self, k)}\n" for k in keys)
        body += f"wall_clock_s: {self.wall_clock_s:.3f}\n"
        body += f"events_per_s: {self.events_per_s:.1f}\n"
        return body

    def histogram_csv(self) -> str:
        rows = ["latency_upper_ms,count"]
        for bound in _LATENCY_BUCKETS_MS:
            rows.append(f"{bound},{self.latency_counts.get(bound, 0)}")
        rows.append(f"inf,{self.latency_counts.get('inf', 0)}")
        return "\n".join(rows) + "\n"


def run_pipeline(
    events: str | Iterable[MarketplaceEvent],
    params: EncoderParams,
    stores: NearlineStores,
    embedding_store: EmbeddingStore,
    sampler: SamplerConfig,
    model_id: str = "",
    workers: int = 1,
    dead_letter_path: str | None = None,
    final_refresh: bool = True,
) -> PipelineStats:
    """Drain an event log: ingest, debounce dirty keys per simulated-time
    window, infer and publish. Malformed events are quarantined to the
    dead-letter file with a reason; nothing is fatal.

    Latency is measured in event time: publication happens at the close of
    the debounce window (``(bucket+1) * debounce_ms``), so a key touched by
    several events inside one window is embedded once, and each event's
    latency is the gap to that close.

    Incremental triggers refresh only an event's direct endpoints, so a
    node published early can go stale when later events touch its wider
    neighborhood. With ``final_refresh`` (the default) the drain therefore
    ends by re-embedding every node touched during the run against the
    final store state, after which the store matches batch inference over
    the same logical graph.
    """
    started = time.perf_counter()
    stats = PipelineStats()

    dead_letters: list[str] = []
    pending_dirty: set[NodeRef] = set()
    pending_event_ts: dict[NodeRef, list[int]] = {}
    touched: set[NodeRef] = set()
    current_bucket: int | None = None
    debounce = stores.config.debounce_ms

    def flush(bucket: int) -> None:
        nonlocal pending_dirty
        if not pending_dirty:
            return
        publish_ts = (bucket + 1) * debounce
        records = infer_and_publish(
            pending_dirty, params, stores, embedding_store, sampler,
            model_id=model_id, produced_at=publish_ts, workers=workers,
        )
        stats.published += len(records)
        stats.buckets_flushed += 1
        for node in pending_dirty:
            for ts in pending_event_ts.pop(node, ()):
                stats.record_latency(publish_ts - ts)
        pending_dirty = set()

    if isinstance(events, str):
        source = _iter_event_lines(events)
    else:
        source = ((None, e) for e in events)

    for raw, event in source:
        stats.events_total += 1
        if event is None:
            stats.dead_lettered += 1
            dead_letters.append(raw)
            continue
        bucket = event.ts // debounce
        if current_bucket is None:
            current_bucket = bucket
        elif bucket > current_bucket:
            flush(current_bucket)
            current_bucket = bucket
        before_stale = stores.stale_dropped
        before_tomb = stores.tombstone_skipped
        dirty = ingest(event, stores)
        if stores.stale_dropped > before_stale or stores.tombstone_skipped > before_tomb:
            continue
        stats.events_applied += 1
        for node in dirty:
            pending_dirty.add(node)
            touched.add(node)
            pending_event_ts.setdefault(node, []).append(event.ts)
    if current_bucket is not None:
        flush(current_bucket)
    if final_refresh and touched and current_bucket is not None:
        records = infer_and_publish(
            touched, params, stores, embedding_store, sampler,
            model_id=model_id, produced_at=(current_bucket + 1) * debounce,
            workers=workers,
        )
        stats.published += len(records)
        stats.refreshed = len(records)

    stats.stale_dropped = stores.stale_dropped
    stats.tombstone_skipped = stores.tombstone_skipped
    stats.unknown_nodes = stores.unknown_nodes
    stats.feature_drops = stores.feature_drops
    stats.wall_clock_s = time.perf_counter() - started
    if dead_letter_path is not None:
        with open(dead_letter_path, "w", encoding="utf-8") as fh:
            for line in dead_letters:
                fh.write(line + "\n")
    return stats


def _iter_event_lines(path: str):
    """Yield (dead_letter_json | None, event | None) per log line."""
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            try:
                yield None, parse_event(line)
            except MalformedEvent as exc:
                yield json.dumps(
                    {"line": line_no, "reason": str(exc), "raw": line[:500]}
                ), None
