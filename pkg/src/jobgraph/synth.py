"""Synthetic marketplace generator with planted interest clusters.

Scales the production graph's shape down to desk size (default 20,000
members to 1,000 jobs, the same 20:1 ratio) while preserving the sparse
top-skill degrees (about 1.2 per member, 0.67 per job). Members and jobs
belong to latent interest clusters; features are cluster centroids plus
noise, attribute nodes carry cleaner cluster signal than the entities
themselves, and skills are the sharpest attribute. Each member also has
a secondary interest cluster that only shows up through engagement
history, so engagement edges carry information attributes cannot.

The generator emits four mutually consistent artifacts: the cutoff-state
graph, the labeled pairs (engagements before and after the cutoff), an
event log whose replay reproduces exactly the graph's engagement edges,
and post-cutoff ranking examples with auxiliary features.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleConfig
from .graph import (
    ATTRIBUTE_EDGE_BY_PAIR,
    RECRUITER_INTERACTION,
    SEEKER_ENGAGEMENT,
    EdgeType,
    HeteroGraph,
    NodeRef,
    NodeType,
    compute_top_skills,
)
from .nearline import DEFAULT_ACTION_WEIGHTS, MarketplaceEvent
from .ranking import RankingExample
from .training import LabeledPair
from .util import mix_seed

CREATION_BASE_TS = 10_000
JOB_CREATION_BASE_TS = 600_000
ENGAGEMENT_START_TS = 1_000_000
DEFAULT_CUTOFF_TS = 2_000_000
ENGAGEMENT_END_TS = 3_000_000

_ACTIONS = ("click", "save", "apply")
_ACTION_PROBS = (0.5, 0.2, 0.3)


@dataclass(frozen=True)
class SynthConfig:
    member_count: int = 20000
    jobs_per_member: float = 0.05
    companies_per_member: float = 0.025
    positions_per_member: float = 0.0625
    title_count: int = 50
    skill_count: int = 80
    generic_skill_count: int = 8
    member_top_skill_mean: float = 1.2
    job_top_skill_mean: float = 0.67
    engagement_rate: float = 4.0  # mean engagements per non-cold member
    recruiter_rate: float = 0.25  # mean recruiter interactions per job
    cluster_count: int = 20
    cold_start_fraction: float = 0.1
    within_cluster_prob: float = 0.9
    feature_dim: int = 16
    member_noise: float = 1.0
    job_noise: float = 1.0
    attribute_noise: float = 0.25
    title_fidelity: float = 0.7
    post_cutoff_fraction: float = 0.25
    ranking_negatives_per_positive: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.member_count < 1:
            raise InfeasibleConfig("member_count must be >= 1")
        for name in ("jobs_per_member", "companies_per_member", "positions_per_member"):
            if getattr(self, name) <= 0:
                raise InfeasibleConfig(f"{name} must be positive")
        for name in ("cold_start_fraction", "within_cluster_prob",
                     "post_cutoff_fraction", "title_fidelity"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InfeasibleConfig(f"{name} must be in [0, 1], got {value}")
        if self.cluster_count < 2:
            raise InfeasibleConfig("cluster_count must be >= 2")
        if self.title_count < 1 or self.skill_count < 1:
            raise InfeasibleConfig("title_count and skill_count must be >= 1")
        if self.generic_skill_count >= self.skill_count:
            raise InfeasibleConfig("generic_skill_count must be < skill_count")
        if not 0.0 <= self.member_top_skill_mean <= 3.0:
            raise InfeasibleConfig("member_top_skill_mean must be in [0, 3]")
        if not 0.0 <= self.job_top_skill_mean <= 3.0:
            raise InfeasibleConfig("job_top_skill_mean must be in [0, 3]")
        if self.engagement_rate < 1.0:
            raise InfeasibleConfig("engagement_rate must be >= 1 (cold members model zero)")
        if self.job_count < 2:
            raise InfeasibleConfig("config yields fewer than 2 jobs")
        if self.position_count > self.company_count * self.title_count:
            raise InfeasibleConfig(
                f"{self.position_count} positions exceed the "
                f"{self.company_count} x {self.title_count} company/title capacity"
            )
        if self.feature_dim < 1:
            raise InfeasibleConfig("feature_dim must be >= 1")

    @property
    def job_count(self) -> int:
        return round(self.member_count * self.jobs_per_member)

    @property
    def company_count(self) -> int:
        return max(1, round(self.member_count * self.companies_per_member))

    @property
    def position_count(self) -> int:
        return max(1, round(self.member_count * self.positions_per_member))


@dataclass
class SynthResult:
    graph: HeteroGraph
    pairs: list[LabeledPair]
    events: list[MarketplaceEvent]
    ranking_examples: list[RankingExample]
    cutoff: int
    member_primary: dict[int, int]
    member_secondary: dict[int, int]
    job_cluster: dict[int, int]
    cold_members: set[int]


@dataclass
class _Entity:
    """Working record for a member or job while the marketplace is assembled."""

    ref: NodeRef
    cluster: int
    features: np.ndarray
    title: int
    company: int
    position: int | None
    skill_candidates: list[tuple[NodeRef, float]] = field(default_factory=list)
    top_skills: list[NodeRef] = field(default_factory=list)


def _degree_draw(rng: np.random.Generator, mean: float) -> int:
    """Integer degree with exact expectation ``mean`` (floor + Bernoulli rest)."""
    base = int(np.floor(mean))
    return base + (1 if rng.random() < (mean - base) else 0)


def generate(config: SynthConfig) -> SynthResult:
    """Build the marketplace; deterministic for a fixed config (seed included)."""
    rng = np.random.default_rng(mix_seed(config.seed, 0x5717))
    c = config
    f_dim = c.feature_dim
    centroids = rng.normal(0.0, 1.0, size=(c.cluster_count, f_dim))

    # attribute universes -----------------------------------------------------
    title_cluster = {t: t % c.cluster_count for t in range(c.title_count)}
    title_feats = {
        t: (centroids[title_cluster[t]] + c.attribute_noise * rng.normal(size=f_dim))
        for t in range(c.title_count)
    }
    company_feats = {
        comp: c.attribute_noise * rng.normal(size=f_dim) for comp in range(c.company_count)
    }
    skill_cluster: dict[int, int | None] = {}
    skill_feats = {}
    for s in range(c.skill_count):
        if s < c.generic_skill_count:
            skill_cluster[s] = None  # ubiquitous, cluster-free
            skill_feats[s] = c.attribute_noise * rng.normal(size=f_dim)
        else:
            cluster = (s - c.generic_skill_count) % c.cluster_count
            skill_cluster[s] = cluster
            skill_feats[s] = centroids[cluster] + c.attribute_noise * rng.normal(size=f_dim)
    cluster_skills: dict[int, list[int]] = {k: [] for k in range(c.cluster_count)}
    for s, cluster in skill_cluster.items():
        if cluster is not None:
            cluster_skills[cluster].append(s)

    # positions are distinct (company, title) tuples
    pair_space = c.company_count * c.title_count
    chosen = rng.choice(pair_space, size=c.position_count, replace=False)
    position_of_pair: dict[tuple[int, int], int] = {}
    position_feats = {}
    for pos_id, flat in enumerate(sorted(int(v) for v in chosen)):
        comp, t = divmod(flat, c.title_count)
        position_of_pair[(comp, t)] = pos_id
        position_feats[pos_id] = 0.5 * (company_feats[comp] + title_feats[t]) + (
            c.attribute_noise * rng.normal(size=f_dim)
        )

    # members and jobs ----------------------------------------------------------
    def make_entity(node_type: NodeType, ident: int, cluster: int, noise: float) -> _Entity:
        features = centroids[cluster] + noise * rng.normal(size=f_dim)
        if rng.random() < c.title_fidelity:
            pool = [t for t in range(c.title_count) if title_cluster[t] == cluster]
            title = int(pool[rng.integers(len(pool))]) if pool else int(rng.integers(c.title_count))
        else:
            title = int(rng.integers(c.title_count))
        company = int(rng.integers(c.company_count))
        position = position_of_pair.get((company, title))
        entity = _Entity(
            ref=NodeRef(node_type, ident),
            cluster=cluster,
            features=features.astype(np.float32),
            title=title,
            company=company,
            position=position,
        )
        own = cluster_skills[cluster]
        n_own = min(3, len(own))
        picked = rng.choice(len(own), size=n_own, replace=False) if n_own else []
        for idx in picked:
            entity.skill_candidates.append(
                (NodeRef(NodeType.SKILL, own[int(idx)]), float(rng.uniform(0.8, 1.2)))
            )
        n_generic = min(2, c.generic_skill_count)
        if n_generic:
            picked = rng.choice(c.generic_skill_count, size=n_generic, replace=False)
            for idx in picked:
                entity.skill_candidates.append(
                    (NodeRef(NodeType.SKILL, int(idx)), float(rng.uniform(1.0, 1.5)))
                )
        return entity

    members = [
        make_entity(NodeType.MEMBER, i, int(rng.integers(c.cluster_count)), c.member_noise)
        for i in range(c.member_count)
    ]
    jobs = [
        make_entity(NodeType.JOB, i, int(rng.integers(c.cluster_count)), c.job_noise)
        for i in range(c.job_count)
    ]
    secondary = {
        m.ref.id: int((m.cluster + 1 + rng.integers(c.cluster_count - 1)) % c.cluster_count)
        for m in members
    }

    # top-skill selection via the rarity-weighted relevance heuristic
    frequency: dict[NodeRef, int] = {}
    for entity in members + jobs:
        for ref, _ in entity.skill_candidates:
            frequency[ref] = frequency.get(ref, 0) + 1
    total_entities = len(members) + len(jobs)
    for entity in members:
        k = _degree_draw(rng, c.member_top_skill_mean)
        if k:
            entity.top_skills = compute_top_skills(
                entity.skill_candidates, frequency, k, total_entities
            )
    for entity in jobs:
        k = _degree_draw(rng, c.job_top_skill_mean)
        if k:
            entity.top_skills = compute_top_skills(
                entity.skill_candidates, frequency, k, total_entities
            )

    # engagements ---------------------------------------------------------------
    n_cold = int(np.floor(c.cold_start_fraction * c.member_count))
    cold_ids = set(
        int(v) for v in rng.choice(c.member_count, size=n_cold, replace=False)
    )
    jobs_by_cluster: dict[int, list[int]] = {k: [] for k in range(c.cluster_count)}
    for entity in jobs:
        jobs_by_cluster[entity.cluster].append(entity.ref.id)

    interacted: set[tuple[int, int]] = set()
    engagements: list[tuple[int, int, int, str, bool]] = []  # member, job, ts, action, post

    def pick_job(member: _Entity) -> int | None:
        target = (
            member.cluster
            if rng.random() < c.within_cluster_prob
            else secondary[member.ref.id]
        )
        pool = jobs_by_cluster[target] or list(range(c.job_count))
        for _ in range(8):
            job_id = int(pool[rng.integers(len(pool))])
            if (member.ref.id, job_id) not in interacted:
                return job_id
        return None

    for entity in members:
        if entity.ref.id in cold_ids:
            continue
        count = 1 + int(rng.poisson(c.engagement_rate - 1.0))
        for j in range(count):
            job_id = pick_job(entity)
            if job_id is None:
                continue
            interacted.add((entity.ref.id, job_id))
            post = j > 0 and rng.random() < c.post_cutoff_fraction
            if post:
                ts = int(rng.integers(DEFAULT_CUTOFF_TS + 1, ENGAGEMENT_END_TS))
            else:
                ts = int(rng.integers(ENGAGEMENT_START_TS, DEFAULT_CUTOFF_TS + 1))
            action = str(rng.choice(_ACTIONS, p=_ACTION_PROBS))
            engagements.append((entity.ref.id, job_id, ts, action, post))

    members_by_cluster: dict[int, list[int]] = {k: [] for k in range(c.cluster_count)}
    for entity in members:
        members_by_cluster[entity.cluster].append(entity.ref.id)
    recruiter_edges: list[tuple[int, int, int]] = []  # job, member, ts
    for entity in jobs:
        for _ in range(int(rng.poisson(c.recruiter_rate))):
            if rng.random() < c.within_cluster_prob and members_by_cluster[entity.cluster]:
                pool = members_by_cluster[entity.cluster]
            else:
                pool = None
            member_id = (
                int(pool[rng.integers(len(pool))])
                if pool
                else int(rng.integers(c.member_count))
            )
            if (member_id, entity.ref.id) in interacted:
                continue
            interacted.add((member_id, entity.ref.id))
            ts = int(rng.integers(ENGAGEMENT_START_TS, DEFAULT_CUTOFF_TS + 1))
            recruiter_edges.append((entity.ref.id, member_id, ts))

    # graph assembly (attribute nodes first, then entities in event order) --------
    graph = HeteroGraph(feature_dims=f_dim)
    for t, feats in title_feats.items():
        graph.add_node(NodeRef(NodeType.TITLE, t), feats.astype(np.float32))
    for comp, feats in company_feats.items():
        graph.add_node(NodeRef(NodeType.COMPANY, comp), feats.astype(np.float32))
    for pos, feats in position_feats.items():
        graph.add_node(NodeRef(NodeType.POSITION, pos), feats.astype(np.float32))
    for s, feats in skill_feats.items():
        graph.add_node(NodeRef(NodeType.SKILL, s), feats.astype(np.float32))

    def attribute_edges(entity: _Entity) -> list[tuple[NodeRef, float]]:
        out = [
            (NodeRef(NodeType.TITLE, entity.title), 1.0),
            (NodeRef(NodeType.COMPANY, entity.company), 1.0),
        ]
        if entity.position is not None:
            out.append((NodeRef(NodeType.POSITION, entity.position), 1.0))
        weight_by_skill = dict(entity.skill_candidates)
        out.extend((ref, weight_by_skill[ref]) for ref in entity.top_skills)
        return out

    events: list[MarketplaceEvent] = []
    for entity in members:
        graph.add_node(entity.ref, entity.features)
        attrs = attribute_edges(entity)
        for ref, weight in attrs:
            edge_type = ATTRIBUTE_EDGE_BY_PAIR[(NodeType.MEMBER, ref.node_type)]
            graph.add_edge(edge_type, entity.ref, ref, weight, reciprocal=True)
        events.append(
            MarketplaceEvent(
                ts=CREATION_BASE_TS + entity.ref.id,
                kind="member_attributes_updated",
                partition_key=entity.ref,
                payload={
                    "member": entity.ref,
                    "features": entity.features,
                    "attributes": [
                        (ref, w, graph.features_of(ref)) for ref, w in attrs
                    ],
                },
            )
        )
    for entity in jobs:
        graph.add_node(entity.ref, entity.features)
        attrs = attribute_edges(entity)
        for ref, weight in attrs:
            edge_type = ATTRIBUTE_EDGE_BY_PAIR[(NodeType.JOB, ref.node_type)]
            graph.add_edge(edge_type, entity.ref, ref, weight, reciprocal=True)
        events.append(
            MarketplaceEvent(
                ts=JOB_CREATION_BASE_TS + entity.ref.id,
                kind="job_created",
                partition_key=entity.ref,
                payload={
                    "job": entity.ref,
                    "features": entity.features,
                    "attributes": [
                        (ref, w, graph.features_of(ref)) for ref, w in attrs
                    ],
                },
            )
        )

    interaction_events: list[MarketplaceEvent] = []
    for member_id, job_id, ts, action, post in engagements:
        if post:
            continue
        interaction_events.append(
            MarketplaceEvent(
                ts=ts,
                kind="seeker_engagement",
                partition_key=NodeRef(NodeType.JOB, job_id),
                payload={
                    "member": NodeRef(NodeType.MEMBER, member_id),
                    "job": NodeRef(NodeType.JOB, job_id),
                    "action": action,
                },
            )
        )
    for job_id, member_id, ts in recruiter_edges:
        interaction_events.append(
            MarketplaceEvent(
                ts=ts,
                kind="recruiter_interaction",
                partition_key=NodeRef(NodeType.MEMBER, member_id),
                payload={
                    "job": NodeRef(NodeType.JOB, job_id),
                    "member": NodeRef(NodeType.MEMBER, member_id),
                },
            )
        )
    interaction_events.sort(key=lambda e: (e.ts, str(e.partition_key), e.kind))
    for event in interaction_events:
        p = event.payload
        if event.kind == "seeker_engagement":
            weight = DEFAULT_ACTION_WEIGHTS[p["action"]]
            graph.add_edge(
                SEEKER_ENGAGEMENT, p["member"], p["job"], weight, reciprocal=True
            )
        else:
            graph.add_edge(
                RECRUITER_INTERACTION, p["job"], p["member"],
                1.0, reciprocal=True,
            )
    events.extend(interaction_events)

    # labels and ranking examples -----------------------------------------------
    pairs = [
        LabeledPair(
            member=NodeRef(NodeType.MEMBER, member_id),
            job=NodeRef(NodeType.JOB, job_id),
            label=1,
            timestamp=ts,
        )
        for member_id, job_id, ts, _, _ in sorted(engagements, key=lambda e: e[2])
    ]
    ranking_examples = _ranking_examples(
        c, rng, members, jobs, engagements, interacted, cold_ids
    )

    return SynthResult(
        graph=graph,
        pairs=pairs,
        events=events,
        ranking_examples=ranking_examples,
        cutoff=DEFAULT_CUTOFF_TS,
        member_primary={m.ref.id: m.cluster for m in members},
        member_secondary=secondary,
        job_cluster={j.ref.id: j.cluster for j in jobs},
        cold_members=cold_ids,
    )


def _ranking_examples(
    c: SynthConfig,
    rng: np.random.Generator,
    members: list[_Entity],
    jobs: list[_Entity],
    engagements: list[tuple[int, int, int, str, bool]],
    interacted: set[tuple[int, int]],
    cold_ids: set[int],
) -> list[RankingExample]:
    member_by_id = {m.ref.id: m for m in members}
    job_by_id = {j.ref.id: j for j in jobs}
    last_pre_ts: dict[int, int] = {}
    for member_id, _, ts, _, post in engagements:
        if not post:
            last_pre_ts[member_id] = max(last_pre_ts.get(member_id, 0), ts)

    def aux(member: _Entity, job_entity: _Entity) -> np.ndarray:
        completeness = (
            2.0 + (member.position is not None) + bool(member.top_skills)
        ) / 4.0
        recency = 0.0
        if member.ref.id in last_pre_ts:
            recency = (last_pre_ts[member.ref.id] - ENGAGEMENT_START_TS) / (
                DEFAULT_CUTOFF_TS - ENGAGEMENT_START_TS
            )
        title_match = 1.0 if member.title == job_entity.title else 0.0
        overlap = len(set(member.top_skills) & set(job_entity.top_skills))
        return np.asarray(
            [completeness, recency, title_match, float(overlap)], dtype=np.float32
        )

    examples: list[RankingExample] = []
    for member_id, job_id, ts, _, post in engagements:
        if not post:
            continue
        member = member_by_id[member_id]
        examples.append(
            RankingExample(
                member=member.ref,
                job=NodeRef(NodeType.JOB, job_id),
                aux=aux(member, job_by_id[job_id]),
                label=1,
                timestamp=ts,
            )
        )
        for _ in range(c.ranking_negatives_per_positive):
            neg = int(rng.integers(c.job_count))
            while (member_id, neg) in interacted:
                neg = int(rng.integers(c.job_count))
            examples.append(
                RankingExample(
                    member=member.ref,
                    job=NodeRef(NodeType.JOB, neg),
                    aux=aux(member, job_by_id[neg]),
                    label=0,
                    timestamp=ts,
                )
            )
    # cold members never engage, so their positives come from intent, not history:
    # sample held-out matches from the primary cluster so the cold segment is testable
    jobs_by_cluster: dict[int, list[int]] = {}
    for j in jobs:
        jobs_by_cluster.setdefault(j.cluster, []).append(j.ref.id)
    for member_id in sorted(cold_ids):
        member = member_by_id[member_id]
        pool = jobs_by_cluster.get(member.cluster)
        if not pool:
            continue
        job_id = int(pool[rng.integers(len(pool))])
        ts = int(rng.integers(DEFAULT_CUTOFF_TS + 1, ENGAGEMENT_END_TS))
        examples.append(
            RankingExample(
                member=member.ref,
                job=NodeRef(NodeType.JOB, job_id),
                aux=aux(member, job_by_id[job_id]),
                label=1,
                timestamp=ts,
            )
        )
        for _ in range(c.ranking_negatives_per_positive):
            neg = int(rng.integers(c.job_count))
            while neg == job_id:
                neg = int(rng.integers(c.job_count))
            examples.append(
                RankingExample(
                    member=member.ref,
                    job=NodeRef(NodeType.JOB, neg),
                    aux=aux(member, job_by_id[neg]),
                    label=0,
                    timestamp=ts,
                )
            )
    examples.sort(key=lambda ex: (ex.timestamp, ex.member.id, ex.job.id, ex.label))
    return examples


# -- statistics ---------------------------------------------------------------------

@dataclass
class GraphStats:
    node_counts: dict[str, int]
    edge_counts: dict[str, int]
    mean_degrees: dict[str, float]

    def to_text(self) -> str:
        lines = []
        for name, value in sorted(self.node_counts.items()):
            lines.append(f"nodes.{name}: {value}")
        for name, value in sorted(self.edge_counts.items()):
            lines.append(f"edges.{name}: {value}")
        for name, value in sorted(self.mean_degrees.items()):
            lines.append(f"mean_degree.{name}: {value:.6f}")
        return "\n".join(lines) + "\n"


def stats(graph: HeteroGraph) -> GraphStats:
    """Node counts per type, edge counts per type, mean out-degrees per
    (source type, edge type) over all nodes of the source type."""
    node_counts = {t.value: graph.node_count(t) for t in NodeType}
    edge_counts: dict[str, int] = {}
    mean_degrees: dict[str, float] = {}
    for edge_type in graph.edge_types_present():
        count = graph.edge_count(edge_type)
        edge_counts[edge_type.name] = count
        src_type = edge_type.signature[0]
        n_src = graph.node_count(src_type)
        mean_degrees[f"{src_type.value}.{edge_type.name}"] = (
            count / n_src if n_src else 0.0
        )
    return GraphStats(node_counts, edge_counts, mean_degrees)
