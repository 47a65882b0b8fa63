"""Supervised link-prediction training over the marketplace graph.

Feeds (member, job, label) tuples through neighborhood sampling, the
encoder, a decoder and the summed sigmoid cross-entropy, with plain SGD
or Adam updates. Enforces the temporal guard: only pairs at or before the
graph snapshot cutoff contribute gradients; later pairs are exposed for
downstream (ranking) use and for held-out evaluation.

Two batch shapes exist. The in-batch decoder takes aligned positive pairs
and treats every non-matching member-job combination inside the batch as
a negative (identity-pattern label matrix). The pairwise decoders (dot,
cosine, mlp) score only aligned tuples, whose labels come from the data
plus uniformly drawn negative jobs.
"""

from __future__ import annotations

import dataclasses
import time
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    DataError,
    DivergenceDetected,
    EmptyDataset,
    EmptyEvalSet,
    ShapeMismatch,
)
from .graph import EdgeType, HeteroGraph, NodeRef, NodeType
from .model import (
    EncoderParams,
    Mlp,
    backward_batch,
    encode_batch,
    init_encoder_params,
    loss_cross_entropy,
    make_in_batch_labels,
    score_matrix_dot,
    score_pairs,
)
from .sampling import ComputeGraph, SamplerConfig, sample_neighborhood
from .util import mix_seed

DECODERS = ("dot", "cosine", "mlp", "in_batch")


@dataclass(frozen=True)
class LabeledPair:
    """A (member, job, label) tuple; the timestamp drives the leakage guard."""

    member: NodeRef
    job: NodeRef
    label: int
    timestamp: int

    def __post_init__(self):
        if self.member.node_type != NodeType.MEMBER:
            raise ValueError(f"member side must be a Member node, got {self.member}")
        if self.job.node_type != NodeType.JOB:
            raise ValueError(f"job side must be a Job node, got {self.job}")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")


def write_label_file(path: str, pairs: Iterable[LabeledPair]) -> None:
    """Line format: member_id<TAB>job_id<TAB>label<TAB>timestamp_ms."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(f"{p.member.id}\t{p.job.id}\t{p.label}\t{p.timestamp}\n")


def read_label_file(path: str) -> list[LabeledPair]:
    pairs: list[LabeledPair] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise DataError(f"{path}:{line_no}: label line needs 4 fields")
            try:
                pairs.append(
                    LabeledPair(
                        member=NodeRef(NodeType.MEMBER, int(fields[0])),
                        job=NodeRef(NodeType.JOB, int(fields[1])),
                        label=int(fields[2]),
                        timestamp=int(fields[3]),
                    )
                )
            except ValueError as exc:
                raise DataError(f"{path}:{line_no}: {exc}") from None
    return pairs


@dataclass(frozen=True)
class TrainConfig:
    decoder: str = "in_batch"
    batch_size: int = 128
    epochs: int = 4
    learning_rate: float = 3e-3
    optimizer: str = "adam"  # "sgd" | "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    layer_dims: tuple[int, ...] = (32, 32)
    aggregation: str = "mean"
    mlp_hidden: tuple[int, ...] = (32,)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    negative_ratio: int = 4  # pairwise decoders: drawn negatives per positive
    mask_target_edges: bool = True  # hide the supervised pair's edge while sampling
    cutoff: int | None = None  # graph snapshot cutoff, epoch ms
    seed: int = 0
    eval_pool_size: int = 100
    eval_k: int = 10
    eval_max_members: int = 2000
    eval_negatives_per_positive: int = 4

    def __post_init__(self):
        if self.decoder not in DECODERS:
            raise ValueError(f"decoder must be one of {DECODERS}, got {self.decoder!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be sgd or adam, got {self.optimizer!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.decoder == "in_batch" and self.batch_size < 2:
            raise ValueError("in_batch decoding needs batch_size >= 2 (no negatives otherwise)")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        object.__setattr__(self, "layer_dims", tuple(self.layer_dims))
        object.__setattr__(self, "mlp_hidden", tuple(self.mlp_hidden))


@dataclass
class LeakageSplit:
    """Pairs partitioned at the graph snapshot cutoff (<= goes to the encoder)."""

    encoder_pairs: list[LabeledPair]
    later_pairs: list[LabeledPair]

    @property
    def counts(self) -> tuple[int, int]:
        return len(self.encoder_pairs), len(self.later_pairs)


def check_no_leakage(pairs: Sequence[LabeledPair], cutoff: int) -> LeakageSplit:
    """Partition pairs for encoder training vs. downstream use.

    A pair exactly at the cutoff goes to the encoder side (<= convention).
    Emits a warning when nothing is left for the downstream side.
    """
    encoder_pairs = [p for p in pairs if p.timestamp <= cutoff]
    later_pairs = [p for p in pairs if p.timestamp > cutoff]
    if pairs and not later_pairs:
        warnings.warn(
            f"all {len(pairs)} pairs predate the cutoff {cutoff}; "
            "no data remains for downstream training",
            stacklevel=2,
        )
    return LeakageSplit(encoder_pairs, later_pairs)


@dataclass
class Batch:
    """Compute graphs for the member and job sides plus the label matrix.

    ``paired`` marks batches built from aligned tuples: only the diagonal
    of the label matrix is supervised (off-diagonal entries are zero by
    construction and unused). In-batch batches supervise the full matrix.
    """

    member_graphs: list[ComputeGraph]
    job_graphs: list[ComputeGraph]
    labels: np.ndarray
    paired: bool
    member_refs: list[NodeRef]
    job_refs: list[NodeRef]

    def __post_init__(self):
        if self.labels.shape != (len(self.member_graphs), len(self.job_graphs)):
            raise ShapeMismatch(
                f"label matrix {self.labels.shape} does not match "
                f"({len(self.member_graphs)}, {len(self.job_graphs)}) compute graphs"
            )


def _root_seed(seed: int, salt: int, epoch: int, ref: NodeRef) -> int:
    return mix_seed(seed, salt, epoch, list(NodeType).index(ref.node_type), ref.id)


class BatchBuilder:
    """Seed-deterministic batch stream; skips pairs whose nodes left the graph."""

    def __init__(
        self,
        graph: HeteroGraph,
        config: TrainConfig,
        edge_types_per_hop: Sequence[Iterable[EdgeType]] | None = None,
    ):
        self.graph = graph
        self.config = config
        self.edge_types_per_hop = edge_types_per_hop
        self.skipped = 0
        self.leakage_violations = 0
        self._jobs: list[NodeRef] | None = None

    def _sample(
        self, ref: NodeRef, epoch: int, salt: int, pair: LabeledPair
    ) -> ComputeGraph:
        sampler = dataclasses.replace(
            self.config.sampler, seed=_root_seed(self.config.seed, salt, epoch, ref)
        )
        exclude = (pair.member, pair.job) if self.config.mask_target_edges else None
        return sample_neighborhood(
            self.graph, ref, sampler, self.edge_types_per_hop, exclude_edge=exclude
        )

    def _usable(self, pairs: Sequence[LabeledPair]) -> list[LabeledPair]:
        usable = []
        for p in pairs:
            if not (self.graph.has_node(p.member) and self.graph.has_node(p.job)):
                self.skipped += 1
                continue
            if self.config.cutoff is not None and p.timestamp > self.config.cutoff:
                # structurally unreachable after check_no_leakage; counted, not used
                self.leakage_violations += 1
                continue
            usable.append(p)
        return usable

    def batches(self, pairs: Sequence[LabeledPair], epoch: int) -> Iterator[Batch]:
        config = self.config
        rng = np.random.default_rng(mix_seed(config.seed, 0x5A, epoch))
        if config.decoder == "in_batch":
            examples = [p for p in self._usable(pairs) if p.label == 1]
        else:
            examples = list(self._usable(pairs))
            examples.extend(self._drawn_negatives(examples, epoch))
        if not examples:
            raise EmptyDataset("no usable training pairs")
        order = rng.permutation(len(examples))
        for start in range(0, len(examples), config.batch_size):
            chunk = [examples[i] for i in order[start : start + config.batch_size]]
            if config.decoder == "in_batch" and len(chunk) < 2:
                continue  # a lone pair has no in-batch negatives
            member_graphs = [self._sample(p.member, epoch, 0xA1, p) for p in chunk]
            job_graphs = [self._sample(p.job, epoch, 0xB2, p) for p in chunk]
            if config.decoder == "in_batch":
                labels = make_in_batch_labels(len(chunk))
            else:
                labels = np.diag(np.asarray([p.label for p in chunk], dtype=np.float64))
            yield Batch(
                member_graphs=member_graphs,
                job_graphs=job_graphs,
                labels=labels,
                paired=config.decoder != "in_batch",
                member_refs=[p.member for p in chunk],
                job_refs=[p.job for p in chunk],
            )

    def _drawn_negatives(self, positives: Sequence[LabeledPair], epoch: int) -> list[LabeledPair]:
        """Uniform negative jobs for pairwise decoders, re-drawn every epoch."""
        if self._jobs is None:
            self._jobs = list(self.graph.nodes(NodeType.JOB))
        jobs = self._jobs
        if len(jobs) < 2:
            return []
        rng = np.random.default_rng(mix_seed(self.config.seed, 0x4E, epoch))
        out = []
        for p in positives:
            if p.label != 1:
                continue
            for _ in range(self.config.negative_ratio):
                candidate = jobs[int(rng.integers(len(jobs)))]
                while candidate == p.job:
                    candidate = jobs[int(rng.integers(len(jobs)))]
                out.append(LabeledPair(p.member, candidate, 0, p.timestamp))
        return out


# -- optimizers -------------------------------------------------------------------

class Sgd:
    def __init__(self, learning_rate: float):
        self.learning_rate = learning_rate

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for key, p in params.items():
            g = grads.get(key)
            if g is None:
                continue
            p[...] = (p.astype(np.float64) - self.learning_rate * g).astype(p.dtype)


class Adam:
    def __init__(self, learning_rate: float, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.epsilon = beta1, beta2, epsilon
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for key, p in params.items():
            g = grads.get(key)
            if g is None:
                continue
            m = self._m.setdefault(key, np.zeros(p.shape, dtype=np.float64))
            v = self._v.setdefault(key, np.zeros(p.shape, dtype=np.float64))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            m_hat = m / (1.0 - self.beta1**self.t)
            v_hat = v / (1.0 - self.beta2**self.t)
            p[...] = (
                p.astype(np.float64)
                - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)
            ).astype(p.dtype)


def make_optimizer(config: TrainConfig):
    if config.optimizer == "sgd":
        return Sgd(config.learning_rate)
    return Adam(
        config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_epsilon
    )


# -- training ---------------------------------------------------------------------

@dataclass
class TrainReport:
    epoch_losses: list[float]
    auc: float | None
    recall_at_k: float | None
    k: int
    wall_clock_s: float
    config: dict
    skipped_pairs: int
    leakage_violations: int
    eval_positives: int

    def to_text(self) -> str:
        lines = {
            "epochs": len(self.epoch_losses),
            "final_mean_loss": self.epoch_losses[-1] if self.epoch_losses else float("nan"),
            "auc": "" if self.auc is None else f"{self.auc:.6f}",
            "recall_at_k": "" if self.recall_at_k is None else f"{self.recall_at_k:.6f}",
            "k": self.k,
            "eval_positives": self.eval_positives,
            "skipped_pairs": self.skipped_pairs,
            "leakage_violations": self.leakage_violations,
            "wall_clock_s": f"{self.wall_clock_s:.3f}",
        }
        body = "".join(f"{k}: {v}\n" for k, v in lines.items())
        body += "".join(f"config.{k}: {v}\n" for k, v in sorted(self.config.items()))
        return body

    def loss_csv(self) -> str:
        rows = ["epoch,mean_loss"]
        rows += [f"{i},{loss!r}" for i, loss in enumerate(self.epoch_losses)]
        return "\n".join(rows) + "\n"


@dataclass
class TrainResult:
    params: EncoderParams
    decoder_mlp: Mlp | None
    report: TrainReport


def _graph_feature_dim(graph: HeteroGraph) -> int:
    dims = {graph.feature_dim(t) for t in NodeType if graph.node_count(t)}
    dims.discard(None)
    if len(dims) != 1:
        raise ShapeMismatch(
            f"encoder needs one shared feature dim across node types, found {sorted(dims)}"
        )
    return dims.pop()


def train(
    graph: HeteroGraph,
    pairs: Sequence[LabeledPair],
    config: TrainConfig,
    edge_types_per_hop: Sequence[Iterable[EdgeType]] | None = None,
) -> TrainResult:
    """Run the full training loop and evaluate on the post-cutoff pairs.

    Reproducible bit-for-bit on one platform for a fixed config seed.
    Raises DivergenceDetected (with the batch index) if the loss goes
    non-finite.
    """
    started = time.perf_counter()
    if config.cutoff is not None:
        split = check_no_leakage(pairs, config.cutoff)
        train_pairs, eval_pairs = split.encoder_pairs, split.later_pairs
    else:
        train_pairs, eval_pairs = list(pairs), []
    if not train_pairs:
        raise EmptyDataset("no training pairs at or before the cutoff")

    feature_dim = _graph_feature_dim(graph)
    params = init_encoder_params(
        feature_dim,
        layer_dims=config.layer_dims,
        aggregation=config.aggregation,
        seed=mix_seed(config.seed, 0x1),
    )
    decoder_mlp = None
    if config.decoder == "mlp":
        decoder_mlp = Mlp(
            [2 * params.output_dim, *config.mlp_hidden, 1], seed=mix_seed(config.seed, 0xD)
        )
    optimizer = make_optimizer(config)
    builder = BatchBuilder(graph, config, edge_types_per_hop)

    flat_params = dict(params.param_dict())
    if decoder_mlp is not None:
        flat_params.update(
            {f"decoder.{k}": v for k, v in decoder_mlp.param_dict().items()}
        )

    epoch_losses: list[float] = []
    batch_index = 0
    for epoch in range(config.epochs):
        loss_sum = 0.0
        entries = 0
        for batch in builder.batches(train_pairs, epoch):
            n_members = len(batch.member_graphs)
            embeddings, cache = encode_batch(
                batch.member_graphs + batch.job_graphs, params
            )
            m_emb, j_emb = embeddings[:n_members], embeddings[n_members:]
            if batch.paired:
                scores, dec_backward = score_pairs(
                    m_emb, j_emb, config.decoder, decoder_mlp
                )
                target = np.diagonal(batch.labels)
            else:
                scores, dec_backward = score_matrix_dot(m_emb, j_emb)
                target = batch.labels
            loss, d_scores = loss_cross_entropy(scores, target)
            if not np.isfinite(loss):
                raise DivergenceDetected(batch_index)
            d_member, d_job, mlp_grads = dec_backward(d_scores)
            grads = backward_batch(cache, np.concatenate([d_member, d_job], axis=0))
            if mlp_grads is not None:
                grads.update({f"decoder.{k}": v for k, v in mlp_grads.items()})
            optimizer.step(flat_params, grads)
            params.bump_version()
            loss_sum += loss
            entries += int(np.asarray(target).size)
            batch_index += 1
        epoch_losses.append(loss_sum / entries if entries else float("nan"))

    auc = recall = None
    eval_positives = [p for p in eval_pairs if p.label == 1]
    if eval_positives:
        auc = evaluate_auc(
            graph, params, decoder_mlp, eval_positives, config, edge_types_per_hop
        )
        recall = evaluate_recall(
            graph, params, decoder_mlp, eval_positives, config, edge_types_per_hop
        )
    report = TrainReport(
        epoch_losses=epoch_losses,
        auc=auc,
        recall_at_k=recall,
        k=config.eval_k,
        wall_clock_s=time.perf_counter() - started,
        config=_config_echo(config),
        skipped_pairs=builder.skipped,
        leakage_violations=builder.leakage_violations,
        eval_positives=len(eval_positives),
    )
    return TrainResult(params=params, decoder_mlp=decoder_mlp, report=report)


def _config_echo(config: TrainConfig) -> dict:
    echo = dataclasses.asdict(config)
    echo["sampler"] = dataclasses.asdict(config.sampler)
    return {k: str(v) for k, v in echo.items()}


# -- evaluation --------------------------------------------------------------------

def auc_score(labels: np.ndarray, scores: np.ndarray) -> float:
    """Rank-based AUC with midrank tie handling."""
    y = np.asarray(labels, dtype=np.float64)
    s = np.asarray(scores, dtype=np.float64)
    n_pos = int(y.sum())
    n_neg = y.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EmptyEvalSet("AUC needs both positive and negative examples")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s), dtype=np.float64)
    sorted_scores = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    pos_rank_sum = ranks[y == 1.0].sum()
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def compute_embeddings(
    graph: HeteroGraph,
    nodes: Sequence[NodeRef],
    params: EncoderParams,
    sampler: SamplerConfig,
    edge_types_per_hop: Sequence[Iterable[EdgeType]] | None = None,
    chunk_size: int = 1024,
) -> dict[NodeRef, np.ndarray]:
    """Inductive embeddings for many query nodes (float32, seed-deterministic).

    Each node's neighborhood is drawn with a seed mixed from the sampler
    seed and the node identity, so results do not depend on batch order.
    """
    out: dict[NodeRef, np.ndarray] = {}
    unique = [n for n in dict.fromkeys(nodes)]
    for start in range(0, len(unique), chunk_size):
        chunk = unique[start : start + chunk_size]
        cgs = []
        for ref in chunk:
            cfg = dataclasses.replace(sampler, seed=_root_seed(sampler.seed, 0xE0, 0, ref))
            cgs.append(sample_neighborhood(graph, ref, cfg, edge_types_per_hop))
        emb, _ = encode_batch(cgs, params)
        for ref, row in zip(chunk, emb):
            out[ref] = row.astype(np.float32)
    return out


def _score_candidates(
    member_vec: np.ndarray,
    candidate_vecs: np.ndarray,
    decoder: str,
    mlp: Mlp | None,
) -> np.ndarray:
    m = np.repeat(member_vec[None, :], candidate_vecs.shape[0], axis=0)
    kind = "dot" if decoder == "in_batch" else decoder
    scores, _ = score_pairs(m, candidate_vecs, kind, mlp)
    return scores


def _select_eval_positives(
    graph: HeteroGraph,
    eval_pairs: Sequence[LabeledPair],
    limit: int,
    seed: int,
) -> list[LabeledPair]:
    positives = [
        p
        for p in eval_pairs
        if p.label == 1 and graph.has_node(p.member) and graph.has_node(p.job)
    ]
    if not positives:
        raise EmptyEvalSet("no usable positive pairs to evaluate")
    rng = np.random.default_rng(mix_seed(seed, 0xE5E1))
    order = rng.permutation(len(positives))
    return [positives[i] for i in order[:limit]]


def evaluate_recall(
    graph: HeteroGraph,
    params: EncoderParams,
    decoder_mlp: Mlp | None,
    eval_pairs: Sequence[LabeledPair],
    config: TrainConfig,
    edge_types_per_hop=None,
) -> float:
    """Fraction of held-out positives ranked in the top k against a
    seed-fixed pool of uniformly sampled negative jobs (ties break by
    ascending job id)."""
    selected = _select_eval_positives(
        graph, eval_pairs, config.eval_max_members, config.seed
    )
    jobs = list(graph.nodes(NodeType.JOB))
    if len(jobs) < 2:
        raise EmptyEvalSet("need at least two jobs to build negative pools")
    pool_size = min(config.eval_pool_size, len(jobs) - 1)
    rng = np.random.default_rng(mix_seed(config.seed, 0x9EC))
    pools: list[list[NodeRef]] = []
    needed: list[NodeRef] = []
    for p in selected:
        picked = rng.permutation(len(jobs))
        pool = []
        for idx in picked:
            if jobs[idx] != p.job:
                pool.append(jobs[idx])
            if len(pool) == pool_size:
                break
        pools.append(pool)
        needed.append(p.member)
        needed.append(p.job)
        needed.extend(pool)
    vectors = compute_embeddings(
        graph, needed, params, config.sampler, edge_types_per_hop
    )
    hits = 0
    for p, pool in zip(selected, pools):
        member_vec = vectors[p.member].astype(np.float64)
        cand_refs = [p.job] + pool
        cand = np.stack([vectors[r] for r in cand_refs]).astype(np.float64)
        scores = _score_candidates(member_vec, cand, config.decoder, decoder_mlp)
        s_pos = scores[0]
        better = int(np.sum(scores[1:] > s_pos))
        ties_ahead = sum(
            1
            for r, s in zip(cand_refs[1:], scores[1:])
            if s == s_pos and r.id < p.job.id
        )
        rank = 1 + better + ties_ahead
        if rank <= config.eval_k:
            hits += 1
    return hits / len(selected)


def evaluate_auc(
    graph: HeteroGraph,
    params: EncoderParams,
    decoder_mlp: Mlp | None,
    eval_pairs: Sequence[LabeledPair],
    config: TrainConfig,
    edge_types_per_hop=None,
) -> float:
    """Global AUC of held-out positives against uniformly drawn negative jobs."""
    selected = _select_eval_positives(
        graph, eval_pairs, config.eval_max_members, config.seed
    )
    jobs = list(graph.nodes(NodeType.JOB))
    if len(jobs) < 2:
        raise EmptyEvalSet("need at least two jobs to draw negatives")
    rng = np.random.default_rng(mix_seed(config.seed, 0xA0C))
    examples: list[tuple[NodeRef, NodeRef, int]] = []
    needed: list[NodeRef] = []
    for p in selected:
        examples.append((p.member, p.job, 1))
        needed.append(p.member)
        needed.append(p.job)
        for _ in range(config.eval_negatives_per_positive):
            candidate = jobs[int(rng.integers(len(jobs)))]
            while candidate == p.job:
                candidate = jobs[int(rng.integers(len(jobs)))]
            examples.append((p.member, candidate, 0))
            needed.append(candidate)
    vectors = compute_embeddings(
        graph, needed, params, config.sampler, edge_types_per_hop
    )
    m = np.stack([vectors[m_ref] for m_ref, _, _ in examples]).astype(np.float64)
    j = np.stack([vectors[j_ref] for _, j_ref, _ in examples]).astype(np.float64)
    kind = "dot" if config.decoder == "in_batch" else config.decoder
    scores, _ = score_pairs(m, j, kind, decoder_mlp)
    labels = np.asarray([lbl for _, _, lbl in examples], dtype=np.float64)
    return auc_score(labels, scores)
