"""Downstream job-matching ranker over frozen embeddings.

A small feed-forward net scores [member_embedding || job_embedding ||
aux_features]. Embeddings are read from the versioned store and never
receive gradients; examples must postdate the encoder's graph snapshot
cutoff (transfer learning without label leakage). Missing embeddings fall
back to zeros with a counter, because nearline lag is a normal condition,
not a failure.
"""

from __future__ import annotations

import dataclasses
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DataError, EmptyDataset, EmptyEvalSet, TemporalLeakage
from .graph import SEEKER_ENGAGEMENT, HeteroGraph, NodeRef, NodeType
from .model import Mlp, _read_container, _write_container, loss_cross_entropy, sigmoid
from .nearline import EmbeddingStore
from .training import Adam, Sgd, auc_score
from .util import mix_seed


@dataclass(frozen=True)
class RankingExample:
    member: NodeRef
    job: NodeRef
    aux: np.ndarray  # float32 auxiliary features
    label: int
    timestamp: int

    def __post_init__(self):
        object.__setattr__(self, "aux", np.asarray(self.aux, dtype=np.float32))
        if self.member.node_type != NodeType.MEMBER:
            raise ValueError(f"member side must be a Member node, got {self.member}")
        if self.job.node_type != NodeType.JOB:
            raise ValueError(f"job side must be a Job node, got {self.job}")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")


def write_ranking_examples(path: str, examples: Iterable[RankingExample]) -> None:
    """Line format: member_id<TAB>job_id<TAB>aux_csv<TAB>label<TAB>timestamp_ms."""
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            aux = ",".join(str(np.float32(v)) for v in ex.aux)
            fh.write(f"{ex.member.id}\t{ex.job.id}\t{aux}\t{ex.label}\t{ex.timestamp}\n")


def read_ranking_examples(path: str) -> list[RankingExample]:
    out: list[RankingExample] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 5:
                raise DataError(f"{path}:{line_no}: ranking line needs 5 fields")
            try:
                aux = np.asarray(
                    [float(v) for v in fields[2].split(",")] if fields[2] else [],
                    dtype=np.float32,
                )
                out.append(
                    RankingExample(
                        member=NodeRef(NodeType.MEMBER, int(fields[0])),
                        job=NodeRef(NodeType.JOB, int(fields[1])),
                        aux=aux,
                        label=int(fields[3]),
                        timestamp=int(fields[4]),
                    )
                )
            except ValueError as exc:
                raise DataError(f"{path}:{line_no}: {exc}") from None
    return out


@dataclass(frozen=True)
class RankerConfig:
    hidden: tuple[int, ...] = (32, 32)
    learning_rate: float = 1e-3
    epochs: int = 20
    batch_size: int = 256
    optimizer: str = "adam"
    use_embeddings: bool = True  # False trains an aux-features-only ablation
    cutoff: int | None = None  # encoder snapshot cutoff to guard against
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(self.hidden))
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be sgd or adam, got {self.optimizer!r}")


class InputAssembler:
    """Builds ranker inputs; missing embeddings become zeros and are counted."""

    def __init__(
        self,
        embedding_store: EmbeddingStore,
        embedding_dim: int,
        aux_dim: int,
        use_embeddings: bool = True,
    ):
        self.store = embedding_store
        self.embedding_dim = embedding_dim
        self.aux_dim = aux_dim
        self.use_embeddings = use_embeddings
        self.fallbacks = 0

    @property
    def input_dim(self) -> int:
        if not self.use_embeddings:
            return self.aux_dim
        return 2 * self.embedding_dim + self.aux_dim

    def _embedding(self, node: NodeRef) -> np.ndarray:
        record = self.store.get(node)
        if record is None:
            self.fallbacks += 1
            return np.zeros(self.embedding_dim, dtype=np.float32)
        return record.vector

    def assemble(self, example: RankingExample) -> np.ndarray:
        if example.aux.shape[0] != self.aux_dim:
            raise DataError(
                f"aux dim {example.aux.shape[0]} != configured {self.aux_dim}"
            )
        if not self.use_embeddings:
            return example.aux.astype(np.float32)
        return np.concatenate(
            [self._embedding(example.member), self._embedding(example.job), example.aux]
        ).astype(np.float32)

    def matrix(self, examples: Sequence[RankingExample]) -> np.ndarray:
        if not examples:
            return np.zeros((0, self.input_dim), dtype=np.float32)
        return np.stack([self.assemble(ex) for ex in examples])


def assemble_input(
    example: RankingExample, embedding_store: EmbeddingStore, embedding_dim: int
) -> np.ndarray:
    """[member_embedding || job_embedding || aux]; zero-filled when absent."""
    assembler = InputAssembler(embedding_store, embedding_dim, example.aux.shape[0])
    return assembler.assemble(example)


@dataclass
class RankerResult:
    params: Mlp
    use_embeddings: bool
    embedding_dim: int
    aux_dim: int
    epoch_losses: list[float] = field(default_factory=list)
    fallbacks: int = 0
    wall_clock_s: float = 0.0

    def score(self, inputs: np.ndarray) -> np.ndarray:
        raw, _ = self.params.forward(inputs)
        return sigmoid(raw)


def train_ranker(
    examples: Sequence[RankingExample],
    embedding_store: EmbeddingStore,
    config: RankerConfig,
    embedding_dim: int | None = None,
) -> RankerResult:
    """Binary cross-entropy training over assembled inputs.

    Embeddings stay frozen by construction: inputs are materialized before
    any update, and nothing ever writes back to the store. Raises
    TemporalLeakage (naming offenders) if any example is at or before the
    cutoff, EmptyDataset when nothing is trainable.
    """
    started = time.perf_counter()
    if not examples:
        raise EmptyDataset("no ranking examples")
    if config.cutoff is not None:
        offenders = [
            (str(ex.member), str(ex.job), ex.timestamp)
            for ex in examples
            if ex.timestamp <= config.cutoff
        ]
        if offenders:
            raise TemporalLeakage(offenders)
    if embedding_dim is None:
        nodes = embedding_store.nodes()
        if not nodes:
            raise EmptyDataset("embedding store is empty and no embedding_dim given")
        embedding_dim = embedding_store.get(nodes[0]).vector.shape[0]
    aux_dim = examples[0].aux.shape[0]
    assembler = InputAssembler(
        embedding_store, embedding_dim, aux_dim, config.use_embeddings
    )
    x = assembler.matrix(examples).astype(np.float64)
    y = np.asarray([ex.label for ex in examples], dtype=np.float64)

    mlp = Mlp([assembler.input_dim, *config.hidden, 1], seed=mix_seed(config.seed, 0x7A))
    if config.optimizer == "sgd":
        optimizer = Sgd(config.learning_rate)
    else:
        optimizer = Adam(config.learning_rate)
    flat = mlp.param_dict()
    rng = np.random.default_rng(mix_seed(config.seed, 0x7B))
    losses = []
    n = x.shape[0]
    for _ in range(config.epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            scores, cache = mlp.forward(x[idx])
            loss, d_scores = loss_cross_entropy(scores, y[idx])
            grads, _ = mlp.backward(cache, d_scores)
            optimizer.step(flat, grads)
            loss_sum += loss
        losses.append(loss_sum / n)
    return RankerResult(
        params=mlp,
        use_embeddings=config.use_embeddings,
        embedding_dim=embedding_dim,
        aux_dim=aux_dim,
        epoch_losses=losses,
        fallbacks=assembler.fallbacks,
        wall_clock_s=time.perf_counter() - started,
    )


def score_and_rank(
    member: NodeRef,
    candidate_jobs: Sequence[NodeRef],
    ranker: RankerResult,
    embedding_store: EmbeddingStore,
    aux_for: Callable[[NodeRef], np.ndarray] | None = None,
) -> list[tuple[NodeRef, float]]:
    """Candidates sorted by descending sigmoid score; ties by ascending job id.

    ``aux_for`` supplies per-candidate aux features (zeros when omitted,
    the cold retrieval path).
    """
    if not candidate_jobs:
        raise EmptyEvalSet("no candidate jobs to rank")
    assembler = InputAssembler(
        embedding_store, ranker.embedding_dim, ranker.aux_dim, ranker.use_embeddings
    )
    rows = []
    for cand in candidate_jobs:
        aux = (
            np.zeros(ranker.aux_dim, dtype=np.float32)
            if aux_for is None
            else np.asarray(aux_for(cand), dtype=np.float32)
        )
        rows.append(
            assembler.assemble(
                RankingExample(member=member, job=cand, aux=aux, label=0, timestamp=0)
            )
        )
    scores = ranker.score(np.stack(rows).astype(np.float64))
    ranked = sorted(
        zip(candidate_jobs, scores), key=lambda pair: (-pair[1], pair[0].id)
    )
    return [(ref, float(score)) for ref, score in ranked]


@dataclass
class SegmentMetrics:
    n: int
    auc: float | None
    recall_at_k: float | None


def evaluate_segments(
    examples: Sequence[RankingExample],
    ranker: RankerResult,
    embedding_store: EmbeddingStore,
    segment_fn: Callable[[NodeRef], str],
    k: int = 10,
) -> dict[str, SegmentMetrics]:
    """Per-segment AUC and recall@k, plus an ``overall`` row.

    Recall@k ranks each positive among the same member's listed examples.
    Segments lacking both label classes get a warning and None metrics.
    """
    if not examples:
        raise EmptyEvalSet("no examples to evaluate")
    assembler = InputAssembler(
        embedding_store, ranker.embedding_dim, ranker.aux_dim, ranker.use_embeddings
    )
    scores = ranker.score(assembler.matrix(examples).astype(np.float64))
    segments: dict[str, list[int]] = {}
    for i, ex in enumerate(examples):
        segments.setdefault(segment_fn(ex.member), []).append(i)
    segments["overall"] = list(range(len(examples)))

    out: dict[str, SegmentMetrics] = {}
    for name, idxs in sorted(segments.items()):
        labels = np.asarray([examples[i].label for i in idxs], dtype=np.float64)
        if labels.min() == labels.max():
            warnings.warn(f"segment {name!r} lacks both label classes; metrics omitted")
            out[name] = SegmentMetrics(n=len(idxs), auc=None, recall_at_k=None)
            continue
        seg_scores = scores[idxs]
        auc = auc_score(labels, seg_scores)
        recall = _member_recall_at_k(
            [examples[i] for i in idxs], seg_scores, k
        )
        out[name] = SegmentMetrics(n=len(idxs), auc=auc, recall_at_k=recall)
    return out


def _member_recall_at_k(
    examples: Sequence[RankingExample], scores: np.ndarray, k: int
) -> float | None:
    by_member: dict[NodeRef, list[int]] = {}
    for i, ex in enumerate(examples):
        by_member.setdefault(ex.member, []).append(i)
    hits = total = 0
    for idxs in by_member.values():
        labels = [examples[i].label for i in idxs]
        if 1 not in labels or 0 not in labels:
            continue
        member_scores = [(scores[i], -examples[i].job.id, examples[i].label) for i in idxs]
        member_scores.sort(reverse=True)  # high score first; ties by ascending job id
        total += sum(labels)
        hits += sum(1 for _, _, label in member_scores[:k] if label == 1)
    if total == 0:
        return None
    return hits / total


def segment_report_csv(metrics: dict[str, SegmentMetrics]) -> str:
    rows = ["segment,n,auc,recall_at_k"]
    for name, m in sorted(metrics.items()):
        auc = "" if m.auc is None else f"{m.auc:.6f}"
        recall = "" if m.recall_at_k is None else f"{m.recall_at_k:.6f}"
        rows.append(f"{name},{m.n},{auc},{recall}")
    return "\n".join(rows) + "\n"


def cold_start_segment_fn(graph: HeteroGraph) -> Callable[[NodeRef], str]:
    """Members with zero engagement edges in the (cutoff-state) graph are cold."""

    def fn(member_ref: NodeRef) -> str:
        if not graph.has_node(member_ref):
            return "cold"
        return "cold" if graph.degree(member_ref, SEEKER_ENGAGEMENT) == 0 else "engaged"

    return fn


# -- checkpointing -------------------------------------------------------------------

def save_ranker_checkpoint(path: str, ranker: RankerResult) -> None:
    header = {
        "model": "ranker",
        "format_version": 1,
        "dims": list(ranker.params.dims),
        "use_embeddings": ranker.use_embeddings,
        "embedding_dim": ranker.embedding_dim,
        "aux_dim": ranker.aux_dim,
    }
    arrays = []
    for w, b in zip(ranker.params.weights, ranker.params.biases):
        arrays.extend([w, b])
    _write_container(path, header, arrays)


def load_ranker_checkpoint(path: str) -> RankerResult:
    header, arrays = _read_container(path)
    if header.get("model") != "ranker":
        raise DataError(f"{path}: expected a ranker checkpoint")
    mlp = Mlp(header["dims"], zero_init=True)
    for i in range(len(header["dims"]) - 1):
        mlp.weights[i] = arrays[2 * i]
        mlp.biases[i] = arrays[2 * i + 1]
    return RankerResult(
        params=mlp,
        use_embeddings=header["use_embeddings"],
        embedding_dim=header["embedding_dim"],
        aux_dim=header["aux_dim"],
    )
