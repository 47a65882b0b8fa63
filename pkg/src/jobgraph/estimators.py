"""scikit-learn style facades over the training pipelines.

Both estimators follow the sklearn contract (constructor stores
hyperparameters verbatim, ``fit`` returns self, ``get_params`` /
``set_params`` / ``clone`` work), so they compose with model selection
and pipeline tooling. The domain-typed inputs (graphs, labeled pairs,
embedding stores) take the place of feature matrices.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .graph import HeteroGraph, NodeRef
from .model import score_pairs, sigmoid
from .nearline import EmbeddingStore
from .ranking import (
    RankerConfig,
    RankingExample,
    evaluate_segments,
    score_and_rank,
    train_ranker,
)
from .sampling import SamplerConfig
from .training import LabeledPair, TrainConfig, compute_embeddings, train
from .validation import check_fitted, check_pairs


class GraphLinkPredictor(BaseEstimator):
    """Inductive member-job link predictor: fit on a graph plus labeled pairs,
    transform nodes to embeddings, score candidate pairs."""

    def __init__(
        self,
        layer_dims=(32, 32),
        aggregation="mean",
        decoder="in_batch",
        fanout=(10, 5),
        strategy="uniform",
        with_replacement=False,
        ppr_alpha=None,
        learning_rate=1e-3,
        optimizer="adam",
        epochs=4,
        batch_size=128,
        negative_ratio=4,
        cutoff=None,
        seed=0,
    ):
        self.layer_dims = layer_dims
        self.aggregation = aggregation
        self.decoder = decoder
        self.fanout = fanout
        self.strategy = strategy
        self.with_replacement = with_replacement
        self.ppr_alpha = ppr_alpha
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.epochs = epochs
        self.batch_size = batch_size
        self.negative_ratio = negative_ratio
        self.cutoff = cutoff
        self.seed = seed

    def _sampler_config(self) -> SamplerConfig:
        return SamplerConfig(
            fanout=tuple(self.fanout),
            strategy=self.strategy,
            with_replacement=self.with_replacement,
            ppr_alpha=self.ppr_alpha,
            seed=self.seed,
        )

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            decoder=self.decoder,
            batch_size=self.batch_size,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            optimizer=self.optimizer,
            layer_dims=tuple(self.layer_dims),
            aggregation=self.aggregation,
            sampler=self._sampler_config(),
            negative_ratio=self.negative_ratio,
            cutoff=self.cutoff,
            seed=self.seed,
        )

    def fit(self, graph: HeteroGraph, pairs: Sequence[LabeledPair]):
        result = train(graph, check_pairs(pairs), self._train_config())
        self.params_ = result.params
        self.decoder_mlp_ = result.decoder_mlp
        self.report_ = result.report
        self.graph_ = graph
        return self

    def transform(self, nodes: Sequence[NodeRef], graph: HeteroGraph | None = None) -> np.ndarray:
        """Embeddings for query nodes (rows align with ``nodes``)."""
        check_fitted(self, ["params_"])
        graph = graph if graph is not None else self.graph_
        vectors = compute_embeddings(graph, list(nodes), self.params_, self._sampler_config())
        return np.stack([vectors[n] for n in nodes])

    def score_pairs(
        self, pairs: Sequence[tuple[NodeRef, NodeRef]], graph: HeteroGraph | None = None
    ) -> np.ndarray:
        """Decoder scores for (member, job) tuples."""
        check_fitted(self, ["params_"])
        graph = graph if graph is not None else self.graph_
        members = [m for m, _ in pairs]
        jobs = [j for _, j in pairs]
        vectors = compute_embeddings(
            graph, members + jobs, self.params_, self._sampler_config()
        )
        m = np.stack([vectors[r] for r in members]).astype(np.float64)
        j = np.stack([vectors[r] for r in jobs]).astype(np.float64)
        kind = "dot" if self.decoder == "in_batch" else self.decoder
        scores, _ = score_pairs(m, j, kind, self.decoder_mlp_)
        return scores

    def decision_function(self, pairs, graph=None) -> np.ndarray:
        return self.score_pairs(pairs, graph)

    def predict_proba(self, pairs, graph=None) -> np.ndarray:
        p = sigmoid(self.score_pairs(pairs, graph))
        return np.column_stack([1.0 - p, p])

    def predict(self, pairs, graph=None) -> np.ndarray:
        return (sigmoid(self.score_pairs(pairs, graph)) > 0.5).astype(np.int64)


class FrozenEmbeddingRanker(BaseEstimator):
    """Transfer-learning ranker over precomputed embeddings plus aux features."""

    def __init__(
        self,
        hidden=(32, 32),
        learning_rate=1e-3,
        epochs=20,
        batch_size=256,
        optimizer="adam",
        use_embeddings=True,
        cutoff=None,
        seed=0,
    ):
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.use_embeddings = use_embeddings
        self.cutoff = cutoff
        self.seed = seed

    def _config(self) -> RankerConfig:
        return RankerConfig(
            hidden=tuple(self.hidden),
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            optimizer=self.optimizer,
            use_embeddings=self.use_embeddings,
            cutoff=self.cutoff,
            seed=self.seed,
        )

    def fit(self, examples: Sequence[RankingExample], embedding_store: EmbeddingStore):
        self.result_ = train_ranker(list(examples), embedding_store, self._config())
        self.embedding_store_ = embedding_store
        return self

    def decision_function(self, examples: Sequence[RankingExample]) -> np.ndarray:
        check_fitted(self, ["result_"])
        from .ranking import InputAssembler

        assembler = InputAssembler(
            self.embedding_store_,
            self.result_.embedding_dim,
            self.result_.aux_dim,
            self.result_.use_embeddings,
        )
        return self.result_.score(assembler.matrix(list(examples)).astype(np.float64))

    def predict_proba(self, examples) -> np.ndarray:
        p = self.decision_function(examples)
        return np.column_stack([1.0 - p, p])

    def predict(self, examples) -> np.ndarray:
        return (self.decision_function(examples) > 0.5).astype(np.int64)

    def rank(self, member: NodeRef, candidate_jobs: Sequence[NodeRef], aux_for=None):
        check_fitted(self, ["result_"])
        return score_and_rank(
            member, list(candidate_jobs), self.result_, self.embedding_store_, aux_for
        )

    def evaluate_segments(self, examples, segment_fn, k: int = 10):
        check_fitted(self, ["result_"])
        return evaluate_segments(
            list(examples), self.result_, self.embedding_store_, segment_fn, k
        )
