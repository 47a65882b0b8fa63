"""jobgraph: heterogeneous job-marketplace graph embeddings.

A desk-scale pipeline: a typed marketplace graph with neighbor sampling,
an inductive encoder-decoder model trained for member-job link prediction
with hand-rolled gradients, an event-driven nearline inference pipeline
publishing versioned embeddings, and a transfer-learning ranker consuming
them. See the README for the file formats and the CLI workflow.
"""

from .errors import JobGraphError
from .graph import (
    ALL_EDGE_TYPES,
    FORWARD_EDGE_TYPES,
    EdgeType,
    HeteroGraph,
    NodeRef,
    NodeType,
    compute_top_skills,
    graphs_equal,
)
from .graph_io import read_graph, write_graph
from .model import (
    EncoderParams,
    Mlp,
    aggregate_attention,
    aggregate_mean,
    decode_cosine,
    decode_dot,
    decode_mlp,
    encode,
    encode_batch,
    init_encoder_params,
    loss_cross_entropy,
    make_in_batch_labels,
)
from .nearline import (
    EmbeddingRecord,
    EmbeddingStore,
    FeatureStore,
    MarketplaceEvent,
    NearlineConfig,
    NearlineStores,
    NeighborStore,
    infer_and_publish,
    ingest,
    parse_event,
    run_pipeline,
    sequential_join,
)
from .ranking import (
    RankerConfig,
    RankingExample,
    assemble_input,
    evaluate_segments,
    score_and_rank,
    train_ranker,
)
from .sampling import ComputeGraph, SamplerConfig, sample_neighborhood
from .synth import SynthConfig, generate, stats
from .training import (
    LabeledPair,
    TrainConfig,
    check_no_leakage,
    compute_embeddings,
    evaluate_auc,
    evaluate_recall,
    train,
)
from .estimators import FrozenEmbeddingRanker, GraphLinkPredictor

__version__ = "0.1.0"

__all__ = [
    "ALL_EDGE_TYPES",
    "ComputeGraph",
    "EdgeType",
    "EmbeddingRecord",
    "EmbeddingStore",
    "EncoderParams",
    "FeatureStore",
    "FORWARD_EDGE_TYPES",
    "FrozenEmbeddingRanker",
    "GraphLinkPredictor",
    "HeteroGraph",
    "JobGraphError",
    "LabeledPair",
    "MarketplaceEvent",
    "Mlp",
    "NearlineConfig",
    "NearlineStores",
    "NeighborStore",
    "NodeRef",
    "NodeType",
    "RankerConfig",
    "RankingExample",
    "SamplerConfig",
    "SynthConfig",
    "TrainConfig",
    "aggregate_attention",
    "aggregate_mean",
    "assemble_input",
    "check_no_leakage",
    "compute_embeddings",
    "compute_top_skills",
    "decode_cosine",
    "decode_dot",
    "decode_mlp",
    "encode",
    "encode_batch",
    "evaluate_auc",
    "evaluate_recall",
    "evaluate_segments",
    "generate",
    "graphs_equal",
    "infer_and_publish",
    "ingest",
    "init_encoder_params",
    "loss_cross_entropy",
    "make_in_batch_labels",
    "parse_event",
    "read_graph",
    "run_pipeline",
    "sample_neighborhood",
    "score_and_rank",
    "sequential_join",
    "stats",
    "train",
    "train_ranker",
    "write_graph",
]
