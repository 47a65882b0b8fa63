"""Single command-line entry point for the whole workflow.

Subcommands mirror the pipeline: synth -> build-graph -> train ->
infer-batch / serve-nearline -> rank-train -> evaluate, plus bench.
A JSON config file provides shared settings; flags win over config
values; unknown config keys are rejected by name. Every subcommand is
deterministic under a fixed --seed.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
divergence.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import time

import numpy as np

from . import synth as synth_mod
from .errors import (
    ConfigError,
    DataError,
    DivergenceDetected,
    JobGraphError,
    NumericError,
)
from .graph import HeteroGraph, NodeRef, NodeType
from .graph_io import read_graph, write_graph
from .model import (
    checkpoint_model_id,
    load_encoder_checkpoint,
    save_encoder_checkpoint,
)
from .nearline import (
    EmbeddingStore,
    NearlineConfig,
    NearlineStores,
    run_pipeline,
)
from .ranking import (
    RankerConfig,
    cold_start_segment_fn,
    evaluate_segments,
    load_ranker_checkpoint,
    read_ranking_examples,
    save_ranker_checkpoint,
    segment_report_csv,
    train_ranker,
)
from .sampling import SamplerConfig, sample_neighborhood
from .synth import SynthConfig, generate, stats
from .training import (
    TrainConfig,
    compute_embeddings,
    read_label_file,
    train,
    write_label_file,
)
from .nearline import write_event_log
from .ranking import write_ranking_examples

DEFAULT_CONFIG: dict = {
    "seed": 0,
    "workers": 0,  # 0 = use the machine's core count
    "synth": {
        "member_count": 20000,
        "jobs_per_member": 0.05,
        "companies_per_member": 0.025,
        "positions_per_member": 0.0625,
        "title_count": 50,
        "skill_count": 80,
        "generic_skill_count": 8,
        "member_top_skill_mean": 1.2,
        "job_top_skill_mean": 0.67,
        "engagement_rate": 4.0,
        "recruiter_rate": 0.25,
        "cluster_count": 20,
        "cold_start_fraction": 0.1,
        "within_cluster_prob": 0.9,
        "feature_dim": 16,
        "member_noise": 1.0,
        "job_noise": 1.0,
        "attribute_noise": 0.25,
        "title_fidelity": 0.7,
        "post_cutoff_fraction": 0.25,
        "ranking_negatives_per_positive": 4,
    },
    "sampler": {
        "fanout": [10, 5],
        "strategy": "uniform",
        "with_replacement": False,
        "ppr_alpha": None,
    },
    "train": {
        "decoder": "in_batch",
        "batch_size": 128,
        "epochs": 4,
        "learning_rate": 0.003,
        "optimizer": "adam",
        "layer_dims": [32, 32],
        "aggregation": "mean",
        "mlp_hidden": [32],
        "negative_ratio": 4,
        "cutoff": synth_mod.DEFAULT_CUTOFF_TS,
        "eval_pool_size": 100,
        "eval_k": 10,
        "eval_max_members": 2000,
        "eval_negatives_per_positive": 4,
    },
    "nearline": {
        "capacity": 128,
        "debounce_ms": 100,
    },
    "ranking": {
        "hidden": [32, 32],
        "learning_rate": 0.001,
        "epochs": 20,
        "batch_size": 256,
        "use_embeddings": True,
    },
}


def validate_config(doc: dict, reference: dict = DEFAULT_CONFIG, prefix: str = "") -> None:
    """Reject unknown keys, naming the offending dotted path."""
    if not isinstance(doc, dict):
        raise ConfigError(f"config section {prefix or '<root>'} must be an object")
    for key, value in doc.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in reference:
            raise ConfigError(f"unknown config key: {path}")
        if isinstance(reference[key], dict):
            validate_config(value, reference[key], path)


def load_config(path: str | None) -> dict:
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path is None:
        return config
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    validate_config(doc)
    for section, value in doc.items():
        if isinstance(value, dict):
            config[section].update(value)
        else:
            config[section] = value
    return config


def _workers(config: dict, args) -> int:
    if getattr(args, "workers", None):
        return args.workers
    configured = config.get("workers") or 0
    return configured if configured > 0 else (os.cpu_count() or 1)


def _sampler_from_config(config: dict, seed: int) -> SamplerConfig:
    section = config["sampler"]
    return SamplerConfig(
        fanout=tuple(section["fanout"]),
        strategy=section["strategy"],
        with_replacement=section["with_replacement"],
        ppr_alpha=section["ppr_alpha"],
        seed=seed,
    )


def _train_config(config: dict, seed: int) -> TrainConfig:
    section = config["train"]
    return TrainConfig(
        decoder=section["decoder"],
        batch_size=section["batch_size"],
        epochs=section["epochs"],
        learning_rate=section["learning_rate"],
        optimizer=section["optimizer"],
        layer_dims=tuple(section["layer_dims"]),
        aggregation=section["aggregation"],
        mlp_hidden=tuple(section["mlp_hidden"]),
        sampler=_sampler_from_config(config, seed),
        negative_ratio=section["negative_ratio"],
        cutoff=section["cutoff"],
        seed=seed,
        eval_pool_size=section["eval_pool_size"],
        eval_k=section["eval_k"],
        eval_max_members=section["eval_max_members"],
        eval_negatives_per_positive=section["eval_negatives_per_positive"],
    )


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


# -- subcommands --------------------------------------------------------------------

def cmd_synth(args, config: dict) -> int:
    section = dict(config["synth"])
    section["seed"] = args.seed if args.seed is not None else config["seed"]
    synth_config = SynthConfig(**section)
    result = generate(synth_config)
    out = args.out_dir
    os.makedirs(out, exist_ok=True)
    write_graph(result.graph, os.path.join(out, "graph.tsv"))
    write_label_file(os.path.join(out, "labels.tsv"), result.pairs)
    write_event_log(os.path.join(out, "events.jsonl"), result.events)
    write_ranking_examples(os.path.join(out, "ranking.tsv"), result.ranking_examples)
    graph_stats = stats(result.graph)
    _write(os.path.join(out, "stats.txt"), graph_stats.to_text())
    print(f"synth: {result.graph.node_count()} nodes, {len(result.pairs)} labeled pairs,")
    print(f"       {len(result.events)} events, {len(result.ranking_examples)} ranking examples")
    print(f"       cutoff ts {result.cutoff}, files in {out}/")
    return 0


def cmd_build_graph(args, config: dict) -> int:
    graph = read_graph(args.graph)
    graph.validate()
    if args.out:
        write_graph(graph, args.out)
    text = stats(graph).to_text()
    if args.stats_out:
        _write(args.stats_out, text)
    else:
        print(text, end="")
    return 0


def cmd_train(args, config: dict) -> int:
    seed = args.seed if args.seed is not None else config["seed"]
    graph = read_graph(args.graph)
    pairs = read_label_file(args.labels)
    train_config = _train_config(config, seed)
    result = train(graph, pairs, train_config)
    save_encoder_checkpoint(args.out_checkpoint, result.params,
                            train_config.decoder, result.decoder_mlp)
    if args.report_out:
        _write(args.report_out, result.report.to_text())
    if args.loss_csv_out:
        _write(args.loss_csv_out, result.report.loss_csv())
    for epoch, loss in enumerate(result.report.epoch_losses):
        print(f"epoch {epoch}: mean loss {loss:.6f}")
    if result.report.auc is not None:
        print(f"eval auc: {result.report.auc:.4f}  "
              f"recall@{result.report.k}: {result.report.recall_at_k:.4f}")
    print(f"checkpoint: {args.out_checkpoint}")
    return 0


def _embed_all(graph: HeteroGraph, params, sampler: SamplerConfig,
               types: list[NodeType]) -> EmbeddingStore:
    store = EmbeddingStore()
    nodes: list[NodeRef] = []
    for t in types:
        nodes.extend(graph.nodes(t))
    vectors = compute_embeddings(graph, nodes, params, sampler)
    for node in nodes:
        store.publish(node, vectors[node], produced_at=0, model_id="batch")
    return store


def cmd_infer_batch(args, config: dict) -> int:
    seed = args.seed if args.seed is not None else config["seed"]
    graph = read_graph(args.graph)
    params, _, _ = load_encoder_checkpoint(args.checkpoint)
    sampler = _sampler_from_config(config, seed)
    types = [NodeType.MEMBER, NodeType.JOB]
    if args.types:
        types = [NodeType(t.capitalize()) for t in args.types.split(",")]
    store = _embed_all(graph, params, sampler, types)
    store.export_file(args.out)
    print(f"infer-batch: wrote {len(store)} embeddings to {args.out}")
    return 0


def cmd_serve_nearline(args, config: dict) -> int:
    seed = args.seed if args.seed is not None else config["seed"]
    params, _, _ = load_encoder_checkpoint(args.checkpoint)
    nearline_config = NearlineConfig(
        capacity=config["nearline"]["capacity"],
        debounce_ms=config["nearline"]["debounce_ms"],
    )
    stores = NearlineStores.fresh(nearline_config)
    embedding_store = EmbeddingStore()
    sampler = _sampler_from_config(config, seed)
    pipeline_stats = run_pipeline(
        args.events,
        params,
        stores,
        embedding_store,
        sampler,
        model_id=checkpoint_model_id(args.checkpoint),
        workers=_workers(config, args),
        dead_letter_path=args.dead_letter_out,
    )
    embedding_store.export_file(args.out)
    if args.stats_out:
        _write(args.stats_out, pipeline_stats.to_text())
    if args.histogram_out:
        _write(args.histogram_out, pipeline_stats.histogram_csv())
    print(pipeline_stats.to_text(), end="")
    print(f"serve-nearline: wrote {len(embedding_store)} embeddings to {args.out}")
    return 0


def cmd_rank_train(args, config: dict) -> int:
    seed = args.seed if args.seed is not None else config["seed"]
    examples = read_ranking_examples(args.examples)
    embedding_store = EmbeddingStore.load_file(args.embeddings)
    section = config["ranking"]
    ranker_config = RankerConfig(
        hidden=tuple(section["hidden"]),
        learning_rate=section["learning_rate"],
        epochs=section["epochs"],
        batch_size=section["batch_size"],
        use_embeddings=section["use_embeddings"],
        cutoff=config["train"]["cutoff"],
        seed=seed,
    )
    result = train_ranker(examples, embedding_store, ranker_config)
    save_ranker_checkpoint(args.out_checkpoint, result)
    print(f"rank-train: {len(examples)} examples, "
          f"final mean loss {result.epoch_losses[-1]:.6f}, "
          f"fallbacks {result.fallbacks}")
    print(f"checkpoint: {args.out_checkpoint}")
    return 0


def cmd_evaluate(args, config: dict) -> int:
    seed = args.seed if args.seed is not None else config["seed"]
    os.makedirs(args.out_dir, exist_ok=True)
    overall_rows = ["metric,value"]
    graph = read_graph(args.graph)
    train_config = _train_config(config, seed)

    if args.checkpoint and args.labels:
        params, decoder_kind, decoder_mlp = load_encoder_checkpoint(args.checkpoint)
        pairs = read_label_file(args.labels)
        eval_pairs = [p for p in pairs if train_config.cutoff is None
                      or p.timestamp > train_config.cutoff]
        from .training import evaluate_auc, evaluate_recall

        cfg = _train_config(config, seed)
        auc = evaluate_auc(graph, params, decoder_mlp, eval_pairs, cfg)
        recall = evaluate_recall(graph, params, decoder_mlp, eval_pairs, cfg)
        overall_rows.append(f"link_auc,{auc:.6f}")
        overall_rows.append(f"link_recall_at_{cfg.eval_k},{recall:.6f}")
        print(f"link prediction: auc {auc:.4f}, recall@{cfg.eval_k} {recall:.4f}")

    if args.ranker and args.examples and args.embeddings:
        ranker = load_ranker_checkpoint(args.ranker)
        examples = read_ranking_examples(args.examples)
        embedding_store = EmbeddingStore.load_file(args.embeddings)
        metrics = evaluate_segments(
            examples, ranker, embedding_store, cold_start_segment_fn(graph),
            k=config["train"]["eval_k"],
        )
        _write(os.path.join(args.out_dir, "segments.csv"), segment_report_csv(metrics))
        overall = metrics.get("overall")
        if overall and overall.auc is not None:
            overall_rows.append(f"ranker_auc,{overall.auc:.6f}")
            print(f"ranker: overall auc {overall.auc:.4f} "
                  f"({len(metrics) - 1} segments in segments.csv)")

    _write(os.path.join(args.out_dir, "overall.csv"), "\n".join(overall_rows) + "\n")
    return 0


def cmd_bench(args, config: dict) -> int:
    seed = args.seed if args.seed is not None else config["seed"]
    graph = read_graph(args.graph)
    params, _, _ = load_encoder_checkpoint(args.checkpoint)
    sampler = _sampler_from_config(config, seed)
    report: dict[str, float] = {}

    members = list(graph.nodes(NodeType.MEMBER))
    jobs = list(graph.nodes(NodeType.JOB))
    probe = (members + jobs)[: args.samples]

    started = time.perf_counter()
    for i, node in enumerate(probe):
        sample_neighborhood(
            graph, node,
            SamplerConfig(sampler.fanout, sampler.strategy,
                          sampler.with_replacement, sampler.ppr_alpha, seed + i),
        )
    elapsed = time.perf_counter() - started
    report["sampling_per_s"] = len(probe) / elapsed if elapsed else 0.0

    started = time.perf_counter()
    compute_embeddings(graph, probe, params, sampler)
    elapsed = time.perf_counter() - started
    report["encode_per_s"] = len(probe) / elapsed if elapsed else 0.0

    if args.events:
        stores = NearlineStores.fresh(
            NearlineConfig(capacity=config["nearline"]["capacity"],
                           debounce_ms=config["nearline"]["debounce_ms"])
        )
        embedding_store = EmbeddingStore()
        pipeline_stats = run_pipeline(
            args.events, params, stores, embedding_store, sampler,
            workers=_workers(config, args),
        )
        report["nearline_events_per_s"] = pipeline_stats.events_per_s
        report["nearline_events"] = pipeline_stats.events_total
        report["nearline_published"] = pipeline_stats.published

    text = "".join(f"{k}: {v:.1f}\n" for k, v in report.items())
    if args.out:
        _write(args.out, text)
    print(text, end="")
    return 0


# -- parser -------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's default 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="jobgraph", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--config", help="JSON config file (defaults documented in README)")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--workers", type=int, default=None,
                        help="worker threads (1 = deterministic serial path)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic marketplace dataset")
    p.add_argument("--out-dir", default="out", help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-graph", help="validate a graph file, emit stats")
    p.add_argument("--graph", required=True)
    p.add_argument("--out", help="write a normalized copy here")
    p.add_argument("--stats-out", help="write stats here instead of stdout")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("train", help="train the encoder on labeled pairs")
    p.add_argument("--graph", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--report-out")
    p.add_argument("--loss-csv-out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer-batch", help="embed all members/jobs from a graph file")
    p.add_argument("--graph", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--types", help="comma list, e.g. member,job (default both)")
    p.set_defaults(func=cmd_infer_batch)

    p = sub.add_parser("serve-nearline", help="drain an event log into embeddings")
    p.add_argument("--events", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stats-out")
    p.add_argument("--histogram-out")
    p.add_argument("--dead-letter-out")
    p.set_defaults(func=cmd_serve_nearline)

    p = sub.add_parser("rank-train", help="train the downstream ranker")
    p.add_argument("--examples", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out-checkpoint", required=True)
    p.set_defaults(func=cmd_rank_train)

    p = sub.add_parser("evaluate", help="link-prediction and ranker metrics")
    p.add_argument("--graph", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--labels")
    p.add_argument("--ranker")
    p.add_argument("--examples")
    p.add_argument("--embeddings")
    p.add_argument("--out-dir", default="out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="sampling/encode/nearline throughput")
    p.add_argument("--graph", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--events")
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        return args.func(args, config)
    except FileNotFoundError as exc:
        print(f"jobgraph: missing file: {exc.filename}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"jobgraph: numeric divergence: {exc}", file=sys.stderr)
        return 3
    except (DataError, JobGraphError) as exc:
        print(f"jobgraph: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
