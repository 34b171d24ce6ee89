# ccvec/cli.py
import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import torch
from dotenv import load_dotenv
from pydantic import BaseModel, Field

from ccvec import __version__
from ccvec.compare import ComparisonMask, ablation_variants
from ccvec.corpus import (
    Vocabulary,
    build_vocabularies,
    filter_noisy_messages,
    first_message_line,
    import_paired_files,
    load_corpus,
    message_labels,
    save_corpus,
    synthetic_corpus,
    tokenize_line,
)
from ccvec.errors import (
    CCVecError,
    CheckpointError,
    ConfigurationError,
    CorpusError,
    MetricError,
    TrainingError,
)
from ccvec.encoder import INIT_RANGE
from ccvec.model import CC2Vec
from ccvec.tasks import (
    EmbeddingRecord,
    RetrievalIndex,
    classification_metrics,
    corpus_bleu4,
    export_features,
    extract_embeddings,
    linear_classifier,
    load_features,
    nngen_baseline,
    retrieve_message,
)
from ccvec.tensorize import encode_corpus
from ccvec.train import (
    TrainConfig,
    gradient_check,
    load_checkpoint,
    load_train_config,
    model_loss,
    save_checkpoint,
    train_model,
)

logger = logging.getLogger("ccvec")

EXIT_OK = 0
EXIT_USER_ERROR = 1
EXIT_INTERNAL_ERROR = 2

USER_ERRORS = (ConfigurationError, CorpusError, CheckpointError, MetricError, TrainingError,
               FileNotFoundError)

# TrainConfig scalar fields exposed 1:1 as --flags
TRAIN_FLAGS = {
    "learning_rate": float, "adam_beta1": float, "adam_beta2": float, "adam_eps": float,
    "l2_lambda": float, "dropout_rate": float, "batch_size": int, "epochs": int,
    "embed_dim": int, "gru_dim": int, "ntn_slices": int, "hidden_dim": int,
    "grad_clip": float, "code_min_count": int, "msg_min_count": int, "msg_max_size": int,
}
SHAPE_FLAGS = ("max_files", "max_hunks", "max_lines", "max_words")
BOOL_FLAGS = ("share_encoder", "mask_padding", "progress")


class UsageError(CCVecError):
    pass


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        raise UsageError(message)


class RunConfig(BaseModel):
    """Fully resolved configuration of one CLI run, written next to its output."""
    subcommand: str
    version: str = __version__
    paths: Dict[str, Any] = Field(default_factory=dict)
    train: Optional[TrainConfig] = None
    mask: Optional[ComparisonMask] = None
    options: Dict[str, Any] = Field(default_factory=dict)
    seed: Optional[int] = None


def _worker_count() -> int:
    value = os.getenv("CCVEC_THREADS")
    if not value:
        return 1
    try:
        threads = int(value)
    except ValueError:
        raise ConfigurationError(f"CCVEC_THREADS must be an integer, got {value!r}")
    if threads < 1:
        raise ConfigurationError("CCVEC_THREADS must be >= 1")
    torch.set_num_threads(threads)
    return threads


def _write_sidecar(output: Path, run: RunConfig) -> Path:
    sidecar = Path(f"{output}.config.json")
    sidecar.write_text(json.dumps(run.model_dump(mode="json"), indent=2, sort_keys=True) + "\n",
                       encoding="utf-8")
    logger.info("Run configuration: %s", run.model_dump_json())
    return sidecar


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("training configuration (overrides --config)")
    group.add_argument("--config", help="JSON file: a TrainConfig dict or a sidecar .config.json")
    group.add_argument("--seed", type=int, help="Random seed (default: 0)")
    for name, kind in TRAIN_FLAGS.items():
        group.add_argument(f"--{name.replace('_', '-')}", dest=name, type=kind)
    for name in SHAPE_FLAGS:
        group.add_argument(f"--{name.replace('_', '-')}", dest=name, type=int)
    for name in BOOL_FLAGS:
        group.add_argument(f"--{name.replace('_', '-')}", dest=name,
                           action=argparse.BooleanOptionalAction, default=None)
    group.add_argument("--disable", default=None,
                       help="Comma-separated comparison functions to drop: nt,nn,sim,sub,mul")
    group.add_argument("--ablation", choices=["all"], default=None,
                       help="'all' bypasses every comparison function (e_r + e_a concatenation)")


def resolve_train_config(args: argparse.Namespace) -> TrainConfig:
    """Defaults < --config file < command-line flags."""
    data: Dict[str, Any] = {}
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"config file {args.config} is not valid JSON: {e}") from e
        if not isinstance(loaded, dict):
            raise ConfigurationError(f"config file {args.config} must hold a JSON object")
        data = dict(loaded.get("train") or {}) if "subcommand" in loaded else dict(loaded)
    for name in list(TRAIN_FLAGS) + list(BOOL_FLAGS):
        value = getattr(args, name, None)
        if value is not None:
            data[name] = value
    if data.get("grad_clip") is not None and data["grad_clip"] <= 0:
        data["grad_clip"] = None
    shape = dict(data.get("shape") or {})
    for name in SHAPE_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            shape[name] = value
    if shape:
        data["shape"] = shape
    if args.seed is not None:
        data["seed"] = args.seed
    if args.disable is not None or args.ablation is not None:
        disable = args.disable.split(",") if args.disable else []
        data["mask"] = ComparisonMask.from_flags(disable, args.ablation).model_dump()
    return load_train_config(data)


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="ccvec", description="Distributed representations of code changes")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    parser.add_argument("--quiet", "-q", action="store_true", help="Warnings and errors only")
    sub = parser.add_subparsers(dest="subcommand", required=True, metavar="subcommand")

    p = sub.add_parser("ingest", help="Convert paired diff/message files into a JSONL corpus")
    p.add_argument("--diff", required=True, help="One diff per line")
    p.add_argument("--msg", required=True, help="One log message per line")
    p.add_argument("--out", "-o", required=True, help="Output corpus (JSONL)")
    p.add_argument("--newline-marker", default="<nl>")
    p.add_argument("--drop-noisy", action="store_true",
                   help="Drop bot-generated and trivial messages")

    p = sub.add_parser("vocab", help="Build code and message vocabularies")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", "-o", required=True, help="Output vocabulary file (JSON)")
    p.add_argument("--code-min-count", type=int, default=1)
    p.add_argument("--msg-min-count", type=int, default=1)
    p.add_argument("--msg-max-size", type=int, default=None)

    p = sub.add_parser("train", help="Train a model and write a checkpoint")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", "-o", required=True, help="Output checkpoint")
    p.add_argument("--vocab", help="Vocabulary file from 'ccvec vocab' (default: built from the corpus)")
    p.add_argument("--extra-corpus", action="append", default=[],
                   help="Additional patches to train on, e.g. a test split whose messages are not "
                        "a prediction target (repeatable)")
    _add_train_flags(p)

    p = sub.add_parser("embed", help="Extract code change vectors")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", "-o", required=True)
    p.add_argument("--format", choices=["jsonl", "csv"], default=None,
                   help="Default: inferred from the output suffix")
    p.add_argument("--batch-size", type=int, default=64)

    p = sub.add_parser("retrieve", help="Generate log messages by nearest-neighbour retrieval")
    p.add_argument("--model", required=True)
    p.add_argument("--index", required=True, help="Corpus with known messages")
    p.add_argument("--query", required=True, help="Corpus whose messages are generated")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--out", "-o", required=True, help="Results (JSONL)")
    p.add_argument("--no-bleu-stage", action="store_true",
                   help="Pure nearest neighbour: skip BLEU re-ranking of the top-k")
    p.add_argument("--with-baseline", action="store_true",
                   help="Also run the bag-of-words NNGen baseline and report both BLEU-4 scores")

    p = sub.add_parser("eval-bleu", help="Corpus BLEU-4 of generated messages")
    p.add_argument("--candidates", required=True, help="One message per line, or retrieve results (JSONL)")
    p.add_argument("--references", required=True, help="One message per line, or a JSONL corpus")
    p.add_argument("--out", "-o", help="Write the score report (JSON)")

    p = sub.add_parser("eval-cls", help="Classification metrics")
    p.add_argument("--predictions", help="CSV with 'label' and 'score' columns")
    p.add_argument("--features", help="Exported vectors (JSONL or CSV) for a logistic-regression classifier")
    p.add_argument("--labels", help="CSV with 'id' and 'label' columns for --features")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", "-o", help="Write the metrics report (JSON)")

    p = sub.add_parser("grad-check", help="Verify gradients against finite differences")
    p.add_argument("--corpus", help="Corpus to draw the batch from (default: synthetic)")
    p.add_argument("--batch", type=int, default=2, help="Patches in the checked batch")
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.add_argument("--step", type=float, default=1e-4)
    p.add_argument("--bias-range", type=float, default=INIT_RANGE,
                   help="Redraw biases from U(-r, r) before checking, moving ReLU inputs off zero (0: keep)")
    p.add_argument("--check-seed", type=int, default=0, help="Seed for the bias redraw")
    p.add_argument("--out", "-o", help="Write the report (JSON)")
    _add_train_flags(p)

    p = sub.add_parser("ablate", help="Train every comparison ablation variant and compare BLEU-4")
    p.add_argument("--corpus", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--out", "-o", required=True, help="Report (CSV)")
    _add_train_flags(p)
    return parser


def _load_vocab_file(path: str) -> Dict[str, Vocabulary]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return {"code": Vocabulary.from_dict(data["code"]), "message": Vocabulary.from_dict(data["message"])}
    except (KeyError, TypeError, ValueError) as e:
        raise CorpusError(f"invalid vocabulary file {path}: {e!r}") from e


def cmd_ingest(args: argparse.Namespace, workers: int) -> int:
    patches = import_paired_files(args.diff, args.msg, args.newline_marker, workers=workers)
    if args.drop_noisy:
        patches = filter_noisy_messages(patches)
    count = save_corpus(patches, args.out)
    _write_sidecar(Path(args.out), RunConfig(
        subcommand="ingest", paths={"diff": args.diff, "msg": args.msg, "out": args.out},
        options={"newline_marker": args.newline_marker, "drop_noisy": args.drop_noisy}))
    print(f"Wrote {count} patches to {args.out}")
    return EXIT_OK


def cmd_vocab(args: argparse.Namespace, workers: int) -> int:
    code_vocab, msg_vocab = build_vocabularies(
        load_corpus(args.corpus), args.code_min_count, args.msg_min_count, args.msg_max_size)
    Path(args.out).write_text(json.dumps({"code": code_vocab.to_dict(), "message": msg_vocab.to_dict()},
                                         ensure_ascii=False) + "\n", encoding="utf-8")
    _write_sidecar(Path(args.out), RunConfig(
        subcommand="vocab", paths={"corpus": args.corpus, "out": args.out},
        options={"code_min_count": args.code_min_count, "msg_min_count": args.msg_min_count,
                 "msg_max_size": args.msg_max_size}))
    print(f"Code vocabulary: {len(code_vocab)} entries, message vocabulary: {len(msg_vocab)} entries")
    print(f"Vocabularies saved to {args.out}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace, workers: int) -> int:
    config = resolve_train_config(args)
    corpus = load_corpus(args.corpus)
    for extra in args.extra_corpus:
        corpus.extend(load_corpus(extra))
    code_vocab = msg_vocab = None
    if args.vocab:
        vocabs = _load_vocab_file(args.vocab)
        code_vocab, msg_vocab = vocabs["code"], vocabs["message"]
    result = train_model(corpus, config, code_vocab, msg_vocab, workers=workers)
    save_checkpoint(result.model, config, args.out, result.code_vocab, result.msg_vocab)
    _write_sidecar(Path(args.out), RunConfig(
        subcommand="train", paths={"corpus": args.corpus, "out": args.out, "vocab": args.vocab,
                                   "extra_corpus": args.extra_corpus},
        train=config, mask=config.mask, seed=config.seed,
        options={"history": result.history}))
    print(f"Final loss: {result.history[-1]:.6f} after {config.epochs} epochs")
    print(f"Checkpoint saved to {args.out}")
    return EXIT_OK


def cmd_embed(args: argparse.Namespace, workers: int) -> int:
    checkpoint = load_checkpoint(args.model)
    model = checkpoint.build_model()
    records = extract_embeddings(model, load_corpus(args.corpus), checkpoint.code_vocab,
                                 checkpoint.config.shape, batch_size=args.batch_size, workers=workers)
    fmt = args.format or ("csv" if args.out.endswith(".csv") else "jsonl")
    export_features(records, args.out, fmt)
    _write_sidecar(Path(args.out), RunConfig(
        subcommand="embed", paths={"model": args.model, "corpus": args.corpus, "out": args.out},
        options={"format": fmt, "batch_size": args.batch_size}, seed=checkpoint.config.seed))
    print(f"Wrote {len(records)} vectors to {args.out}")
    return EXIT_OK


def _retrieval_setup(model_path: str, index_path: str, query_path: str, workers: int):
    checkpoint = load_checkpoint(model_path)
    model = checkpoint.build_model()
    index_patches = load_corpus(index_path)
    query_patches = load_corpus(query_path)
    shape = checkpoint.config.shape
    index = RetrievalIndex.build(
        extract_embeddings(model, index_patches, checkpoint.code_vocab, shape, workers=workers),
        index_patches)
    queries = extract_embeddings(model, query_patches, checkpoint.code_vocab, shape, workers=workers)
    return checkpoint, index, query_patches, queries


def _loggen(index: RetrievalIndex, query_patches, queries: List[EmbeddingRecord], k: int,
            bleu_stage: bool = True):
    return [retrieve_message(record, index, k, patch.code_tokens() if bleu_stage else None)
            for record, patch in zip(queries, query_patches)]


def cmd_retrieve(args: argparse.Namespace, workers: int) -> int:
    checkpoint, index, query_patches, queries = _retrieval_setup(args.model, args.index, args.query, workers)
    results = _loggen(index, query_patches, queries, args.k, not args.no_bleu_stage)
    with open(args.out, "w", encoding="utf-8") as f:
        for result in results:
            f.write(json.dumps(result.to_dict(), ensure_ascii=False) + "\n")

    summary: Dict[str, Any] = {}
    references = [patch.message_tokens for patch in query_patches]
    if all(references):
        summary["loggen_bleu4"] = corpus_bleu4([r.message_tokens for r in results], references)
        print(f"LogGen corpus BLEU-4: {summary['loggen_bleu4']:.2f}")
        if args.with_baseline:
            baseline = [nngen_baseline(patch.code_tokens(), index, args.k, query_id=patch.id)
                        for patch in query_patches]
            summary["nngen_bleu4"] = corpus_bleu4([r.message_tokens for r in baseline], references)
            print(f"NNGen corpus BLEU-4:  {summary['nngen_bleu4']:.2f}")
    elif args.with_baseline:
        logger.warning("Query messages are missing; BLEU-4 comparison skipped")

    _write_sidecar(Path(args.out), RunConfig(
        subcommand="retrieve", paths={"model": args.model, "index": args.index, "query": args.query,
                                      "out": args.out},
        options={"k": args.k, "bleu_stage": not args.no_bleu_stage,
                 "with_baseline": args.with_baseline, **summary},
        seed=checkpoint.config.seed))
    print(f"Results saved to {args.out}")
    return EXIT_OK


def _read_messages(path: str) -> List[List[str]]:
    if path.endswith(".jsonl"):
        messages = []
        with open(path, "r", encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    try:
                        messages.append(first_message_line(json.loads(line)["message"]))
                    except (KeyError, TypeError, ValueError) as e:
                        raise CorpusError(f"{path}: invalid message record: {e!r}") from e
    else:
        messages = Path(path).read_text(encoding="utf-8").splitlines()
    return [tokenize_line(message, lowercase=True) for message in messages]


def cmd_eval_bleu(args: argparse.Namespace, workers: int) -> int:
    candidates = _read_messages(args.candidates)
    references = _read_messages(args.references)
    if len(candidates) != len(references):
        raise CorpusError(f"{len(candidates)} candidates != {len(references)} references")
    score = corpus_bleu4(candidates, references)
    print(f"Corpus BLEU-4: {score:.2f} over {len(candidates)} messages")
    if args.out:
        Path(args.out).write_text(json.dumps({"bleu4": score, "count": len(candidates)}) + "\n",
                                  encoding="utf-8")
        _write_sidecar(Path(args.out), RunConfig(
            subcommand="eval-bleu",
            paths={"candidates": args.candidates, "references": args.references, "out": args.out}))
    return EXIT_OK


def cmd_eval_cls(args: argparse.Namespace, workers: int) -> int:
    if args.predictions:
        frame = pd.read_csv(args.predictions)
        labels, scores = frame["label"].astype(int).tolist(), frame["score"].astype(float).tolist()
    elif args.features and args.labels:
        records = {r.id: r for r in load_features(args.features)}
        frame = pd.read_csv(args.labels, dtype={"id": str})
        missing = [i for i in frame["id"] if i not in records]
        if missing:
            raise CorpusError(f"{len(missing)} labelled ids have no vector, e.g. {missing[0]!r}")
        rng = np.random.default_rng(args.seed)
        order = rng.permutation(len(frame))
        cut = int(round(len(frame) * (1 - args.test_fraction)))
        if cut < 1 or cut >= len(frame):
            raise ConfigurationError("test fraction leaves an empty train or test split")
        train_rows, test_rows = frame.iloc[order[:cut]], frame.iloc[order[cut:]]
        scores = linear_classifier([records[i] for i in train_rows["id"]], train_rows["label"].astype(int).tolist(),
                                   [records[i] for i in test_rows["id"]], seed=args.seed).tolist()
        labels = test_rows["label"].astype(int).tolist()
    else:
        raise ConfigurationError("eval-cls needs --predictions, or --features with --labels")

    report = classification_metrics(labels, scores, args.threshold)
    for name, value in report.to_dict().items():
        if value is not None and name != "auc_error":
            print(f"{name:>9}: {value:.4f}")
    if report.auc_error:
        print(f"      auc: undefined ({report.auc_error})")
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
        _write_sidecar(Path(args.out), RunConfig(
            subcommand="eval-cls",
            paths={"predictions": args.predictions, "features": args.features,
                   "labels": args.labels, "out": args.out},
            options={"threshold": args.threshold, "test_fraction": args.test_fraction},
            seed=args.seed))
    return EXIT_OK


# toy dimensions used when grad-check runs without explicit overrides
GRAD_CHECK_DEFAULTS = {
    "embed_dim": 8, "gru_dim": 4, "ntn_slices": 4, "hidden_dim": 8, "dropout_rate": 0.0,
    "l2_lambda": 0.0, "epochs": 1,
    "shape": {"max_files": 2, "max_hunks": 2, "max_lines": 2, "max_words": 4},
}


def cmd_grad_check(args: argparse.Namespace, workers: int) -> int:
    overrides = resolve_train_config(args).model_dump(exclude_unset=True)
    shape = {**GRAD_CHECK_DEFAULTS["shape"], **overrides.pop("shape", {})}
    config = load_train_config({**GRAD_CHECK_DEFAULTS, **overrides, "shape": shape})
    corpus = load_corpus(args.corpus) if args.corpus else synthetic_corpus(max(args.batch, 2), config.seed)
    code_vocab, msg_vocab = build_vocabularies(
        corpus, config.code_min_count, config.msg_min_count, config.msg_max_size)
    batch_patches = corpus[:args.batch]
    torch.manual_seed(config.seed)
    model = CC2Vec.from_config(config, len(code_vocab), len(msg_vocab))
    ids = encode_corpus(batch_patches, config.shape, code_vocab, workers=workers)
    labels = torch.from_numpy(np.stack([message_labels(p, msg_vocab) for p in batch_patches]))
    report = gradient_check(model, (ids, labels), model_loss(config.l2_lambda),
                            tolerance=args.tolerance, step=args.step,
                            bias_range=args.bias_range or None, seed=args.check_seed)
    for group in report.groups:
        status = "ok" if group.passed else "FAIL"
        print(f"{status:>4}  {group.name:<45} rel={group.relative_error:.2e}  max_abs={group.max_abs_error:.2e}"
              f"  skipped={group.skipped}")
    print(f"Gradient check {'passed' if report.passed else 'FAILED'} "
          f"({len(report.groups) - len(report.failures())}/{len(report.groups)} groups)")
    if args.out:
        Path(args.out).write_text(json.dumps({
            "passed": report.passed, "tolerance": report.tolerance,
            "groups": [vars(group) for group in report.groups]}, indent=2) + "\n", encoding="utf-8")
        _write_sidecar(Path(args.out), RunConfig(
            subcommand="grad-check", paths={"corpus": args.corpus, "out": args.out},
            train=config, mask=config.mask, seed=config.seed,
            options={"batch": args.batch, "tolerance": args.tolerance, "step": args.step,
                     "bias_range": args.bias_range, "check_seed": args.check_seed}))
    return EXIT_OK if report.passed else EXIT_INTERNAL_ERROR


def cmd_ablate(args: argparse.Namespace, workers: int) -> int:
    base = resolve_train_config(args)
    corpus = load_corpus(args.corpus)
    query_patches = load_corpus(args.query)
    references = [patch.message_tokens for patch in query_patches]
    if not all(references):
        raise CorpusError("every query patch needs a message to score the ablation")

    rows = []
    for name, mask in ablation_variants().items():
        logger.info("Training variant %s", name)
        config = base.model_copy(update={"mask": mask})
        result = train_model(corpus, config, workers=workers)
        index = RetrievalIndex.build(
            extract_embeddings(result.model, corpus, result.code_vocab, config.shape, workers=workers), corpus)
        queries = extract_embeddings(result.model, query_patches, result.code_vocab, config.shape, workers=workers)
        results = _loggen(index, query_patches, queries, args.k)
        rows.append({"variant": name, "e_p_width": result.model.patch_dim,
                     "bleu4": corpus_bleu4([r.message_tokens for r in results], references)})

    table = pd.DataFrame(rows)
    full = table.loc[table["variant"] == "All", "bleu4"].iloc[0]
    table["drop_pct"] = (full - table["bleu4"]) / full * 100 if full else 0.0
    table.to_csv(args.out, index=False)
    print(table.to_string(index=False, float_format=lambda v: f"{v:.2f}"))
    _write_sidecar(Path(args.out), RunConfig(
        subcommand="ablate", paths={"corpus": args.corpus, "query": args.query, "out": args.out},
        train=base, seed=base.seed, options={"k": args.k}))
    print(f"Results saved to {args.out}")
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "vocab": cmd_vocab,
    "train": cmd_train,
    "embed": cmd_embed,
    "retrieve": cmd_retrieve,
    "eval-bleu": cmd_eval_bleu,
    "eval-cls": cmd_eval_cls,
    "grad-check": cmd_grad_check,
    "ablate": cmd_ablate,
}


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand; 0 on success, 1 on user error, 2 on internal error."""
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USER_ERROR
    except SystemExit as e:
        return EXIT_OK if not e.code else EXIT_USER_ERROR

    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        workers = _worker_count()
        return COMMANDS[args.subcommand](args, workers)
    except USER_ERRORS as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USER_ERROR
    except Exception as e:
        logger.debug("Internal error", exc_info=True)
        print(f"Internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL_ERROR


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
