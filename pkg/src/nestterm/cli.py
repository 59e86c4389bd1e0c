"""Command line entry point: ``nestterm {stats,train,predict,eval,sweep}``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from pathlib import Path

import torch

from . import __version__
from .config import ModelConfig, dump_config_file, load_config_file
from .corpus import CorpusError, SplitSpec, compute_stats, load_corpus, split_corpus, write_plain_format, \
    write_stats_csv
from .encoder import ConfigError
from .eval import RATIO_AXIS, evaluate, sweep_max_length, sweep_term_ratio, total_words, true_positive_distribution
from .model import TermExtractor, TrainingError, rerank, train
from .spans import coverage_report

DATA_ENV = "NESTTERM_DATA"
log = logging.getLogger("nestterm")


class UsageError(Exception):
    pass


def resolve_path(p: str) -> Path:
    """Existing paths win; otherwise relative paths are looked up under $NESTTERM_DATA."""
    path = Path(p)
    if not path.exists() and not path.is_absolute() and os.environ.get(DATA_ENV):
        alt = Path(os.environ[DATA_ENV]) / path
        if alt.exists():
            return alt
    if not path.exists():
        raise UsageError(f"file not found: {p}")
    return path


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def resolve_config(args) -> tuple[ModelConfig, dict]:
    """Defaults < config file < command-line flags."""
    values = ModelConfig().to_dict()
    from_file = load_config_file(resolve_path(args.config)) if getattr(args, "config", None) else {}
    values.update(from_file)
    flags = {}
    for flag, field_name in (("k", "max_span_length"), ("alpha", "term_ratio"), ("seed", "seed"),
                             ("epochs", "max_epochs"), ("batch_size", "batch_size"), ("lr", "learning_rate"),
                             ("pretrained", "pretrained_path")):
        v = getattr(args, flag, None)
        if v is not None:
            flags[field_name] = v
    if getattr(args, "features", None):
        flags["features"] = [f.strip() for f in args.features.split(",") if f.strip()]
    values.update(flags)
    try:
        cfg = ModelConfig.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None
    return cfg, {"config_file": from_file, "flags": flags}


def write_manifest(out: Path, command: str, cfg: ModelConfig | None, overrides: dict, inputs: dict) -> None:
    manifest = {
        "command": command,
        "config": cfg.to_dict() if cfg else None,
        "overrides": overrides,
        "inputs": {name: {"path": str(p), "sha256": sha256(p)} for name, p in inputs.items()},
        "seed": cfg.seed if cfg else None,
        "versions": {"nestterm": __version__, "torch": torch.__version__, "python": platform.python_version()},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _select_slice(corpus, split: str, seed: int):
    if split == "all":
        return corpus
    train_s, dev_s, test_s = split_corpus(corpus, SplitSpec(shuffle_seed=seed))
    return {"train": train_s, "dev": dev_s, "test": test_s}[split]


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_stats(args) -> int:
    path = resolve_path(args.corpus)
    corpus = load_corpus(path)
    stats = compute_stats(corpus)
    print(stats.summary())
    print(coverage_report(corpus, args.k or 5).summary())
    if args.out:
        out = _outdir(args)
        write_stats_csv(stats, out / "stats.csv")
        if not args.no_plots:
            from .plotting import plot_length_distribution
            plot_length_distribution(stats, out / "length_distribution.png")
        write_manifest(out, "stats", None, {}, {"corpus": path})
    return 0


def cmd_train(args) -> int:
    cfg, overrides = resolve_config(args)
    out = _outdir(args)
    path = resolve_path(args.corpus)
    inputs = {"corpus": path}
    corpus = load_corpus(path)
    if args.dev:
        inputs["dev"] = resolve_path(args.dev)
        train_s, dev_s, test_s = corpus, load_corpus(inputs["dev"]), []
    else:
        train_s, dev_s, test_s = split_corpus(corpus, SplitSpec(shuffle_seed=cfg.seed))
        for name, part in (("train", train_s), ("dev", dev_s), ("test", test_s)):
            write_plain_format(part, out / f"{name}.jsonl")
    print(f"train {len(train_s)} / dev {len(dev_s)} / test {len(test_s)} sentences")

    def progress(stage, rec):
        print(f"{stage} " + " ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}"
                                     for k, v in rec.items()), flush=True)

    result = train(train_s, dev_s, cfg, on_epoch=progress)
    result.extractor.save(out / "checkpoint.pt")
    (out / "history.json").write_text(json.dumps(result.history, indent=2) + "\n")
    dump_config_file(cfg, out / "config.yaml")
    write_manifest(out, "train", cfg, overrides, inputs)
    print(f"checkpoint written to {out / 'checkpoint.pt'}")
    return 0


def _load_for_inference(args):
    if not args.checkpoint:
        raise UsageError(f"{args.command} requires --checkpoint")
    ckpt = resolve_path(args.checkpoint)
    ext = TermExtractor.load(ckpt)
    path = resolve_path(args.corpus)
    sentences = _select_slice(load_corpus(path), args.split, ext.cfg.seed)
    alpha = args.alpha if args.alpha is not None else ext.cfg.term_ratio
    if args.k is not None and not 1 <= args.k <= ext.cfg.max_span_length:
        raise UsageError(f"--k must lie in 1..{ext.cfg.max_span_length} (the checkpoint's max span length)")
    return ext, sentences, alpha, {"checkpoint": ckpt, "corpus": path}


def _predict(ext, sentences, alpha, k):
    """Predictions at ``alpha``; with ``k`` below the model's span cap, longer candidates are dropped first."""
    preds = ext.predict(sentences, alpha)
    if k is not None and k < ext.cfg.max_span_length:
        preds = rerank(preds, total_words(sentences), alpha, max_length=k)
    return preds


def _write_predictions(preds, path: Path):
    with open(path, "w") as fh:
        for p in preds:
            fh.write(json.dumps(p.to_json(), sort_keys=True) + "\n")


def cmd_predict(args) -> int:
    ext, sentences, alpha, inputs = _load_for_inference(args)
    out = _outdir(args)
    preds = _predict(ext, sentences, alpha, args.k)
    _write_predictions(preds, out / "predictions.jsonl")
    print(f"{sum(p.selected for p in preds)} spans selected from {len(preds)} candidates")
    write_manifest(out, "predict", ext.cfg, {"alpha": alpha, "split": args.split, "k": args.k}, inputs)
    return 0


def cmd_eval(args) -> int:
    ext, sentences, alpha, inputs = _load_for_inference(args)
    out = _outdir(args)
    preds = _predict(ext, sentences, alpha, args.k)
    k = args.k or ext.cfg.max_span_length
    clf = evaluate(preds, sentences, selector="classifier", max_length=k,
                   count_unreachable=ext.cfg.count_unreachable)
    rank = evaluate(preds, sentences, max_length=k, count_unreachable=ext.cfg.count_unreachable)
    report = {"alpha": alpha, "max_span_length": k, "sentences": len(sentences), "classifier": clf.row(), "ranker": rank.row(),
              "unreachable_gold": rank.unreachable_gold_count}
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    text = f"classifier: {clf.summary()}\nranker:     {rank.summary()}\n"
    (out / "report.txt").write_text(text)
    _write_predictions(preds, out / "predictions.jsonl")
    print(text, end="")
    write_manifest(out, "eval", ext.cfg, {"alpha": alpha, "split": args.split, "k": args.k}, inputs)
    return 0


def cmd_sweep(args) -> int:
    ext, sentences, alpha, inputs = _load_for_inference(args)
    out = _outdir(args)
    preds = _predict(ext, sentences, alpha, args.k)
    if args.axis == "ratio":
        result = sweep_term_ratio(preds, sentences, RATIO_AXIS)
        result.write_csv(out / "ratio_sweep.csv")
        dist = true_positive_distribution(preds, sentences, RATIO_AXIS)
        with open(out / "tp_distribution.csv", "w") as fh:
            fh.write("ratio,true_positive\n")
            fh.writelines(f"{a:.2f},{c}\n" for a, c in dist.items())
        if not args.no_plots:
            from .plotting import plot_ratio_sweep, plot_tp_distribution
            plot_ratio_sweep(result, out / "ratio_sweep.png")
            plot_tp_distribution(dist, out / "tp_distribution.png")
        print(f"{len(result.points)} ratio points written to {out / 'ratio_sweep.csv'}")
    else:
        if args.mode == "retrain":
            # one model per k, trained on the train/dev split of the full corpus
            full_path = resolve_path(args.train_corpus or args.corpus)
            inputs["train_corpus"] = full_path
            full = load_corpus(full_path)
            train_s, dev_s, _ = split_corpus(full, SplitSpec(shuffle_seed=ext.cfg.seed))

            def train_fn(k):
                return train(train_s, dev_s, ext.cfg.replace(max_span_length=k)).extractor

            result = sweep_max_length(sentences, alpha=alpha, train_fn=train_fn,
                                      lengths=range(1, args.max_k + 1))
        else:
            result = sweep_max_length(sentences, alpha=alpha, predictions=preds,
                                      lengths=range(1, args.max_k + 1))
        result.write_csv(out / "length_sweep.csv")
        if not args.no_plots:
            from .plotting import plot_length_sweep
            plot_length_sweep(result, out / "length_sweep.png")
        print(f"{len(result.points)} length points ({result.mode}) written to {out / 'length_sweep.csv'}")
    write_manifest(out, f"sweep-{args.axis}", ext.cfg, {"alpha": alpha, "split": args.split, "k": args.k}, inputs)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nestterm", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, inference=False):
        p.add_argument("--corpus", required=True, help="GENIA-style .xml or JSONL corpus "
                       f"(relative paths also looked up in ${DATA_ENV})")
        p.add_argument("--out", default=None if p.prog.endswith("stats") else "runs/latest")
        p.add_argument("--k", type=int, help="maximum span length")
        if inference:
            p.add_argument("--checkpoint")
            p.add_argument("--alpha", type=float, help="term ratio for top-K selection")
            p.add_argument("--split", choices=["all", "train", "dev", "test"], default="all",
                           help="evaluate a slice of --corpus split with the checkpoint's seed")
        p.add_argument("--no-plots", action="store_true")

    p = sub.add_parser("stats", help="corpus statistics")
    common(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="two-stage training")
    common(p)
    p.add_argument("--config", help="flat YAML config (reference key names accepted)")
    p.add_argument("--dev", help="separate dev corpus; --corpus is then used whole for training")
    p.add_argument("--alpha", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--features", help="comma list of base,pos,pretrained,external")
    p.add_argument("--pretrained", help="word vector text file for the 'pretrained' source")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.set_defaults(func=cmd_train)

    for name, func, text in (("predict", cmd_predict, "write predictions"),
                             ("eval", cmd_eval, "classifier and ranker P/R/F1"),
                             ("sweep", cmd_sweep, "term-ratio or span-length sweep")):
        p = sub.add_parser(name, help=text)
        common(p, inference=True)
        if name == "sweep":
            p.add_argument("--axis", choices=["ratio", "length"], default="ratio")
            p.add_argument("--mode", choices=["retrain", "restrict"], default="retrain",
                           help="retrain one model per k, or restrict the checkpoint's candidates (approximation)")
            p.add_argument("--train-corpus", help="corpus to split for retraining (default: --corpus)")
            p.add_argument("--max-k", type=int, default=15)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, CorpusError, ConfigError, TrainingError, ValueError, OSError) as exc:
        print(f"nestterm {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
