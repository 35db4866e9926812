"""Command-line surface: preprocess, train, evaluate, predict, resample-stats.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 model/compat error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import corpus, evaluation, objectives, tokenizer, training
from .corpus import CLASS_ORDER, OlidError, SplitSpec
from .preprocess import EmojiTableError, load_emoji_table, preprocess
from .training import EncodedSet, mix_seed

USAGE, DATA, MODEL = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); usage errors are exit 1 here
        raise UsageError(message)


def _opt(label) -> str:
    return label.value if label is not None else corpus.NULL


def _load_table(path: str | None):
    return load_emoji_table(path) if path else None


def cmd_preprocess(args) -> int:
    records = corpus.read_olid(args.input)
    table = _load_table(args.emoji_table)
    rows = [corpus.HEADER]
    for r in records:
        clean = preprocess(r.text, table).text
        rows.append(f"{r.id}\t{clean}\t{r.a.value}\t{_opt(r.b)}\t{_opt(r.c)}")
    Path(args.output).write_text("\n".join(rows) + "\n", encoding="utf-8", newline="")
    return 0


def _effective_config(args) -> cfgmod.RunConfig:
    cfg = cfgmod.load_config(args.config) if args.config else cfgmod.RunConfig()
    if args.preset:
        cfg = cfgmod.apply_preset(cfg, args.preset)
    overrides = {}
    for name in ("train_tsv", "test_tsv", "level", "out_dir", "seed", "holdout_frac"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if args.mode is not None:
        overrides["resample_mode"] = args.mode
    if args.split is not None:
        overrides["split_mode"] = args.split
    if args.ratio is not None:
        overrides["split_ratio"] = args.ratio
    enc = cfg.encoder
    if args.positions is not None:
        enc = dataclasses.replace(enc, position_scheme=args.positions)
    tr = cfg.train
    if args.objective is not None:
        tr = dataclasses.replace(tr, objective=args.objective)
    if args.pooling is not None:
        tr = dataclasses.replace(tr, pooling=args.pooling)
    if args.epochs is not None:
        tr = dataclasses.replace(tr, max_epochs=args.epochs)
    if args.lr is not None:
        tr = dataclasses.replace(tr, learning_rate=args.lr)
    return dataclasses.replace(cfg, encoder=enc, train=tr, **overrides)


def cmd_train(args) -> int:
    cfg = _effective_config(args)
    if not cfg.train_tsv:
        raise UsageError("train requires --train-tsv or a config with train_tsv set")
    records = corpus.read_olid(cfg.train_tsv)
    if cfg.split_mode == "ratio":
        records, _ = corpus.split(records, SplitSpec("ratio", cfg.split_ratio, mix_seed(cfg.seed, 1)))

    level = cfg.level
    projected = corpus.project(records, level)
    if not projected:
        raise evaluation.EmptyProjectionError(f"no training records participate at level {level}")
    fit_recs, valid_recs = corpus.holdout_validation(
        projected, cfg.holdout_frac, mix_seed(cfg.seed, 2), level
    )
    if cfg.resample_mode != "none":
        fit_recs = corpus.resample(fit_recs, level, cfg.resample_mode, mix_seed(cfg.seed, 3))

    fit_clean = [preprocess(r.text).text for r in fit_recs]
    valid_clean = [preprocess(r.text).text for r in valid_recs]
    vocab = tokenizer.build_vocab(
        fit_clean, cfg.min_freq, cfg.max_vocab,
        include_mask=(cfg.train.objective == "mlm"),
    )

    enc_cfg = dataclasses.replace(cfg.encoder, vocab_size=vocab.size, seed=mix_seed(cfg.seed, 4))
    train_cfg = dataclasses.replace(cfg.train, seed=mix_seed(cfg.seed, 5))
    class_labels = list(CLASS_ORDER[level]) if train_cfg.objective == "classification" else None

    def encode_set(texts, recs):
        seqs = [tokenizer.encode(t, vocab, enc_cfg.max_len) for t in texts]
        labels = None
        if class_labels is not None:
            labels = np.array([class_labels.index(r.label_at(level)) for r in recs], dtype=np.int64)
        return EncodedSet(np.stack([s.ids for s in seqs]), np.stack([s.mask for s in seqs]), labels)

    ckpt, history = training.fit(
        encode_set(fit_clean, fit_recs), encode_set(valid_clean, valid_recs),
        vocab, enc_cfg, train_cfg, class_labels,
    )

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    training.save_checkpoint(ckpt, out / "checkpoint.bin")
    tokenizer.save_vocab(vocab, out / "vocab.tsv")
    (out / "train_log.tsv").write_text(training.format_train_log(history), encoding="utf-8", newline="")
    effective = dataclasses.replace(cfg, encoder=enc_cfg, train=train_cfg)
    cfgmod.save_config(effective, out / "effective_config.json")
    print(f"best epoch {ckpt.best_epoch} (valid loss {ckpt.valid_loss:.6g}); wrote {out}/checkpoint.bin")
    return 0


def cmd_evaluate(args) -> int:
    expected_hash = None
    if args.vocab:
        expected_hash = tokenizer.vocab_hash(tokenizer.load_vocab(args.vocab))
    ckpt = training.load_checkpoint(args.checkpoint, expected_hash)
    records = corpus.read_olid(args.test_tsv)
    report, _ = evaluation.evaluate(ckpt, records, args.level)
    table = evaluation.format_report(report, f"Subtask {args.level}")
    print(table)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.tsv").write_text(evaluation.report_tsv(report), encoding="utf-8", newline="")
    (out / "report.txt").write_text(table + "\n", encoding="utf-8", newline="")
    return 0


def cmd_predict(args) -> int:
    ckpt_a = training.load_checkpoint(args.ckpt_a)
    ckpt_b = training.load_checkpoint(args.ckpt_b)
    ckpt_c = training.load_checkpoint(args.ckpt_c)
    records = corpus.read_olid(args.input)
    preds = objectives.predict_hierarchy([r.text for r in records], ckpt_a, ckpt_b, ckpt_c)
    rows = ["id\tlabel_a\tlabel_b\tlabel_c\tp_a\tp_b\tp_c"]
    for r, p in zip(records, preds):
        p_b = corpus.NULL if p.p_b is None else f"{p.p_b:.6f}"
        p_c = corpus.NULL if p.p_c is None else f"{p.p_c:.6f}"
        rows.append(
            f"{r.id}\t{p.a.value}\t{_opt(p.b)}\t{_opt(p.c)}\t{p.p_a:.6f}\t{p_b}\t{p_c}"
        )
    Path(args.output).write_text("\n".join(rows) + "\n", encoding="utf-8", newline="")
    return 0


def cmd_resample_stats(args) -> int:
    records = corpus.project(corpus.read_olid(args.input), args.level)
    if not records:
        raise evaluation.EmptyProjectionError(f"no records participate at level {args.level}")
    before = corpus.class_counts(records, args.level)
    resampled = (
        list(records) if args.mode == "none"
        else corpus.resample(records, args.level, args.mode, args.seed)
    )
    after = corpus.class_counts(resampled, args.level)
    print("label\tbefore\tafter")
    for label in CLASS_ORDER[args.level]:
        print(f"{label}\t{before.counts[label]}\t{after.counts[label]}")
    if args.export:
        corpus.write_olid(resampled, args.export)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="offlang", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="clean the tweet column of an OLID TSV")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--emoji-table", default=None)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train one subtask model end to end")
    p.add_argument("--config", default=None)
    p.add_argument("--preset", choices=sorted(cfgmod.PRESETS), default=None)
    p.add_argument("--train-tsv", dest="train_tsv", default=None)
    p.add_argument("--test-tsv", dest="test_tsv", default=None)
    p.add_argument("--level", choices=corpus.LEVELS, default=None)
    p.add_argument("--mode", choices=cfgmod.RESAMPLE_MODES, default=None)
    p.add_argument("--pooling", choices=training.POOLINGS, default=None)
    p.add_argument("--positions", choices=("absolute", "relative"), default=None)
    p.add_argument("--objective", choices=training.OBJECTIVES, default=None)
    p.add_argument("--split", choices=("file", "ratio"), default=None)
    p.add_argument("--ratio", type=float, default=None)
    p.add_argument("--holdout-frac", dest="holdout_frac", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", dest="out_dir", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a test TSV")
    p.add_argument("checkpoint")
    p.add_argument("test_tsv")
    p.add_argument("--level", choices=corpus.LEVELS, required=True)
    p.add_argument("--vocab", default=None, help="optional vocab file to hash-check")
    p.add_argument("--out-dir", dest="out_dir", default=".")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="run the A->B->C cascade")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--ckpt-a", required=True)
    p.add_argument("--ckpt-b", required=True)
    p.add_argument("--ckpt-c", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("resample-stats", help="class counts before/after resampling")
    p.add_argument("input")
    p.add_argument("--level", choices=corpus.LEVELS, required=True)
    p.add_argument("--mode", choices=cfgmod.RESAMPLE_MODES, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--export", default=None)
    p.set_defaults(func=cmd_resample_stats)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE
    except (OlidError, EmojiTableError, evaluation.EmptyProjectionError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA
    except (training.CheckpointError, objectives.StageCompatError,
            training.NonFiniteGradientError, training.NonFiniteLossError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return MODEL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE


if __name__ == "__main__":
    sys.exit(main())
