"""Command-line entry point: ``seqrl <subcommand> [options]``.

Exit status: 0 on success, 1 on configuration errors, 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import plotting
from .config import (
    ConfigError,
    config_from_manifest,
    format_config,
    load_config,
    split_config,
    write_manifest,
)
from .corpus import CorpusError, Dataset, Vocabulary, build_vocab, load_mono, load_parallel
from .decode import beam_search
from .metrics import corpus_bleu
from .model import ModelError, load_checkpoint, save_checkpoint
from .rltrain import TrainConfig, evaluate_bleu, train
from .semisup import back_translate, build_unified_dataset, generate_pseudo_targets
from .toy import ToyTask

log = logging.getLogger("seqrl")

SWEEP_ALPHAS = (0.0, 0.1, 0.3, 0.5, 0.7, 0.9)
DEFAULT_MAX_LEN = 80


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_values(args) -> dict:
    values = {}
    if getattr(args, "manifest", None):
        values.update(config_from_manifest(args.manifest))
    if args.config:
        values.update(load_config(args.config))
    return values


def _experiment(args) -> tuple[TrainConfig, dict]:
    values = _load_values(args)
    if args.seed is not None:
        values["seed"] = args.seed
    if getattr(args, "beam_all_k", False):
        values["beam_all_k"] = True
    if getattr(args, "init", None):
        values["init_checkpoint"] = args.init
    return split_config(values)


def _require(extra: dict, *keys: str) -> None:
    for k in keys:
        if not extra.get(k):
            raise ConfigError(k, "required for this command")


def _vocabs(extra: dict) -> tuple[Vocabulary, Vocabulary]:
    if extra.get("src_vocab") and extra.get("tgt_vocab"):
        return Vocabulary.load(extra["src_vocab"]), Vocabulary.load(extra["tgt_vocab"])
    _require(extra, "train_src", "train_tgt")
    return (
        build_vocab(Path(extra["train_src"]).read_text(encoding="utf-8").splitlines()),
        build_vocab(Path(extra["train_tgt"]).read_text(encoding="utf-8").splitlines()),
    )


def _datasets(extra: dict, sv: Vocabulary, tv: Vocabulary) -> tuple[Dataset, Dataset | None, Dataset | None]:
    max_len = extra.get("corpus_max_len", DEFAULT_MAX_LEN)
    _require(extra, "train_src", "train_tgt")
    train_ds = load_parallel(extra["train_src"], extra["train_tgt"], sv, tv, max_len, extra.get("train_origin"))
    dev = test = None
    if extra.get("dev_src") and extra.get("dev_tgt"):
        dev = load_parallel(extra["dev_src"], extra["dev_tgt"], sv, tv, max_len)
    if extra.get("test_src") and extra.get("test_tgt"):
        test = load_parallel(extra["test_src"], extra["test_tgt"], sv, tv, max_len)
    return train_ds, dev, test


def _inputs(extra: dict) -> dict[str, str]:
    return {k: v for k, v in extra.items() if isinstance(v, str) and k not in ("first_side", "rl_on", "alphas")}


def _finish_training(out: Path, command: str, cfg: TrainConfig, extra: dict, report, sv, tv) -> None:
    report.write_csv(out / "metrics.csv")
    plotting.plot_training_curves(report, out / "curves.png")
    save_checkpoint(report.best_params, out / "model.ckpt")
    sv.save(out / "src.vocab")
    tv.save(out / "tgt.vocab")
    (out / "resolved.cfg").write_text(format_config(cfg, extra), encoding="utf-8")
    write_manifest(out, command, cfg, extra, _inputs(extra))
    print(f"best dev BLEU {report.best_bleu:.2f}; wrote {out / 'metrics.csv'}")


def cmd_make_vocab(args) -> int:
    lines = Path(args.input).read_text(encoding="utf-8").splitlines()
    vocab = build_vocab(lines, args.min_count, args.max_size)
    vocab.save(args.output)
    print(f"{len(vocab)} entries (including 4 reserved) -> {args.output}")
    return 0


def cmd_toy_data(args) -> int:
    out = _out_dir(args)
    seed = args.seed or 0
    task = ToyTask(n_symbols=args.symbols, max_len=args.max_len, cipher=not args.copy, seed=seed)
    task.write(
        out,
        {"train": (args.n_train, seed + 1), "dev": (args.n_dev, seed + 2), "test": (args.n_test, seed + 3)},
        {"src": (args.n_mono, seed + 4), "tgt": (args.n_mono, seed + 5)} if args.n_mono else {},
    )
    sv, tv = task.vocabs()
    sv.save(out / "src.vocab")
    tv.save(out / "tgt.vocab")
    print(f"toy task written to {out}")
    return 0


def cmd_train_mle(args) -> int:
    cfg, extra = _experiment(args)
    out = _out_dir(args)
    sv, tv = _vocabs(extra)
    train_ds, dev, _ = _datasets(extra, sv, tv)
    report = train(cfg, train_ds, dev, "mle")
    _finish_training(out, "train-mle", cfg, extra, report, sv, tv)
    return 0


def cmd_train_rl(args) -> int:
    cfg, extra = _experiment(args)
    _require(extra, "init_checkpoint")
    out = _out_dir(args)
    sv, tv = _vocabs(extra)
    train_ds, dev, _ = _datasets(extra, sv, tv)
    init = load_checkpoint(extra["init_checkpoint"])
    report = train(cfg, train_ds, dev, "rl", init=init)
    _finish_training(out, "train-rl", cfg, extra, report, sv, tv)
    return 0


def cmd_translate(args) -> int:
    model = load_checkpoint(args.model)
    sv, tv = Vocabulary.load(args.src_vocab), Vocabulary.load(args.tgt_vocab)
    max_len = args.max_len or model.config.max_decode_len
    lines = Path(args.input).read_text(encoding="utf-8").splitlines()
    outputs = []
    for line in lines:
        if not line.split():
            outputs.append("")
            continue
        src = tuple(sv.lookup(t) for t in line.split())
        outputs.append(tv.decode(beam_search(model, src, args.beam_width, max_len)[0].content))
    text = "".join(o + "\n" for o in outputs)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_evaluate(args) -> int:
    hyps = [line.split() for line in Path(args.hyp).read_text(encoding="utf-8").splitlines()]
    refs = [line.split() for line in Path(args.ref).read_text(encoding="utf-8").splitlines()]
    vocab = {}
    enc = lambda toks: [vocab.setdefault(t, len(vocab) + 4) for t in toks]  # noqa: E731
    print(f"{corpus_bleu([enc(h) for h in hyps], [enc(r) for r in refs]):.2f}")
    return 0


def _mono_args(args):
    model = load_checkpoint(args.model)
    sv, tv = Vocabulary.load(args.src_vocab), Vocabulary.load(args.tgt_vocab)
    return model, sv, tv


def cmd_pseudo_targets(args) -> int:
    model, sv, tv = _mono_args(args)
    mono = load_mono(args.input, sv, args.max_len or model.config.max_decode_len)
    ds = generate_pseudo_targets(model, mono, sv, tv, args.beam_width)
    paths = ds.save(args.output)
    print(f"{len(ds)} pseudo pairs -> {', '.join(map(str, paths))}")
    return 0


def cmd_back_translate(args) -> int:
    # the checkpoint translates target -> source; vocab flags name the forward direction
    model, sv, tv = _mono_args(args)
    mono = load_mono(args.input, tv, args.max_len or model.config.max_decode_len)
    ds = back_translate(model, mono, sv, tv, args.beam_width)
    paths = ds.save(args.output)
    print(f"{len(ds)} back-translated pairs -> {', '.join(map(str, paths))}")
    return 0


def _load_prefix(prefix: str, sv, tv, max_len: int) -> Dataset:
    origin = Path(prefix + ".origin")
    return load_parallel(prefix + ".src", prefix + ".tgt", sv, tv, max_len, origin if origin.exists() else None)


def cmd_unify(args) -> int:
    sv, tv = Vocabulary.load(args.src_vocab), Vocabulary.load(args.tgt_vocab)
    parts = [_load_prefix(p, sv, tv, args.max_len) for p in (args.bilingual, args.pseudo_src, args.pseudo_tgt)]
    ds = build_unified_dataset(*parts, seed=args.seed or 0)
    ds.save(args.output)
    counts = ds.origin_counts()
    print(" ".join(f"{o.value}={counts.get(o, 0)}" for o in sorted(counts, key=lambda o: o.value)))
    return 0


def cmd_verify(args) -> int:
    from .verification import SUITES, run_all

    names = args.suite or list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise ConfigError(unknown[0], f"unknown suite (choose from {', '.join(SUITES)})")
    results = run_all(names)
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} suites passed")
    return 0 if failed == 0 else 2


def cmd_sweep_alpha(args) -> int:
    cfg, extra = _experiment(args)
    out = _out_dir(args)
    sv, tv = _vocabs(extra)
    train_ds, dev, test = _datasets(extra, sv, tv)
    alphas = [float(a) for a in extra["alphas"].split(",")] if extra.get("alphas") else list(SWEEP_ALPHAS)
    if extra.get("init_checkpoint"):
        init = load_checkpoint(extra["init_checkpoint"])
    else:
        mle = train(cfg, train_ds, dev, "mle")
        init = mle.best_params
        save_checkpoint(init, out / "mle.ckpt")
    rows = []
    for a in alphas:
        acfg = TrainConfig(**{**cfg.__dict__, "alpha": a})
        rep = train(acfg, train_ds, dev, "rl", init=init)
        test_bleu = evaluate_bleu(rep.best_params, test, acfg.eval_beam_width) if test is not None else float("nan")
        rows.append((a, rep.best_bleu, test_bleu))
        rep.write_csv(out / f"metrics_alpha{a:g}.csv")
        log.info("alpha %.1f: dev %.2f test %.2f", a, rep.best_bleu, test_bleu)
    with open(out / "sweep_alpha.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["alpha", "dev_bleu", "test_bleu"])
        for a, d, t in rows:
            w.writerow([f"{a:g}", f"{d:.2f}", f"{t:.2f}"])
    plotting.plot_alpha_sweep([r[0] for r in rows], [r[1] for r in rows], [r[2] for r in rows], out / "sweep_alpha.png")
    (out / "resolved.cfg").write_text(format_config(cfg, extra), encoding="utf-8")
    write_manifest(out, "sweep-alpha", cfg, extra, _inputs(extra))
    sys.stdout.write((out / "sweep_alpha.csv").read_text(encoding="utf-8"))
    return 0


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value experiment config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None, help="cap on BLAS worker threads")
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seqrl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-vocab", help="build a vocabulary file from a corpus")
    _common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--max-size", type=int, default=None)
    p.set_defaults(func=cmd_make_vocab)

    p = sub.add_parser("toy-data", help="write a synthetic substitution/copy task")
    _common(p)
    p.add_argument("--symbols", type=int, default=10)
    p.add_argument("--max-len", type=int, default=8)
    p.add_argument("--copy", action="store_true", help="copy task instead of a substitution cipher")
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-dev", type=int, default=200)
    p.add_argument("--n-test", type=int, default=200)
    p.add_argument("--n-mono", type=int, default=0)
    p.set_defaults(func=cmd_toy_data)

    for name, func, help_ in (
        ("train-mle", cmd_train_mle, "maximum-likelihood training"),
        ("train-rl", cmd_train_rl, "RL fine-tuning on the mixed objective"),
        ("sweep-alpha", cmd_sweep_alpha, "RL runs over the MLE weight alpha"),
    ):
        p = sub.add_parser(name, help=help_)
        _common(p)
        p.add_argument("--manifest", help="re-run with the configuration recorded in a manifest")
        p.add_argument("--init", help="initial checkpoint (RL)")
        p.add_argument("--beam-all-k", action="store_true", help="use all K beam hypotheses for the RL term")
        p.set_defaults(func=func)

    p = sub.add_parser("translate", help="beam-search translation of a file")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--src-vocab", required=True)
    p.add_argument("--tgt-vocab", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output")
    p.add_argument("--beam-width", type=int, default=6)
    p.add_argument("--max-len", type=int, default=None)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("evaluate", help="corpus BLEU of a hypothesis file")
    _common(p)
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.set_defaults(func=cmd_evaluate)

    for name, func, help_ in (
        ("pseudo-targets", cmd_pseudo_targets, "pair source-side monolingual text with beam outputs"),
        ("back-translate", cmd_back_translate, "pair target-side monolingual text with back-translations"),
    ):
        p = sub.add_parser(name, help=help_)
        _common(p)
        p.add_argument("--model", required=True)
        p.add_argument("--src-vocab", required=True)
        p.add_argument("--tgt-vocab", required=True)
        p.add_argument("--input", required=True)
        p.add_argument("--output", required=True, help="output prefix (.src/.tgt/.origin)")
        p.add_argument("--beam-width", type=int, default=4)
        p.add_argument("--max-len", type=int, default=None)
        p.set_defaults(func=func)

    p = sub.add_parser("unify", help="pack bilingual and pseudo corpora into one shuffled corpus")
    _common(p)
    p.add_argument("--bilingual", required=True, help="prefix of .src/.tgt files")
    p.add_argument("--pseudo-src", required=True)
    p.add_argument("--pseudo-tgt", required=True)
    p.add_argument("--src-vocab", required=True)
    p.add_argument("--tgt-vocab", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--max-len", type=int, default=DEFAULT_MAX_LEN)
    p.set_defaults(func=cmd_unify)

    p = sub.add_parser("verify", help="run the brute-force oracle suites")
    _common(p)
    p.add_argument("--suite", action="append", help="run only this suite (repeatable)")
    p.set_defaults(func=cmd_verify)
    return parser


def _cap_threads(n: int | None) -> None:
    if not n:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return
    threadpool_limits(n)


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    _cap_threads(args.threads)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CorpusError, ModelError, OSError, RuntimeError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
