"""``babylab`` command line.

Exit status: 0 success, 2 bad configuration or input, 3 scorer or protocol
failure, 4 file-system error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import torch

from . import __version__
from .corpus import WORDS_PER_YEAR, CorpusManifest, build_stream, validate_budget
from .external import HTTPScorer, SubprocessScorer
from .model import ModelConfig, ModelConfigError, build_model, decoder_preset, encoder_preset
from .report import RunManifest, build_report, compare, load_report, now, render_comparison, \
    atomic_write, write_report
from .scorers import ModelScorer
from .scoring import load_norms, score_tests
from .tasks import DEFAULT_BEAMS, ScorerUnavailable, load_benchmark, run_benchmark
from .tokenizer import TokenizerModel, train_tokenizer
from .trainer import TrainingConfig, train

EXIT_OK, EXIT_CONFIG, EXIT_SCORER, EXIT_IO = 0, 2, 3, 4
WORKERS_ENV = "BABYLAB_WORKERS"


class ConfigError(ValueError):
    pass


def _read_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None


def _default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV}={raw!r} is not an integer") from None
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1")
    return n


# tokenize / budget ---------------------------------------------------------------------


def cmd_tokenize(args) -> int:
    manifest = CorpusManifest.load(args.corpus)
    tok = train_tokenizer(manifest.read_lines(), args.vocab_size)
    atomic_write(args.out, json.dumps(tok.to_dict(), ensure_ascii=False) + "\n")
    print(f"wrote {args.out} ({tok.vocab_size} tokens, {len(tok.merges)} merges)")
    return EXIT_OK


def cmd_budget(args) -> int:
    manifest = CorpusManifest.load(args.corpus)
    rep = validate_budget(manifest, workers=args.workers or _default_workers())
    if args.json:
        print(json.dumps(rep.to_dict(), indent=1, sort_keys=True))
    else:
        print(f"words: {rep.total_words}  simulated age: {rep.simulated_age_years:.3f} years "
              f"({manifest.epochs} epochs)")
        for cat, n in rep.per_category.items():
            print(f"  {cat:<24} {n}")
        for flag in rep.flags:
            print(f"flag: {flag}")
        for path, err in rep.errors.items():
            print(f"error: {path}: {err}", file=sys.stderr)
    return EXIT_IO if rep.errors else EXIT_OK


# train ---------------------------------------------------------------------------------


def load_model_config(path, vocab_size: int) -> ModelConfig:
    data = dict(_read_json(path))
    preset = data.pop("preset", None)
    data.setdefault("vocab_size", vocab_size)
    if data["vocab_size"] != vocab_size:
        raise ModelConfigError(f"vocab_size: config says {data['vocab_size']}, tokenizer has {vocab_size}")
    if preset == "decoder":
        return decoder_preset(**data)
    if preset == "encoder":
        return encoder_preset(**data)
    if preset is not None:
        raise ModelConfigError(f"preset: unknown preset {preset!r}")
    return ModelConfig.from_dict(data)


def cmd_train(args) -> int:
    tok = TokenizerModel.load(args.tokenizer)
    config = load_model_config(args.config, tok.vocab_size)
    tcfg = TrainingConfig.load(args.training) if args.training else TrainingConfig.restricted_preset()
    if args.seed is not None:
        tcfg = TrainingConfig.from_dict({**tcfg.to_dict(), "seed": args.seed})
    manifest = CorpusManifest.load(args.corpus)
    block = args.block_length or config.max_length
    stream = build_stream(manifest, tok, block, seed=tcfg.seed, max_length=config.max_length)
    model = build_model(config, seed=tcfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = now()

    def progress(entry):
        if args.verbose:
            print(f"step {entry['step']} epoch {entry['epoch']} lr {entry['lr']:.3g} loss {entry['loss']:.4f}")

    _, log = train(model, stream, tcfg, checkpoint_dir=out, progress=progress,
                   metadata={"tokenizer": tok.to_dict(), "block_length": block})
    log.save(out / "training_log.json")
    run = RunManifest(
        command="train", seed=tcfg.seed,
        configs={"model": str(args.config), "training": str(args.training) if args.training else None},
        artifacts={"corpus": str(args.corpus), "tokenizer": str(args.tokenizer), "out": str(out)},
        options={"block_length": block, "model_config": config.to_dict(), "training_config": tcfg.to_dict()},
        started=started, finished=now(),
    )
    atomic_write(out / "run_manifest.json", json.dumps(run.to_dict(), indent=1, sort_keys=True) + "\n")
    last = log.epochs[-1]
    print(f"stop_reason={log.stop_reason} epochs={len(log.epochs)} eval_loss={last['eval_loss']:.4f} "
          f"best_epoch={log.best_epoch} -> {out}")
    return EXIT_OK


# eval ----------------------------------------------------------------------------------


def open_scorer(locator: str, tokenizer_path: str | None = None):
    """``http(s)://...`` for HTTP, ``cmd:COMMAND`` for a child process, else a checkpoint path."""
    if locator.startswith(("http://", "https://")):
        return HTTPScorer(locator), "http"
    if locator.startswith("cmd:"):
        return SubprocessScorer(locator[4:]), "subprocess"
    path = locator[5:] if locator.startswith("ckpt:") else locator
    tok = TokenizerModel.load(tokenizer_path) if tokenizer_path else None
    return ModelScorer.from_checkpoint(path, tok), "checkpoint"


def resolve_training_words(args, scorer) -> tuple[int | None, str | None, int]:
    """(words, where the number came from, words per year)."""
    wpy = WORDS_PER_YEAR
    manifest = CorpusManifest.load(args.corpus) if args.corpus else None
    if manifest is not None:
        wpy = manifest.words_per_year
    if args.model_words is not None:
        return args.model_words, "flag", wpy
    if manifest is not None:
        per_epoch = manifest.declared_total
        source = "manifest_declared"
        if per_epoch == 0:
            per_epoch = validate_budget(manifest).total_words
            source = "manifest_counted"
        return per_epoch * manifest.epochs, source, wpy
    words = getattr(scorer, "training_words", None)
    return words, ("scorer" if words is not None else None), wpy


def cmd_eval(args) -> int:
    items = load_benchmark(args.benchmark)
    norms = load_norms(args.norms) if args.norms else {}
    overrides = _read_json(args.overrides) if args.overrides else None
    workers = args.workers or _default_workers()
    if args.seed is not None:
        torch.manual_seed(args.seed)
    started = now()
    scorer, kind = open_scorer(args.scorer, args.tokenizer)
    try:
        words, words_source, wpy = resolve_training_words(args, scorer)
        result = run_benchmark(scorer, items, workers=workers, beams=args.beams, overrides=overrides)
    finally:
        close = getattr(scorer, "close", None)
        if close:
            close()
    scores = score_tests(result.results, norms, words, wpy)
    run = RunManifest(
        command="eval", seed=args.seed,
        configs={"overrides": args.overrides, "corpus": args.corpus},
        artifacts={"scorer": args.scorer, "benchmark": str(args.benchmark), "norms": args.norms,
                   "tokenizer": args.tokenizer},
        options={"beams": args.beams, "workers": workers, "model_words": args.model_words},
        started=started, finished=now(),
    )
    info = {"name": scorer.name, "kind": kind, "capabilities": sorted(scorer.capabilities),
            "training_words": words, "training_words_source": words_source, "words_per_year": wpy}
    report = build_report(result, scores, run, info, canonical=args.canonical)
    paths = write_report(report, args.out)
    print(f"{len(result.results)} items, {len(result.errored)} errored -> {', '.join(map(str, paths))}")
    return EXIT_OK


# report --------------------------------------------------------------------------------


def cmd_report(args) -> int:
    reports = [load_report(p) for p in args.reports]
    labels = args.labels.split(",") if args.labels else [Path(p).stem for p in args.reports]
    if len(labels) != len(reports):
        raise ConfigError(f"--labels has {len(labels)} names for {len(reports)} reports")
    header, rows = compare(reports, labels)
    sys.stdout.write(render_comparison(header, rows))
    if args.out:
        atomic_write(args.out, render_comparison(header, rows, "csv"))
    return EXIT_OK


# entry point ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="babylab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"babylab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tokenize", help="train a byte-level BPE tokenizer on a corpus")
    p.add_argument("--corpus", required=True, help="corpus manifest (JSON)")
    p.add_argument("--vocab-size", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("budget", help="count corpus words against the manifest")
    p.add_argument("--corpus", required=True)
    p.add_argument("--workers", type=int)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_budget)

    p = sub.add_parser("train", help="train a model; writes checkpoints and a training log")
    p.add_argument("--config", required=True, help="model config JSON (may name a preset)")
    p.add_argument("--training", help="training config JSON; default is the 2-epoch preset")
    p.add_argument("--corpus", required=True)
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--block-length", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run the benchmark against a scorer")
    p.add_argument("--scorer", required=True,
                   help="checkpoint path, cmd:COMMAND (line-JSON over stdio) or http(s):// URL")
    p.add_argument("--benchmark", required=True)
    p.add_argument("--norms")
    p.add_argument("--out", required=True, help="output prefix; writes .json, .csv and .txt")
    p.add_argument("--tokenizer", help="tokenizer file when the checkpoint carries none")
    p.add_argument("--corpus", help="manifest whose declared words x epochs give the model age")
    p.add_argument("--model-words", type=int, help="training words for the model age")
    p.add_argument("--overrides", help="JSON of manual strict/loose verdicts keyed by item id")
    p.add_argument("--beams", type=int, default=DEFAULT_BEAMS)
    p.add_argument("--workers", type=int, help=f"parallel items (default ${WORKERS_ENV} or 1)")
    p.add_argument("--seed", type=int)
    p.add_argument("--canonical", action="store_true", help="omit timestamps for byte-stable output")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="compare per-task accuracy across reports")
    p.add_argument("reports", nargs="+")
    p.add_argument("--labels", help="comma-separated column names")
    p.add_argument("--out", help="also write the table as CSV")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScorerUnavailable as exc:
        print(f"babylab: scorer failure: {exc}", file=sys.stderr)
        return EXIT_SCORER
    except OSError as exc:
        where = f" ({exc.filename})" if getattr(exc, "filename", None) else ""
        print(f"babylab: I/O error{where}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # every config, manifest, item and norm-table error is a ValueError
        print(f"babylab: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
