"""Command-line entry point: synth | train | eval | partial-eval | zeroshot | gradcheck.

Every artifact-producing run writes a manifest recording the command, the
effective configuration (config file merged with flag overrides), input and
output paths, output checksums, and wall-clock duration. Files are written
atomically (temp file + rename). Log verbosity comes from HSE_LOG_LEVEL
(error | info | debug).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

from .data import (
    SynthSpec,
    load_corpus,
    load_labels,
    load_checkpoint,
    save_checkpoint,
    save_corpus,
    save_labels,
    synth_generate,
)
from .errors import ConfigError, HseError
from .evaluation import evaluate_partial, evaluate_retrieval, zeroshot_classify
from .gradcheck import run_gradient_suite
from .losses import LossConfig
from .training import TrainConfig, train

log = logging.getLogger("hse.cli")

# keys accepted in a run-configuration file (key = value per line) and their
# matching flag names; flags override file values
CONFIG_KEYS = {
    "learning_rate": float,
    "decay_factor": float,
    "decay_every_epochs": int,
    "epochs": int,
    "batch_size": int,
    "seed": int,
    "hidden_low": int,
    "hidden_high": int,
    "model": str,
    "carry_low_state": lambda s: s.lower() in ("1", "true", "yes"),
    "alpha": float,
    "beta": float,
    "gamma": float,
    "eta": float,
    "beta_prime": float,
    "tau": float,
    "correspondence": str,
    "sign_mode": str,
}


def _setup_logging() -> None:
    level = os.environ.get("HSE_LOG_LEVEL", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise ConfigError(f"HSE_LOG_LEVEL must be one of {sorted(levels)}, got {level!r}")
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s")


def _parse_config_file(path: str) -> dict[str, object]:
    values: dict[str, object] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}: line {lineno}: expected 'key = value'")
            key, _, raw = line.partition("=")
            key = key.strip()
            raw = raw.strip()
            if key not in CONFIG_KEYS:
                raise ConfigError(f"{path}: line {lineno}: unknown key {key!r}")
            try:
                values[key] = CONFIG_KEYS[key](raw)
            except ValueError:
                raise ConfigError(f"{path}: line {lineno}: bad value for {key!r}") from None
    return values


def _merged_config(args) -> dict[str, object]:
    values: dict[str, object] = {}
    if getattr(args, "config", None):
        values.update(_parse_config_file(args.config))
    for key in CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return values


def _train_config(values: dict[str, object]) -> TrainConfig:
    loss_keys = {
        "alpha", "beta", "gamma", "eta", "beta_prime", "tau", "correspondence", "sign_mode",
    }
    loss = LossConfig(**{k: v for k, v in values.items() if k in loss_keys})
    rest = {k: v for k, v in values.items() if k not in loss_keys}
    config = TrainConfig(loss=loss, **rest)
    config.validate()
    return config


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(
    path: Path,
    command: str,
    config: dict[str, object],
    seed: int | None,
    inputs: list[str],
    outputs: list[Path],
    started: float,
) -> None:
    manifest = {
        "command": command,
        "config": {k: config[k] for k in sorted(config)},
        "seed": seed,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "checksums": {str(p): _sha256(p) for p in outputs},
        "duration_seconds": time.monotonic() - started,
    }
    _atomic_write_text(path, json.dumps(manifest, indent=2) + "\n")


def _echo_config(out_dir: Path, values: dict[str, object]) -> Path:
    lines = [f"{k} = {values[k]}" for k in sorted(values)]
    path = out_dir / "config.txt"
    _atomic_write_text(path, "\n".join(lines) + "\n")
    return path


def _parse_range(text: str) -> tuple[int, int]:
    if ":" in text:
        lo, hi = text.split(":", 1)
        return int(lo), int(hi)
    v = int(text)
    return v, v


def _parse_topk(text: str) -> tuple[int, ...]:
    return tuple(int(k) for k in text.split(","))


def _cmd_synth(args) -> int:
    spec = SynthSpec(
        num_pairs=args.pairs,
        num_events=args.events,
        clips_per_pair=_parse_range(args.clips),
        frames_per_clip=_parse_range(args.frames),
        words_per_sentence=_parse_range(args.words),
        d_v=args.dv,
        d_t=args.dt,
        noise_std=args.noise_std,
        seed=args.seed,
        correspondence=args.correspondence if args.correspondence != "none" else "strong",
    )
    started = time.monotonic()
    corpus, labels = synth_generate(spec)
    out = Path(args.out)
    save_corpus(corpus, out)
    labels_path = out.with_name(out.name + ".labels.json")
    save_labels(labels, labels_path)
    _write_manifest(
        out.with_name(out.name + ".manifest.json"),
        "synth",
        {k: getattr(args, k) for k in ("pairs", "events", "clips", "frames", "words", "dv", "dt", "noise_std", "correspondence")},
        args.seed,
        [],
        [out, labels_path],
        started,
    )
    print(f"wrote {len(corpus)} pairs to {out}")
    return 0


def _cmd_train(args) -> int:
    started = time.monotonic()
    values = _merged_config(args)
    config = _train_config(values)
    corpus = load_corpus(args.corpus)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = train(corpus, config)
    ckpt = out_dir / "checkpoint.bin"
    save_checkpoint(result.params, ckpt)
    log_lines = ["epoch match_high match_low cluster_high cluster_low reconstruct total"]
    for epoch, bd in enumerate(result.log):
        c = bd.components()
        log_lines.append(
            f"{epoch} {c['match_high']!r} {c['match_low']!r} {c['cluster_high']!r} "
            f"{c['cluster_low']!r} {c['reconstruct']!r} {c['total']!r}"
        )
    loss_log = out_dir / "loss_log.txt"
    _atomic_write_text(loss_log, "\n".join(log_lines) + "\n")
    config_echo = _echo_config(out_dir, values)
    _write_manifest(
        out_dir / "manifest.json",
        "train",
        values,
        config.seed,
        [args.corpus] + ([args.config] if args.config else []),
        [ckpt, loss_log, config_echo],
        started,
    )
    print(f"trained {config.epochs} epochs; final total loss {result.log[-1].total!r}")
    return 0


def _load_eval_inputs(args):
    params = load_checkpoint(args.checkpoint)
    corpus = load_corpus(args.corpus)
    return params, corpus


def _write_retrieval(out_dir: Path, name: str, reports) -> list[Path]:
    lines: list[str] = []
    summary = {}
    for report in reports:
        lines.extend(report.lines())
        summary[report.direction] = report.summary()
    text_path = out_dir / f"{name}.txt"
    json_path = out_dir / f"{name}.json"
    _atomic_write_text(text_path, "\n".join(lines) + "\n")
    _atomic_write_text(json_path, json.dumps(summary, indent=2) + "\n")
    return [text_path, json_path]


def _cmd_eval(args) -> int:
    started = time.monotonic()
    params, corpus = _load_eval_inputs(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = evaluate_retrieval(params, corpus, topk=_parse_topk(args.topk), mode=args.mode)
    outputs = _write_retrieval(out_dir, "retrieval", reports)
    for report in reports:
        for line in report.lines():
            print(line)
    _write_manifest(
        out_dir / "manifest.json",
        "eval",
        {"topk": args.topk, "mode": args.mode},
        None,
        [args.checkpoint, args.corpus],
        outputs,
        started,
    )
    return 0


def _cmd_partial_eval(args) -> int:
    started = time.monotonic()
    params, corpus = _load_eval_inputs(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = evaluate_partial(
        params, corpus, args.max_units, topk=_parse_topk(args.topk), mode=args.mode
    )
    outputs = _write_retrieval(out_dir, f"retrieval_partial_{args.max_units}", reports)
    for report in reports:
        for line in report.lines():
            print(line)
    _write_manifest(
        out_dir / "manifest.json",
        "partial-eval",
        {"topk": args.topk, "mode": args.mode, "max_units": args.max_units},
        None,
        [args.checkpoint, args.corpus],
        outputs,
        started,
    )
    return 0


def _cmd_zeroshot(args) -> int:
    started = time.monotonic()
    params, corpus = _load_eval_inputs(args)
    labels_path = args.labels or args.corpus + ".labels.json"
    labels = load_labels(labels_path)
    labeled_clips = []
    for video, _ in corpus.pairs:
        clip_labels = labels.clip_labels.get(video.id)
        if clip_labels is None or len(clip_labels) != video.n:
            raise ConfigError(f"labels file does not cover pair {video.id!r}")
        labeled_clips.extend(zip(video.clips, clip_labels))
    report = zeroshot_classify(params, labeled_clips, labels.label_phrases)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    text_path = out_dir / "zeroshot.txt"
    json_path = out_dir / "zeroshot.json"
    _atomic_write_text(text_path, "\n".join(report.lines()) + "\n")
    _atomic_write_text(json_path, json.dumps(report.summary(), indent=2) + "\n")
    for line in report.lines():
        print(line)
    _write_manifest(
        out_dir / "manifest.json",
        "zeroshot",
        {},
        None,
        [args.checkpoint, args.corpus, str(labels_path)],
        [text_path, json_path],
        started,
    )
    return 0


def _cmd_gradcheck(args) -> int:
    started = time.monotonic()
    results = run_gradient_suite(seed=args.seed, trials_per_component=args.trials)
    lines = []
    for r in results:
        lines.append(
            f"{r.component}: max_rel_err={r.max_rel_err:.3e} trials={r.trials} "
            f"coords={r.n_checked} kinks_skipped={r.n_skipped_nondifferentiable}"
        )
        print(lines[-1])
    ok = all(r.passed for r in results)
    print(f"gradient suite {'PASSED' if ok else 'FAILED'} (tolerance 1e-4)")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        report_path = out_dir / "gradcheck.txt"
        _atomic_write_text(report_path, "\n".join(lines) + "\n")
        _write_manifest(
            out_dir / "manifest.json",
            "gradcheck",
            {"trials": args.trials},
            args.seed,
            [],
            [report_path],
            started,
        )
    return 0 if ok else 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hse",
        description="Hierarchical sequence embedding: train and evaluate "
        "cross-modal video/paragraph models on line-delimited corpora.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus file")
    p.add_argument("--pairs", type=int, default=32)
    p.add_argument("--events", type=int, default=4)
    p.add_argument("--clips", default="3", help="count or LO:HI range")
    p.add_argument("--frames", default="4", help="count or LO:HI range")
    p.add_argument("--words", default="4", help="count or LO:HI range")
    p.add_argument("--dv", type=int, default=16)
    p.add_argument("--dt", type=int, default=16)
    p.add_argument("--noise-std", dest="noise_std", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--correspondence", choices=["strong", "weak"], default="strong")
    p.add_argument("--out", required=True, help="output corpus path (.jsonl)")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--decay-factor", dest="decay_factor", type=float)
    p.add_argument("--decay-every-epochs", dest="decay_every_epochs", type=int)
    p.add_argument("--hidden-low", dest="hidden_low", type=int)
    p.add_argument("--hidden-high", dest="hidden_high", type=int)
    p.add_argument("--model", choices=["hse", "fse"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--beta-prime", dest="beta_prime", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--sign-mode", dest="sign_mode", choices=["corrected", "literal"])
    p.add_argument("--correspondence", choices=["strong", "weak", "none"])
    p.set_defaults(func=_cmd_train)

    for name, func in (("eval", _cmd_eval), ("partial-eval", _cmd_partial_eval)):
        p = sub.add_parser(name, help=f"run {name} on a checkpoint and corpus")
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--corpus", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--topk", default="1,5,50", help="comma-separated k values")
        p.add_argument("--mode", choices=["hierarchical", "flat"], default="hierarchical")
        if name == "partial-eval":
            p.add_argument("--max-units", dest="max_units", type=int, required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("zeroshot", help="nearest-label transfer over clip embeddings")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--labels", help="labels sidecar (default: <corpus>.labels.json)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_zeroshot)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=4)
    p.add_argument("--out", help="optional output directory for the report")
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def cli_dispatch(argv) -> int:
    """Parse argv and run one subcommand; returns the process exit code."""
    try:
        _setup_logging()
        parser = _build_parser()
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # argparse exits 2 on usage errors
            return int(exc.code or 0)
        return args.func(args)
    except HseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> int:
    return cli_dispatch(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
