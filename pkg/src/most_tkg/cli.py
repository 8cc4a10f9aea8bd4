"""Command-line entry point: build-dataset, train, evaluate, ablate, gradcheck, stats.

Exit status is 0 on success, 1 on runtime errors and 2 on usage errors.
Every command that writes an output directory also writes
``resolved_config.json`` there, holding the fully resolved settings and the
SHA-256 of every input file.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import fields

from . import __version__
from .core import EXTRAPOLATION, MODES, STRATEGIES, ingest_raw
from .dataset import PRESETS, build_dataset, emit_dataset, frequency_report, load_dataset, split_time_spans
from .diagnostics import TINY, gradient_check
from .evaluator import evaluate
from .model import ABLATIONS, HyperConfig, load_checkpoint
from .trainer import make_model, train

log = logging.getLogger("most_tkg")

GRADCHECK_TOLERANCE = 1e-4
DATASET_KEYS = ("mode", "lower", "upper", "min_count", "seed", "ratios")


class UsageError(Exception):
    pass


# --------------------------------------------------------------- config file


def _parse_value(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null", ""):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            key = key.replace("-", "_")
            if key in ("ablations", "ablate", "ratios"):
                items = [v.strip() for v in value.split(",") if v.strip()]
                out["ablations" if key != "ratios" else "ratios"] = (
                    [float(v) for v in items] if key == "ratios" else items)
            else:
                out[key] = _parse_value(value)
    return out


def _ablation_list(text: str) -> list[str]:
    flags = [f.strip().lower() for f in text.split(",") if f.strip() and f.strip().lower() != "none"]
    bad = [f for f in flags if f not in ABLATIONS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown ablation flag(s) {bad}; choose from {list(ABLATIONS)}")
    return flags


HYPER_FLAGS = {
    "d": int, "dt": int, "layers": int, "activation": str, "dropout": float, "k": int,
    "strategy": str, "variant": str, "batch": int, "episodes": int, "lr": float,
    "eval_interval": int,
}


def resolve_hyper(args, base: dict | None = None) -> dict:
    """Defaults <- preset base <- config file <- explicit flags."""
    known = {f.name for f in fields(HyperConfig)} - {"literal_loss"}
    raw = dict(base or {})
    file_values = read_config_file(args.config) if getattr(args, "config", None) else {}
    for key, value in file_values.items():
        if key in DATASET_KEYS and key != "seed":
            continue
        if key not in known:
            raise UsageError(f"unknown config key {key!r}")
        raw[key] = value
    for key in HYPER_FLAGS:
        value = getattr(args, key, None)
        if value is not None:
            raw[key] = value
    if getattr(args, "ablate", None) is not None:
        raw["ablations"] = args.ablate
    return raw


def make_config(raw: dict, seed: int | None = None, warn: bool = True) -> HyperConfig:
    raw = dict(raw)
    if seed is not None:
        raw["seed"] = seed
    try:
        config = HyperConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    off = config.off_grid()
    if off and warn:
        log.warning("settings outside the reference search grid: %s", ", ".join(off))
    return config


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _input_digests(paths) -> dict:
    out = {}
    for path in paths:
        if os.path.isdir(path):
            for name in sorted(os.listdir(path)):
                full = os.path.join(path, name)
                if os.path.isfile(full) and name != "resolved_config.json":
                    out[os.path.join(os.path.abspath(path), name)] = _sha256(full)
        elif os.path.isfile(path):
            out[os.path.abspath(path)] = _sha256(path)
    return out


def write_resolved(directory, command: str, settings: dict, inputs=()) -> None:
    os.makedirs(directory, exist_ok=True)
    doc = {"command": command, "version": __version__, "settings": settings, "inputs": _input_digests(inputs)}
    with open(os.path.join(directory, "resolved_config.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)


# ------------------------------------------------------------------ commands


def _single_seed(args, default: int = 0) -> int:
    if args.seed is None:
        return default
    if len(args.seed) != 1:
        raise UsageError(f"{args.command} takes a single --seed")
    return args.seed[0]


def cmd_build_dataset(args) -> int:
    file_values = read_config_file(args.config) if args.config else {}
    unknown = set(file_values) - set(DATASET_KEYS)
    if unknown:
        raise UsageError(f"unknown config key(s) {sorted(unknown)} for build-dataset")
    mode = args.mode or file_values.get("mode", "interpolation")
    if mode not in MODES:
        raise UsageError(f"mode must be one of {MODES}")
    settings = {"mode": mode, "lower": None, "upper": None, "min_count": None, "seed": 0,
                "ratios": [0.8, 0.1, 0.1]}
    if args.preset:
        lower, upper, min_count = PRESETS[(args.preset, mode)]
        settings.update(lower=lower, upper=upper, min_count=min_count)
    settings.update({k: v for k, v in file_values.items() if k != "mode"})
    for key in ("lower", "upper", "min_count"):
        if getattr(args, key) is not None:
            settings[key] = getattr(args, key)
    if args.seed is not None:
        settings["seed"] = _single_seed(args)
    if settings["lower"] is None or settings["upper"] is None:
        raise UsageError("--lower and --upper (or --preset) are required")
    if settings["min_count"] is None:
        settings["min_count"] = settings["lower"]

    quads, vocab = ingest_raw(args.raw)
    ds = build_dataset(quads, settings["mode"], settings["lower"], settings["upper"], settings["min_count"],
                       tuple(settings["ratios"]), settings["seed"], vocab=vocab)
    emit_dataset(ds, args.out)
    write_resolved(args.out, "build-dataset", settings, [args.raw])
    print(f"entities {ds.num_entities}  relations {ds.num_relations}  timestamps {ds.num_timestamps}  "
          f"tasks {len(ds.train)}/{len(ds.valid)}/{len(ds.test)}")
    return 0


def cmd_train(args) -> int:
    ds = load_dataset(args.dataset)
    raw = resolve_hyper(args)
    seeds = args.seed or [raw.get("seed", 0)]
    results = []
    for seed in seeds:
        config = make_config(raw, seed)
        run_dir = args.out if len(seeds) == 1 else os.path.join(args.out, f"seed{seed}")
        write_resolved(run_dir, "train", config.to_dict(), [args.dataset])
        result = train(ds, config, run_dir)
        results.append({"seed": seed, "best_valid_mrr": result.best_valid_mrr, "run_dir": run_dir})
        print(f"seed {seed}: best valid MRR {result.best_valid_mrr:.4f} -> {run_dir}")
    if len(seeds) > 1:
        with open(os.path.join(args.out, "runs.json"), "w", encoding="utf-8") as fh:
            json.dump(results, fh, indent=2)
    return 0


def cmd_evaluate(args) -> int:
    ds = load_dataset(args.dataset)
    params, config, _ = load_checkpoint(args.checkpoint, ds)
    if args.ablate is not None:
        config = make_config({**config.to_dict(), "ablations": args.ablate})
    report = evaluate(ds, make_model(ds, params, config), args.split)
    names = None
    if ds.vocab is not None:
        names = dict(enumerate(ds.vocab.relations))
    print(report.table(names))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        report.save(os.path.join(args.out, "report.json"))
        write_resolved(args.out, "evaluate", {"split": args.split, "config": config.to_dict()},
                       [args.dataset, args.checkpoint])
    return 0


def cmd_ablate(args) -> int:
    ds = load_dataset(args.dataset)
    raw = resolve_hyper(args)
    raw.pop("ablations", None)
    combos = args.combo or [[]] + [[flag] for flag in ABLATIONS]
    seed = _single_seed(args, raw.get("seed", 0))
    summary = {}
    for combo in combos:
        name = "+".join(combo) or "full"
        config = make_config({**raw, "ablations": combo}, seed)
        run_dir = os.path.join(args.out, name)
        write_resolved(run_dir, "ablate", config.to_dict(), [args.dataset])
        result = train(ds, config, run_dir)
        report = evaluate(ds, make_model(ds, result.best, config), args.split)
        report.save(os.path.join(run_dir, "report.json"))
        summary[name] = report.mrr
        print(f"{name:<16} MRR {report.mrr:.4f}")
    with open(os.path.join(args.out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    return 0


def cmd_gradcheck(args) -> int:
    raw = dict(TINY)
    raw.update(resolve_hyper(args, raw))
    config = make_config(raw, _single_seed(args), warn=False)
    errors = gradient_check(config, seed=config.seed, epsilon=args.epsilon)
    for name, err in errors.items():
        print(f"{name:<10} {err:.3e}")
    worst = max(errors.values())
    print(f"max relative error {worst:.3e}")
    if args.out:
        write_resolved(args.out, "gradcheck", {"config": config.to_dict(), "epsilon": args.epsilon})
        with open(os.path.join(args.out, "gradcheck.json"), "w", encoding="utf-8") as fh:
            json.dump(errors, fh, indent=2)
    return 0 if worst < GRADCHECK_TOLERANCE else 1


def cmd_stats(args) -> int:
    if os.path.isdir(args.path):
        ds = load_dataset(args.path)
        print(f"mode {ds.mode}  entities {ds.num_entities}  relations {ds.num_relations}  "
              f"timestamps {ds.num_timestamps}  background {len(ds.background)}")
        spans = split_time_spans(ds)
        for name in ("train", "valid", "test"):
            tasks = ds.split(name)
            lo, hi = spans[name]
            print(f"{name:<6} tasks {len(tasks):>4}  quadruples {sum(len(t) for t in tasks):>7}  time span [{lo}, {hi}]")
        if ds.mode == EXTRAPOLATION:
            ordered = [spans[n] for n in ("train", "valid", "test")]
            disjoint = all(a[1] < b[0] for a, b in zip(ordered, ordered[1:]))
            print(f"split time spans {'disjoint' if disjoint else 'OVERLAPPING'}")
        all_quads = ds.all_quads()
        print(frequency_report(all_quads, ds.vocab, ds.lower, ds.upper))
    else:
        quads, vocab = ingest_raw(args.path)
        print(frequency_report(quads, vocab, args.lower, args.upper))
    return 0


# -------------------------------------------------------------------- parser


def _add_hyper_flags(p) -> None:
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--d", type=int)
    p.add_argument("--dt", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--activation", choices=("tanh", "relu", "leaky-relu", "identity"))
    p.add_argument("--dropout", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--variant", choices=("ta", "td"))
    p.add_argument("--batch", type=int)
    p.add_argument("--episodes", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--eval-interval", dest="eval_interval", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="most", description="One-shot temporal knowledge graph completion.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-dataset", help="build a meta-learning dataset from a raw quadruple dump")
    p.add_argument("raw")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=MODES, help="default: interpolation")
    p.add_argument("--preset", choices=("icews", "gdelt"))
    p.add_argument("--lower", type=int)
    p.add_argument("--upper", type=int)
    p.add_argument("--min-count", dest="min_count", type=int)
    p.add_argument("--seed", type=int, nargs="+")
    p.add_argument("--config")

    p = sub.add_parser("train", help="episodic training with validation-based selection")
    p.add_argument("dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, nargs="+", help="one run per seed")
    p.add_argument("--ablate", type=_ablation_list)
    _add_hyper_flags(p)

    p = sub.add_parser("evaluate", help="filtered link-prediction metrics for a checkpoint")
    p.add_argument("dataset")
    p.add_argument("checkpoint")
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p.add_argument("--ablate", type=_ablation_list, help="override the checkpoint's ablation flags")
    p.add_argument("--out")

    p = sub.add_parser("ablate", help="train and evaluate one model per ablation combination")
    p.add_argument("dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--ablate", dest="combo", type=_ablation_list, action="append",
                   help="one combination per use, e.g. --ablate b2 --ablate b2,c2 (default: full plus each flag)")
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p.add_argument("--seed", type=int, nargs="+")
    _add_hyper_flags(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of the loss gradient")
    p.add_argument("--seed", type=int, nargs="+")
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--ablate", type=_ablation_list)
    p.add_argument("--out")
    _add_hyper_flags(p)

    p = sub.add_parser("stats", help="relation frequencies of a raw dump, or split summary of a dataset")
    p.add_argument("path")
    p.add_argument("--lower", type=int)
    p.add_argument("--upper", type=int)
    return parser


COMMANDS = {
    "build-dataset": cmd_build_dataset,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
    "stats": cmd_stats,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
