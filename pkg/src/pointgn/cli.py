"""Command-line harness.

Settings resolve in order: built-in defaults, the encoder settings stored in
a bank (commands that read one), a ``key=value`` file passed with
``--config``, then explicit flags.  Exit codes: 0 success, 1 evaluation
failure, 2 ingestion or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .classifier import (
    DEFAULT_GAMMA,
    GAMMA_CANDIDATES,
    classify,
    load_bank,
    loo_accuracies,
    save_bank,
    select_gamma_loo,
)
from .datasets import (
    MODELNET40_HINT,
    SCANOBJECTNN_HINT,
    SCANOBJECTNN_SPLITS,
    LabeledDataset,
    load_modelnet40,
    load_scanobjectnn,
    load_xyz_text,
)
from .encoder import AGG_MODES, STD_MODES, EncoderConfig, encode
from .errors import IngestionError, InvalidArgumentError, PointGNError
from .harness import (
    build_dataset_bank,
    check_fingerprint,
    evaluate,
    run_bench,
    run_fewshot,
    run_sweep,
)
from .reports import SWEEP_AXES
from .synthetic import make_synthetic_splits

log = logging.getLogger("pointgn")

EXIT_OK, EXIT_EVAL, EXIT_CONFIG = 0, 1, 2

DEFAULTS = {
    "dataset": "modelnet40",
    "split": "PB-T50-RS",
    "points": 1024,
    "sample": "first-n",
    "seed": 0,
    "refs_per_axis": 9,
    "sigma": 0.35,
    "k": 120,
    "stages": 4,
    "agg_mode": "paper-literal",
    "normalize_input": True,
    "clamp_k": False,
    "group_std_mode": "pooled",
    "gamma": str(DEFAULT_GAMMA),
    "threads": 1,
    "synthetic_per_class": 20,
}
SCANOBJECTNN_SIGMA = 0.3
ENCODER_KEYS = ("refs_per_axis", "sigma", "k", "stages", "agg_mode", "normalize_input", "clamp_k", "group_std_mode")

_INT_KEYS = {"points", "seed", "refs_per_axis", "k", "stages", "threads", "limit", "synthetic_per_class"}
_FLOAT_KEYS = {"sigma"}
_BOOL_KEYS = {"normalize_input", "clamp_k", "force"}


def _coerce(key: str, value: str):
    if key in _INT_KEYS:
        return int(value)
    if key in _FLOAT_KEYS:
        return float(value)
    if key in _BOOL_KEYS:
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise InvalidArgumentError(f"{key}: expected a boolean, got {value!r}")
    return value


def read_config_file(path: str) -> dict:
    """Parse ``key=value`` lines; keys may use dashes or underscores."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        key, sep, value = s.partition("=")
        if not sep:
            raise InvalidArgumentError(f"{path}:{lineno}: expected key=value")
        key = key.strip().lstrip("-").replace("-", "_")
        out[key] = _coerce(key, value.strip())
    return out


def resolve(args: argparse.Namespace, bank_config: Optional[dict] = None) -> dict:
    settings = dict(DEFAULTS)
    if bank_config:
        settings.update({k: bank_config[k] for k in ENCODER_KEYS if k in bank_config})
    file_settings = read_config_file(args.config) if getattr(args, "config", None) else {}
    settings.update(file_settings)
    explicit = {k: v for k, v in vars(args).items() if v is not None and k not in ("func", "config")}
    settings.update(explicit)
    sigma_given = "sigma" in explicit or "sigma" in file_settings or bool(bank_config)
    if settings.get("dataset") == "scanobjectnn" and not sigma_given:
        settings["sigma"] = SCANOBJECTNN_SIGMA
    return settings


def encoder_config(settings: dict) -> EncoderConfig:
    return EncoderConfig(**{k: settings[k] for k in ENCODER_KEYS})


def parse_gamma(value: str) -> Optional[float]:
    """A positive float, or None for ``auto`` (leave-one-out selection)."""
    if str(value).lower() == "auto":
        return None
    g = float(value)
    if not g > 0:
        raise InvalidArgumentError(f"gamma must be positive; got {value}")
    return g


def _float_list(text: str) -> list[float]:
    items = [t for t in text.split(",") if t.strip()]
    return [float(t) for t in items]


def load_splits(settings: dict) -> tuple[LabeledDataset, LabeledDataset]:
    kind = settings["dataset"]
    n = settings["points"]
    if kind == "synthetic":
        per = settings["synthetic_per_class"]
        train, test = make_synthetic_splits(per, per, n, settings["seed"])
    else:
        directory = settings.get("dataset_dir")
        if not directory:
            hint = MODELNET40_HINT if kind == "modelnet40" else SCANOBJECTNN_HINT
            raise IngestionError(f"--dataset-dir is required for {kind}. {hint}")
        if kind == "modelnet40":
            train, test = load_modelnet40(directory, min_points=n)
        else:
            train, test = load_scanobjectnn(directory, settings["split"], min_points=n)
    train = train.resample(n, settings["sample"], settings["seed"])
    test = test.resample(n, settings["sample"], settings["seed"] + 1)
    return train, test


def _out_dir(settings: dict) -> Optional[Path]:
    return Path(settings["out"]) if settings.get("out") else None


def _pick_gamma(settings: dict, bank) -> float:
    gamma = parse_gamma(settings["gamma"])
    if gamma is None:
        gamma, acc = select_gamma_loo(bank, GAMMA_CANDIDATES)
        print(f"gamma selected by leave-one-out: {gamma:g} (LOO accuracy {100 * acc:.2f}%)")
    return gamma


def cmd_build_bank(args: argparse.Namespace) -> int:
    settings = resolve(args)
    if not settings.get("out"):
        raise InvalidArgumentError("build-bank needs --out PATH for the bank file")
    cfg = encoder_config(settings)
    train, _ = load_splits(settings)
    train = train.limit(settings.get("limit"))
    t0 = time.perf_counter()
    bank = build_dataset_bank(train, cfg, settings["threads"])
    wall = time.perf_counter() - t0
    save_bank(bank, settings["out"])
    print(f"bank written to {settings['out']}")
    print(f"M={bank.size} C={bank.num_classes} dim={bank.dim} fingerprint={bank.fingerprint}")
    print(f"wall time {wall:.2f} s ({bank.size / wall:.1f} clouds/s)")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    bank = load_bank(args.bank)
    settings = resolve(args, bank.config)
    cfg = encoder_config(settings)
    check_fingerprint(bank, cfg, settings.get("force", False))
    _, test = load_splits(settings)
    test = test.limit(settings.get("limit"))
    if test.num_classes != bank.num_classes:
        raise InvalidArgumentError(f"test split has {test.num_classes} classes, bank has {bank.num_classes}")
    gamma = _pick_gamma(settings, bank)
    report = evaluate(bank, test, cfg, gamma, settings["threads"], config_echo=_echo(settings))
    print(report.to_text())
    if (out := _out_dir(settings)) is not None:
        report.write(out)
    return EXIT_OK


def cmd_classify(args: argparse.Namespace) -> int:
    bank = load_bank(args.bank)
    settings = resolve(args, bank.config)
    cfg = encoder_config(settings)
    check_fingerprint(bank, cfg, settings.get("force", False))
    cloud = load_xyz_text(args.input)
    gamma = _pick_gamma(settings, bank)
    result = classify(encode(cloud, cfg), bank, gamma, fingerprint=cfg.fingerprint())
    if result.warning:
        log.warning(result.warning)
    top = np.argsort(-result.probabilities, kind="stable")[:5]
    print(f"predicted {result.predicted_class} ({bank.class_names[result.predicted_class]})")
    print(f"top similarity {result.top_similarity:.6f}")
    for c in top:
        print(f"  {bank.class_names[c]:<16} p={result.probabilities[c]:.4f} logit={result.logits[c]:.6g}")
    return EXIT_OK


def cmd_fewshot(args: argparse.Namespace) -> int:
    settings = resolve(args)
    cfg = encoder_config(settings)
    train, test = load_splits(settings)
    dataset = train if settings["episode_split"] == "train" else test
    gamma = parse_gamma(settings["gamma"])
    if gamma is None:
        raise InvalidArgumentError("fewshot needs a numeric --gamma")
    report = run_fewshot(
        dataset, cfg, settings["way"], settings["shot"], settings["queries"], settings["runs"],
        settings["seed"], gamma, settings["threads"], config_echo=_echo(settings),
    )
    print(report.to_text())
    if (out := _out_dir(settings)) is not None:
        report.write(out)
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    if args.dataset is None and not args.dataset_dir:
        args.dataset = "synthetic"
    settings = resolve(args)
    cfg = encoder_config(settings)
    if settings["repeat"] < 1:
        raise InvalidArgumentError("--repeat must be >= 1")
    train, test = load_splits(settings)
    if settings.get("bank"):
        bank = load_bank(settings["bank"])
        check_fingerprint(bank, cfg, settings.get("force", False))
    else:
        bank = build_dataset_bank(train.limit(settings.get("limit") or 64), cfg, settings["threads"])
    gamma = parse_gamma(settings["gamma"]) or DEFAULT_GAMMA
    report = run_bench(
        test, bank, cfg, settings["repeat"], settings["warmup"], settings["threads"], gamma,
        config_echo=_echo(settings),
    )
    print(report.to_text())
    if (out := _out_dir(settings)) is not None:
        report.write(out)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    settings = resolve(args)
    cfg = encoder_config(settings)
    values = _float_list(settings["values"])
    if not values:
        raise InvalidArgumentError("--values must list at least one value")
    modes = [m.strip() for m in settings["co_agg_modes"].split(",") if m.strip()]
    bad = [m for m in modes if m not in AGG_MODES]
    if bad:
        raise InvalidArgumentError(f"unknown aggregation modes {bad}")
    gammas = _float_list(settings["co_gammas"])
    train, test = load_splits(settings)
    test = test.limit(settings.get("limit"))
    grid = run_sweep(train, test, cfg, settings["axis"], values, modes, gammas, settings["threads"])
    print(f"co-grid per value: agg modes {modes} x gammas {gammas}")
    print(grid.to_text())
    if (out := _out_dir(settings)) is not None:
        out.mkdir(parents=True, exist_ok=True)
        grid.write_csv(out / "sweep.csv", out / "sweep_configs.csv")
        with open(out / "sweep.jsonl", "a") as fh:
            fh.write(json.dumps({"config": _echo(settings), "rows": [r.__dict__ for r in grid.rows]}) + "\n")
    return EXIT_OK


def cmd_select_gamma(args: argparse.Namespace) -> int:
    bank = load_bank(args.bank)
    candidates = _float_list(args.candidates)
    accs = loo_accuracies(bank, candidates)
    for g, a in zip(candidates, accs):
        print(f"gamma={g:<8g} LOO accuracy {100 * a:.2f}%")
    gamma, acc = select_gamma_loo(bank, candidates)
    print(f"selected gamma={gamma:g} ({100 * acc:.2f}%)")
    return EXIT_OK


def _echo(settings: dict) -> dict:
    return {k: v for k, v in settings.items() if k != "func"}


def _add_dataset_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("dataset")
    g.add_argument("--dataset-dir")
    g.add_argument("--dataset", choices=("modelnet40", "scanobjectnn", "synthetic"))
    g.add_argument("--split", choices=sorted(SCANOBJECTNN_SPLITS))
    g.add_argument("--points", type=int, help="points per cloud (default 1024)")
    g.add_argument("--sample", choices=("first-n", "random"))
    g.add_argument("--seed", type=int)
    g.add_argument("--limit", type=int, help="deterministically subsample the split")
    g.add_argument("--synthetic-per-class", type=int)


def _add_encoder_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("encoder")
    g.add_argument("--refs-per-axis", type=int, help="reference values per axis (default 9)")
    g.add_argument("--sigma", type=float, help="Gaussian width (default 0.35; 0.3 for scanobjectnn)")
    g.add_argument("--k", type=int, help="neighbors per group (default 120)")
    g.add_argument("--stages", type=int, help="encoder stages (default 4)")
    g.add_argument("--agg-mode", choices=AGG_MODES)
    g.add_argument("--group-std-mode", choices=STD_MODES)
    g.add_argument("--no-normalize", dest="normalize_input", action="store_const", const=False)
    g.add_argument("--clamp-k", action="store_const", const=True)


def _add_run_flags(p: argparse.ArgumentParser, gamma: bool = True) -> None:
    if gamma:
        p.add_argument("--gamma", help="similarity sharpness (default 100) or 'auto'")
    p.add_argument("--threads", type=int, help="worker processes (default 1)")
    p.add_argument("--out")
    p.add_argument("--config", help="key=value settings file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pointgn", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-bank", help="encode a training split into a feature bank")
    _add_dataset_flags(p)
    _add_encoder_flags(p)
    _add_run_flags(p, gamma=False)
    p.set_defaults(func=cmd_build_bank)

    p = sub.add_parser("eval", help="classify a test split against a bank")
    p.add_argument("--bank", required=True)
    _add_dataset_flags(p)
    _add_encoder_flags(p)
    _add_run_flags(p)
    p.add_argument("--force", action="store_const", const=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("classify", help="classify one XYZ text file")
    p.add_argument("--bank", required=True)
    p.add_argument("input")
    _add_encoder_flags(p)
    _add_run_flags(p)
    p.add_argument("--force", action="store_const", const=True)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("fewshot", help="N-way K-shot episodes")
    _add_dataset_flags(p)
    _add_encoder_flags(p)
    _add_run_flags(p)
    p.add_argument("--way", type=int, default=5)
    p.add_argument("--shot", type=int, default=10)
    p.add_argument("--queries", type=int, default=20)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--episode-split", choices=("train", "test"), default="train")
    p.set_defaults(func=cmd_fewshot)

    p = sub.add_parser("bench", help="encode+classify throughput")
    _add_dataset_flags(p)
    _add_encoder_flags(p)
    _add_run_flags(p)
    p.add_argument("--bank")
    p.add_argument("--repeat", type=int, default=20)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--force", action="store_const", const=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep", help="hyperparameter ablation sweep")
    _add_dataset_flags(p)
    _add_encoder_flags(p)
    _add_run_flags(p, gamma=False)
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--co-agg-modes", default=",".join(AGG_MODES))
    p.add_argument("--co-gammas", default=",".join(f"{g:g}" for g in GAMMA_CANDIDATES))
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("select-gamma", help="leave-one-out gamma selection on a bank")
    p.add_argument("--bank", required=True)
    p.add_argument("--candidates", default=",".join(f"{g:g}" for g in GAMMA_CANDIDATES))
    p.set_defaults(func=cmd_select_gamma)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s"
    )
    del args.verbose
    try:
        return args.func(args)
    except (PointGNError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"evaluation failed: {exc!r}", file=sys.stderr)
        return EXIT_EVAL


if __name__ == "__main__":
    sys.exit(main())
