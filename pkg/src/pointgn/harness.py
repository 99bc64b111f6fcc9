"""Experiment drivers behind the CLI: bank building, evaluation, few-shot,
throughput and hyperparameter sweeps."""

from __future__ import annotations

import time
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from .classifier import (
    GAMMA_CANDIDATES,
    FeatureBank,
    bank_from_arrays,
    predict_batch,
    select_gamma_loo,
    similarity_logits,
)
from .datasets import LabeledDataset, make_fewshot_episodes
from .encoder import AGG_MODES, EncoderConfig, encode, encode_batch
from .errors import ConfigMismatchError, InvalidArgumentError
from .reports import (
    SWEEP_AXES,
    BenchReport,
    EvalReport,
    FewShotReport,
    SweepGrid,
    SweepRow,
    latency_summary,
)


def build_dataset_bank(
    train: LabeledDataset, config: EncoderConfig, workers: int = 1
) -> FeatureBank:
    feats = encode_batch(train, config, workers=workers)
    return bank_from_arrays(
        feats, train.labels, train.num_classes, train.class_names,
        fingerprint=config.fingerprint(), config=config.to_dict(),
    )


def check_fingerprint(bank: FeatureBank, config: EncoderConfig, force: bool = False) -> None:
    if bank.fingerprint and bank.fingerprint != config.fingerprint() and not force:
        raise ConfigMismatchError(
            f"bank was built with encoder fingerprint {bank.fingerprint}, current configuration "
            f"is {config.fingerprint()} (pass --force to evaluate anyway)"
        )


def evaluate_features(
    feats: np.ndarray,
    labels: Sequence[int],
    bank: FeatureBank,
    gamma: float,
    encode_time: float,
    config_echo: dict,
) -> EvalReport:
    t0 = time.perf_counter()
    pred = predict_batch(feats, bank, gamma)
    t_cls = time.perf_counter() - t0
    return EvalReport.from_predictions(
        labels, pred, bank.class_names, encode_time + t_cls, config_echo,
        gamma=gamma, encode_time_s=encode_time, classify_time_s=t_cls,
    )


def evaluate(
    bank: FeatureBank,
    test: LabeledDataset,
    config: EncoderConfig,
    gamma: float,
    workers: int = 1,
    config_echo: Optional[dict] = None,
) -> EvalReport:
    t0 = time.perf_counter()
    feats = encode_batch(test, config, workers=workers)
    t_enc = time.perf_counter() - t0
    echo = dict(config_echo or {}) | {"encoder": config.to_dict(), "gamma": gamma}
    return evaluate_features(feats, test.labels, bank, gamma, t_enc, echo)


def run_fewshot(
    dataset: LabeledDataset,
    config: EncoderConfig,
    way: int,
    shot: int,
    queries_per_class: int = 20,
    runs: int = 10,
    seed: int = 0,
    gamma: float = 100.0,
    workers: int = 1,
    config_echo: Optional[dict] = None,
) -> FewShotReport:
    """Mean accuracy over ``runs`` episodes; each cloud is encoded at most once."""
    episodes = make_fewshot_episodes(dataset, way, shot, queries_per_class, runs, seed)
    needed = sorted({i for ep in episodes for i, _ in ep.support + ep.query})
    feats = dict(zip(needed, encode_batch(dataset.subset(needed), config, workers=workers)))
    accs = []
    for ep in episodes:
        sup_idx, sup_lab = zip(*ep.support)
        q_idx, q_lab = zip(*ep.query)
        names = [dataset.class_names[c] for c in ep.classes]
        bank = bank_from_arrays(np.stack([feats[i] for i in sup_idx]), sup_lab, way, names)
        pred = predict_batch(np.stack([feats[i] for i in q_idx]), bank, gamma)
        accs.append(float(np.mean(pred == np.asarray(q_lab))))
    echo = dict(config_echo or {}) | {"encoder": config.to_dict(), "gamma": gamma, "seed": seed}
    return FewShotReport(way, shot, queries_per_class, accs, echo, gamma)


def run_bench(
    dataset: LabeledDataset,
    bank: FeatureBank,
    config: EncoderConfig,
    repeat: int,
    warmup: int = 2,
    threads: int = 1,
    gamma: float = 100.0,
    config_echo: Optional[dict] = None,
) -> BenchReport:
    """Per-sample encode/classify latency on one thread, plus pool throughput when ``threads > 1``."""
    if repeat < 1:
        raise InvalidArgumentError("repeat must be >= 1")
    if warmup < 0:
        raise InvalidArgumentError("warmup must be >= 0")
    if len(dataset) == 0:
        raise InvalidArgumentError("benchmark needs at least one cloud")
    n = len(dataset)
    for i in range(warmup):
        similarity_logits(encode(dataset[i % n], config).values, bank, gamma)
    enc_t, cls_t = [], []
    for i in range(repeat):
        cloud = dataset[(warmup + i) % n]
        t0 = time.perf_counter()
        f = encode(cloud, config).values
        t1 = time.perf_counter()
        similarity_logits(f, bank, gamma)
        t2 = time.perf_counter()
        enc_t.append(t1 - t0)
        cls_t.append(t2 - t1)
    total = np.asarray(enc_t) + np.asarray(cls_t)

    parallel = None
    if threads > 1:
        clouds = [dataset[(warmup + i) % n] for i in range(repeat)]
        t0 = time.perf_counter()
        feats = encode_batch(clouds, config, workers=threads, chunksize=max(1, repeat // (4 * threads)))
        similarity_logits(feats, bank, gamma)
        parallel = repeat / (time.perf_counter() - t0)

    echo = dict(config_echo or {}) | {"encoder": config.to_dict(), "gamma": gamma}
    return BenchReport(
        samples=repeat,
        warmup=warmup,
        threads=threads,
        encode_latency_ms=latency_summary(enc_t),
        classify_latency_ms=latency_summary(cls_t),
        total_latency_ms=latency_summary(total),
        throughput_single=float(repeat / total.sum()),
        throughput_parallel=parallel,
        config_echo=echo,
    )


def _axis_config(base: EncoderConfig, axis: str, value: float) -> EncoderConfig:
    if axis == "K":
        return replace(base, k=int(value))
    if axis == "dimension":
        if int(value) != value or int(value) % 3:
            raise InvalidArgumentError(f"dimension must be a multiple of 3; got {value}")
        return replace(base, refs_per_axis=int(value) // 3)
    if axis == "stages":
        return replace(base, stages=int(value), stage_sigmas=None)
    if axis == "sigma":
        return replace(base, sigma=float(value), stage_sigmas=None)
    raise InvalidArgumentError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")


def run_sweep(
    train: LabeledDataset,
    test: LabeledDataset,
    base: EncoderConfig,
    axis: str,
    values: Sequence[float],
    agg_modes: Sequence[str] = AGG_MODES,
    gammas: Sequence[float] = GAMMA_CANDIDATES,
    workers: int = 1,
) -> SweepGrid:
    """Evaluate every axis value over the co-grid ``agg_modes x gammas``.

    Per axis value the grid row keeps the best and the mean test accuracy
    over that co-grid; the bank is re-encoded once per (value, agg mode).
    """
    if axis not in SWEEP_AXES:
        raise InvalidArgumentError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    if not values:
        raise InvalidArgumentError("sweep needs at least one value")
    if not agg_modes or not gammas:
        raise InvalidArgumentError("co-sweep lists must be non-empty")
    rows, configs = [], []
    for v in values:
        accs = []
        for mode in agg_modes:
            cfg = replace(_axis_config(base, axis, v), agg_mode=mode)
            bank = build_dataset_bank(train, cfg, workers)
            feats = encode_batch(test, cfg, workers=workers)
            for g in gammas:
                acc = float(np.mean(predict_batch(feats, bank, g) == test.labels))
                accs.append((acc, mode, float(g)))
                configs.append({"axis": axis, "value": float(v), "agg_mode": mode, "gamma": float(g), "accuracy": acc})
        best = max(accs, key=lambda a: a[0])
        rows.append(SweepRow(axis, float(v), best[0], float(np.mean([a[0] for a in accs])), best[1], best[2], len(accs)))
    return SweepGrid(axis, [float(v) for v in values], rows, configs)


def tuned_accuracy(
    train: LabeledDataset,
    test: LabeledDataset,
    base: EncoderConfig,
    gammas: Sequence[float] = GAMMA_CANDIDATES,
    workers: int = 1,
) -> tuple[float, dict]:
    """Best test accuracy over both aggregation modes, gamma picked by leave-one-out on the bank."""
    best_acc, best = -1.0, {}
    for mode in AGG_MODES:
        cfg = replace(base, agg_mode=mode)
        bank = build_dataset_bank(train, cfg, workers)
        gamma, loo = select_gamma_loo(bank, gammas)
        report = evaluate(bank, test, cfg, gamma, workers)
        if report.overall_accuracy > best_acc:
            best_acc = report.overall_accuracy
            best = {"agg_mode": mode, "gamma": gamma, "loo_accuracy": loo}
    return best_acc, best
