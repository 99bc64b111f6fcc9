"""Report records emitted by the harness and their CSV / JSON-lines serializers."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

PathLike = Union[str, Path]


def confusion_matrix(true: Sequence[int], pred: Sequence[int], num_classes: int) -> np.ndarray:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(true, dtype=np.intp), np.asarray(pred, dtype=np.intp)), 1)
    return cm


@dataclass
class EvalReport:
    overall_accuracy: float
    per_class_accuracy: list[Optional[float]]
    confusion: list[list[int]]
    wall_time_s: float
    throughput: float
    config_echo: dict
    class_names: list[str] = field(default_factory=list)
    gamma: float = 0.0
    encode_time_s: float = 0.0
    classify_time_s: float = 0.0

    @classmethod
    def from_predictions(
        cls,
        true: Sequence[int],
        pred: Sequence[int],
        class_names: Sequence[str],
        wall_time_s: float,
        config_echo: dict,
        **extra,
    ) -> "EvalReport":
        cm = confusion_matrix(true, pred, len(class_names))
        support = cm.sum(axis=1)
        total = int(cm.sum())
        per_class = [float(cm[i, i] / support[i]) if support[i] else None for i in range(len(class_names))]
        return cls(
            overall_accuracy=float(np.trace(cm) / total) if total else 0.0,
            per_class_accuracy=per_class,
            confusion=cm.tolist(),
            wall_time_s=wall_time_s,
            throughput=total / wall_time_s if wall_time_s > 0 else float("inf"),
            config_echo=config_echo,
            class_names=list(class_names),
            **extra,
        )

    @property
    def mean_class_accuracy(self) -> float:
        vals = [a for a in self.per_class_accuracy if a is not None]
        return float(np.mean(vals)) if vals else 0.0

    def to_text(self) -> str:
        n = int(np.sum(self.confusion))
        lines = [
            f"samples          {n}",
            f"overall accuracy {100 * self.overall_accuracy:.2f}%",
            f"mean class acc   {100 * self.mean_class_accuracy:.2f}%",
            f"gamma            {self.gamma:g}",
            f"wall time        {self.wall_time_s:.2f} s "
            f"(encode {self.encode_time_s:.2f} s, classify {self.classify_time_s:.3f} s)",
            f"throughput       {self.throughput:.1f} samples/s",
        ]
        return "\n".join(lines)

    def write(self, out_dir: PathLike, stem: str = "eval") -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / f"{stem}.jsonl", "a") as fh:
            fh.write(json.dumps(asdict(self), sort_keys=True) + "\n")
        with open(out / f"{stem}_per_class.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["class_index", "class_name", "support", "correct", "accuracy"])
            for i, name in enumerate(self.class_names):
                row = self.confusion[i]
                acc = self.per_class_accuracy[i]
                w.writerow([i, name, sum(row), row[i], "" if acc is None else repr(acc)])


@dataclass
class FewShotReport:
    way: int
    shot: int
    queries_per_class: int
    run_accuracies: list[float]
    config_echo: dict
    gamma: float = 0.0

    @property
    def mean(self) -> float:
        return float(np.mean(self.run_accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.run_accuracies))

    def to_text(self) -> str:
        lines = [f"run {i:2d}  {100 * a:.2f}%" for i, a in enumerate(self.run_accuracies)]
        lines.append(
            f"{self.way}-way {self.shot}-shot ({self.queries_per_class} queries/class): "
            f"{100 * self.mean:.2f}% +/- {100 * self.std:.2f}"
        )
        return "\n".join(lines)

    def write(self, out_dir: PathLike) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rec = asdict(self) | {"mean": self.mean, "std": self.std}
        with open(out / "fewshot.jsonl", "a") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        with open(out / "fewshot.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["run", "accuracy"])
            for i, a in enumerate(self.run_accuracies):
                w.writerow([i, repr(a)])


@dataclass
class BenchReport:
    samples: int
    warmup: int
    threads: int
    encode_latency_ms: dict
    classify_latency_ms: dict
    total_latency_ms: dict
    throughput_single: float
    throughput_parallel: Optional[float]
    config_echo: dict

    @property
    def p95_over_p50(self) -> float:
        return self.total_latency_ms["p95"] / self.total_latency_ms["p50"]

    def to_text(self) -> str:
        def fmt(name, d):
            return f"{name:<9} mean {d['mean']:8.2f} ms  p50 {d['p50']:8.2f} ms  p95 {d['p95']:8.2f} ms"

        lines = [
            f"timed samples {self.samples} (after {self.warmup} warmup)",
            fmt("encode", self.encode_latency_ms),
            fmt("classify", self.classify_latency_ms),
            fmt("total", self.total_latency_ms),
            f"throughput (1 thread)  {self.throughput_single:.1f} samples/s",
        ]
        if self.throughput_parallel is not None:
            lines.append(f"throughput ({self.threads} workers) {self.throughput_parallel:.1f} samples/s")
        return "\n".join(lines)

    def write(self, out_dir: PathLike) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "bench.jsonl", "a") as fh:
            fh.write(json.dumps(asdict(self), sort_keys=True) + "\n")
        with open(out / "bench.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["stage", "mean_ms", "p50_ms", "p95_ms"])
            for stage, d in (("encode", self.encode_latency_ms), ("classify", self.classify_latency_ms),
                             ("total", self.total_latency_ms)):
                w.writerow([stage, repr(d["mean"]), repr(d["p50"]), repr(d["p95"])])


def latency_summary(seconds: Sequence[float]) -> dict:
    ms = 1000.0 * np.asarray(seconds, dtype=np.float64)
    return {
        "mean": float(ms.mean()),
        "p50": float(np.percentile(ms, 50)),
        "p95": float(np.percentile(ms, 95)),
    }


SWEEP_AXES = ("K", "dimension", "stages", "sigma")

_GRID_FIELDS = ("axis", "value", "best_accuracy", "average_accuracy", "best_agg_mode", "best_gamma", "n_configs")
_CONFIG_FIELDS = ("axis", "value", "agg_mode", "gamma", "accuracy")


@dataclass
class SweepRow:
    axis: str
    value: float
    best_accuracy: float
    average_accuracy: float
    best_agg_mode: str
    best_gamma: float
    n_configs: int


@dataclass
class SweepGrid:
    axis: str
    values: list[float]
    rows: list[SweepRow]
    # every evaluated (value, agg_mode, gamma) point
    configs: list[dict] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [f"{self.axis:>10}  {'best':>7}  {'average':>7}  best setting"]
        for r in self.rows:
            lines.append(
                f"{r.value:>10g}  {100 * r.best_accuracy:6.2f}%  {100 * r.average_accuracy:6.2f}%  "
                f"{r.best_agg_mode}, gamma={r.best_gamma:g}"
            )
        return "\n".join(lines)

    def write_csv(self, path: PathLike, configs_path: Optional[PathLike] = None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=_GRID_FIELDS)
            w.writeheader()
            for r in self.rows:
                d = asdict(r)
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in d.items()})
        if configs_path is not None:
            with open(configs_path, "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=_CONFIG_FIELDS)
                w.writeheader()
                for c in self.configs:
                    w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in c.items()})


def read_sweep_csv(path: PathLike, configs_path: Optional[PathLike] = None) -> SweepGrid:
    rows = []
    with open(path, newline="") as fh:
        for d in csv.DictReader(fh):
            rows.append(SweepRow(
                axis=d["axis"],
                value=float(d["value"]),
                best_accuracy=float(d["best_accuracy"]),
                average_accuracy=float(d["average_accuracy"]),
                best_agg_mode=d["best_agg_mode"],
                best_gamma=float(d["best_gamma"]),
                n_configs=int(d["n_configs"]),
            ))
    configs = []
    if configs_path is not None:
        with open(configs_path, newline="") as fh:
            for d in csv.DictReader(fh):
                configs.append({
                    "axis": d["axis"], "value": float(d["value"]), "agg_mode": d["agg_mode"],
                    "gamma": float(d["gamma"]), "accuracy": float(d["accuracy"]),
                })
    axis = rows[0].axis if rows else ""
    return SweepGrid(axis, [r.value for r in rows], rows, configs)
