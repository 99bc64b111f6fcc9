import json

import numpy as np
import pytest

from pointgn.encoder import EncoderConfig
from pointgn.errors import ConfigMismatchError, InvalidArgumentError
from pointgn.harness import (
    build_dataset_bank,
    check_fingerprint,
    evaluate,
    run_bench,
    run_fewshot,
    run_sweep,
)
from pointgn.reports import EvalReport, read_sweep_csv
from pointgn.synthetic import make_synthetic_dataset, make_synthetic_splits

CFG = EncoderConfig(k=16)


@pytest.fixture(scope="module")
def splits():
    return make_synthetic_splits(4, 4, points=256, seed=3)


@pytest.fixture(scope="module")
def bank(splits):
    return build_dataset_bank(splits[0], CFG)


def test_bank_from_synthetic(bank):
    assert bank.size == 12 and bank.num_classes == 3 and bank.dim == 108
    assert bank.fingerprint == CFG.fingerprint()


def test_self_retrieval(splits):
    _, test = splits
    self_bank = build_dataset_bank(test, CFG)
    report = evaluate(self_bank, test, CFG, gamma=1000)
    assert report.overall_accuracy == 1.0


def test_report_bookkeeping_and_determinism(splits, bank):
    _, test = splits
    a = evaluate(bank, test, CFG, 100)
    b = evaluate(bank, test, CFG, 100, workers=2)
    cm = np.array(a.confusion)
    assert cm.sum(axis=1).tolist() == np.bincount(test.labels, minlength=3).tolist()
    assert abs(a.overall_accuracy - np.trace(cm) / cm.sum()) < 1e-12
    assert a.overall_accuracy == b.overall_accuracy and a.confusion == b.confusion
    assert a.config_echo["encoder"]["k"] == 16


def test_report_files(tmp_path, splits, bank):
    report = evaluate(bank, splits[1], CFG, 100)
    report.write(tmp_path)
    rec = json.loads((tmp_path / "eval.jsonl").read_text().splitlines()[0])
    assert rec["overall_accuracy"] == report.overall_accuracy
    rows = (tmp_path / "eval_per_class.csv").read_text().splitlines()
    assert rows[0].startswith("class_index") and len(rows) == 4


def test_from_predictions_handles_empty_class():
    r = EvalReport.from_predictions([0, 0, 1], [0, 1, 1], ["a", "b", "c"], 1.0, {})
    assert r.per_class_accuracy == [0.5, 1.0, None]
    assert abs(r.overall_accuracy - 2 / 3) < 1e-12


def test_fingerprint_check(bank):
    check_fingerprint(bank, CFG)
    with pytest.raises(ConfigMismatchError):
        check_fingerprint(bank, EncoderConfig(k=16, sigma=0.3))
    check_fingerprint(bank, EncoderConfig(k=16, sigma=0.3), force=True)


def test_fewshot_separable_blobs():
    ds = make_synthetic_dataset(12, points=256, seed=5, families=("sphere", "disk"))
    report = run_fewshot(ds, CFG, way=2, shot=3, queries_per_class=5, runs=4, seed=1)
    assert report.run_accuracies == [1.0] * 4
    assert report.mean == 1.0 and report.std == 0.0


def test_bench_metrics(splits, bank):
    report = run_bench(splits[1], bank, CFG, repeat=6, warmup=1)
    assert report.throughput_single > 0
    assert report.total_latency_ms["p95"] >= report.total_latency_ms["p50"]
    assert report.throughput_parallel is None
    par = run_bench(splits[1], bank, CFG, repeat=4, warmup=0, threads=2)
    assert par.throughput_parallel > 0


def test_bench_invalid_repeat(splits, bank):
    with pytest.raises(InvalidArgumentError):
        run_bench(splits[1], bank, CFG, repeat=0)


def test_sweep_sigma_csv_round_trip(tmp_path, splits):
    train, test = splits
    grid = run_sweep(train, test, CFG, "sigma", [0.3, 0.4], gammas=[10, 100])
    assert [r.value for r in grid.rows] == [0.3, 0.4]
    assert all(r.n_configs == 4 for r in grid.rows)
    assert len(grid.configs) == 8
    for r in grid.rows:
        accs = [c["accuracy"] for c in grid.configs if c["value"] == r.value]
        assert r.best_accuracy == max(accs) and abs(r.average_accuracy - np.mean(accs)) < 1e-15
    grid.write_csv(tmp_path / "s.csv", tmp_path / "c.csv")
    back = read_sweep_csv(tmp_path / "s.csv", tmp_path / "c.csv")
    assert back == grid


@pytest.mark.parametrize("axis,values", [("stages", [1, 2]), ("dimension", [9]), ("K", [8])])
def test_sweep_axes(splits, axis, values):
    grid = run_sweep(*splits, CFG, axis, values, agg_modes=["multiplicative"], gammas=[100])
    assert len(grid.rows) == len(values)


@pytest.mark.parametrize("axis,values", [("sigma", []), ("bogus", [1]), ("dimension", [10])])
def test_sweep_invalid(splits, axis, values):
    with pytest.raises(InvalidArgumentError):
        run_sweep(*splits, CFG, axis, values)
