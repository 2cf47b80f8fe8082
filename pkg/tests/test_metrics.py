import csv
import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fcpnfv.errors import LabelError, NonStochasticRows, ShapeError, StratifyError
from fcpnfv.metrics import confusion, kfold, metrics, stratified_folds

from conftest import DATA
from oracles import exact_metrics, tally_confusion


def load_fixture():
    with open(DATA / "metrics_fixture.csv") as fh:
        rows = list(csv.reader(fh))[1:]
    return [(int(r[0]), r[1:]) for r in rows]


def test_confusion_trivial_cases():
    y = [0, 0, 1, 2, 2, 2]
    np.testing.assert_array_equal(confusion(y, y, 3), np.diag([2, 1, 3]))
    M = confusion(y, [1] * 6, 3)
    assert np.count_nonzero(M.sum(0)) == 1 and M[:, 1].sum() == 6
    np.testing.assert_array_equal(confusion([1, 2], [2, 2], 2, base=1), [[0, 1], [0, 1]])


def test_confusion_matches_tally(rng):
    a = rng.integers(4, size=100)
    b = rng.integers(4, size=100)
    np.testing.assert_array_equal(confusion(a, b, 4), tally_confusion(a, b, 4))


def test_confusion_rejects_out_of_range():
    with pytest.raises(LabelError):
        confusion([0, 3], [0, 1], 3)
    with pytest.raises(LabelError):
        confusion([1, 2], [0, 1], 2, base=1)


def test_single_instance_hand_values():
    r = metrics([0], [[0.8, 0.2]])
    assert r.accuracy == 1
    assert r.mae == pytest.approx(0.2, abs=1e-15)
    assert r.rmse == pytest.approx(0.2, abs=1e-15)


def test_perfect_one_hot():
    y = [0, 1, 2, 1]
    r = metrics(y, np.eye(3)[y])
    assert r.mae == 0 and r.rmse == 0
    assert r.tp_rate == [1, 1, 1] and r.fp_rate == [0, 0, 0]


def test_fixture_matches_golden():
    golden = json.loads((DATA / "metrics_golden.json").read_text())
    rows = load_fixture()
    r = metrics([y for y, _ in rows], [[float(v) for v in p] for _, p in rows], golden["classes"]).to_dict()
    for key in ("accuracy", "weighted_precision", "macro_precision", "mae", "rmse"):
        assert abs(r[key] - golden[key]) <= 1e-12, key
    for key in ("precision", "tp_rate", "fp_rate"):
        np.testing.assert_allclose(r[key], golden[key], rtol=0, atol=1e-12)
    assert r["confusion"] == golden["confusion"]


def test_golden_file_is_reproducible_from_oracle():
    golden = json.loads((DATA / "metrics_golden.json").read_text())
    fresh = exact_metrics(load_fixture(), golden["classes"])
    assert fresh == golden


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 5), st.integers(1, 40))
def test_random_reports_agree_with_exact_oracle(seed, K, n):
    r = np.random.default_rng(seed)
    counts = r.integers(0, 5, size=(n, K))
    counts[:, 0] += 1
    rows = [(int(r.integers(K)), [f"{c}/{row.sum()}" for c in row]) for row in counts]
    P = [[float(Fraction(v)) for v in p] for _, p in rows]
    got = metrics([y for y, _ in rows], P).to_dict()
    want = exact_metrics(rows, list(range(K)))
    assert got["confusion"] == want["confusion"]
    for key in ("accuracy", "weighted_precision", "macro_precision", "mae", "rmse"):
        assert math.isclose(got[key], want[key], rel_tol=1e-12, abs_tol=1e-15)
    assert 0 <= got["mae"] <= 1 and 0 <= got["rmse"] <= 1


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_binary_fp_tp_identity(seed):
    r = np.random.default_rng(seed)
    y = r.integers(2, size=30)
    p = r.uniform(size=30)
    rep = metrics(y, np.column_stack([1 - p, p]))
    if rep.confusion[1].sum():
        assert rep.fp_rate[0] == pytest.approx(1 - rep.tp_rate[1], abs=1e-15)
    if rep.confusion[0].sum():
        assert rep.fp_rate[1] == pytest.approx(1 - rep.tp_rate[0], abs=1e-15)


def test_published_binary_pair_is_consistent():
    # published SVM detection pair: FP rate of class 0 2.4%, TP rate of class 1 97.6%
    assert 0.024 == pytest.approx(1 - 0.976)


def test_metric_input_errors():
    with pytest.raises(NonStochasticRows):
        metrics([0], [[0.5, 0.6]])
    with pytest.raises(LabelError):
        metrics([7], [[0.5, 0.5]])
    with pytest.raises(ShapeError):
        metrics([0, 1], [[0.5, 0.5]])
    with pytest.raises(ShapeError):
        metrics([0], [[0.5, 0.5]], classes=(0, 1, 2))


class _Constant:
    def __init__(self, label, labels):
        self.label, self.labels = label, labels

    def predict_proba(self, X):
        P = np.zeros((len(X), len(self.labels)))
        P[:, self.labels.index(self.label)] = 1
        return P


def _majority_trainer(X, y):
    vals, counts = np.unique(y, return_counts=True)
    return _Constant(vals[np.argmax(counts)].item(), tuple(vals.tolist()))


def test_leave_one_out_folds():
    X = np.arange(10.0)[:, None]
    y = np.zeros(10, dtype=int)
    res = kfold(X, y, 10, lambda X, y: _Constant(0, (0,)), seed=1)
    assert len(res.folds) == 10 and all(f.n == 1 for f in res.folds)
    assert sorted(res.fold_of.tolist()) == list(range(10))


def test_constant_trainer_gives_modal_frequency():
    X = np.zeros((20, 2))
    y = np.array([1] * 12 + [2] * 8)
    res = kfold(X, y, 4, _majority_trainer, seed=0)
    assert res.aggregate.accuracy == pytest.approx(12 / 20)


def test_fold_replay_and_stratification():
    y = np.repeat([0, 1, 2], [30, 20, 10])
    a = stratified_folds(y, 10, seed=42)
    b = stratified_folds(y, 10, seed=42)
    np.testing.assert_array_equal(a, b)
    for c, size in ((0, 3), (1, 2), (2, 1)):
        assert np.all(np.bincount(a[y == c], minlength=10) == size)
    with pytest.raises(StratifyError):
        stratified_folds(y, 11, seed=0)


def test_pooled_accuracy_is_support_weighted_fold_mean(rng):
    X = rng.normal(size=(53, 2))
    y = (X[:, 0] + 0.5 * rng.normal(size=53) > 0).astype(int)

    def nearest_mean(Xt, yt):
        mu = np.array([Xt[yt == c].mean(0) for c in (0, 1)])

        class M:
            labels = (0, 1)

            def predict_proba(self, Q):
                d = ((Q[:, None, :] - mu[None]) ** 2).sum(-1)
                return np.eye(2)[np.argmin(d, 1)]

        return M()

    res = kfold(X, y, 5, nearest_mean, seed=3)
    weighted = sum(f.accuracy * f.n for f in res.folds) / sum(f.n for f in res.folds)
    assert abs(res.aggregate.accuracy - weighted) <= 1e-12


def test_report_serializations():
    rows = load_fixture()
    rep = metrics([y for y, _ in rows], [[float(v) for v in p] for _, p in rows])
    assert "timing_seconds" not in json.loads(rep.to_json())
    assert "timing_seconds" in json.loads(rep.to_json(include_timing=True))
    lines = rep.to_csv().splitlines()
    assert lines[0] == "metric,class,value" and "accuracy,,0.6" in lines
    assert rep.confusion_csv().splitlines()[1] == "0,2,1,0"
