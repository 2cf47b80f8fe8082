"""Classification metrics in workbench conventions, confusion matrices and
stratified k-fold cross-validation.

MAE and RMSE are computed in probability space over all N*K entries,
which is how "Mean absolute error" / "Root mean squared error" are
reported by the common ML workbenches.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import LabelError, NonStochasticRows, ShapeError, StratifyError


def confusion(y_true, y_pred, K: int, base: int = 0) -> np.ndarray:
    """(K, K) counts; entry (i, j) = true class i predicted as j. Labels run base..base+K-1."""
    yt = np.asarray(y_true, dtype=int) - base
    yp = np.asarray(y_pred, dtype=int) - base
    if yt.shape != yp.shape:
        raise ShapeError("y_true and y_pred differ in length")
    for name, v in (("y_true", yt), ("y_pred", yp)):
        if len(v) and (v.min() < 0 or v.max() >= K):
            raise LabelError(f"{name} has labels outside {base}..{base + K - 1}")
    M = np.zeros((K, K), dtype=int)
    np.add.at(M, (yt, yp), 1)
    return M


@dataclass
class MetricsReport:
    classes: tuple
    n: int
    accuracy: float
    precision: list
    tp_rate: list
    fp_rate: list
    weighted_precision: float
    macro_precision: float
    mae: float
    rmse: float
    confusion: np.ndarray
    timing_seconds: float = 0.0

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {
            "classes": list(self.classes),
            "n": self.n,
            "accuracy": self.accuracy,
            "precision": list(self.precision),
            "tp_rate": list(self.tp_rate),
            "fp_rate": list(self.fp_rate),
            "weighted_precision": self.weighted_precision,
            "macro_precision": self.macro_precision,
            "mae": self.mae,
            "rmse": self.rmse,
            "confusion": self.confusion.tolist(),
        }
        if include_timing:
            d["timing_seconds"] = self.timing_seconds
        return d

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        """Flat one-row-per-metric CSV."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("metric", "class", "value"))
        for key in ("accuracy", "weighted_precision", "macro_precision", "mae", "rmse"):
            w.writerow((key, "", repr(float(getattr(self, key)))))
        for key in ("precision", "tp_rate", "fp_rate"):
            for c, v in zip(self.classes, getattr(self, key)):
                w.writerow((key, c, repr(float(v))))
        return buf.getvalue()

    def confusion_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\pred", *self.classes])
        for c, row in zip(self.classes, self.confusion.tolist()):
            w.writerow([c, *row])
        return buf.getvalue()


def _safe_div(a, b):
    return np.divide(a, b, out=np.zeros_like(a, dtype=float), where=b > 0)


def metrics(y_true, probs, classes: Sequence | None = None, timing_seconds: float = 0.0) -> MetricsReport:
    """Report for true labels and an (N, K) probability matrix.

    Columns of ``probs`` follow ``classes`` (default 0..K-1). The predicted
    label is the argmax, ties resolved to the lowest class.
    """
    P = np.asarray(probs, dtype=float)
    if P.ndim != 2:
        raise ShapeError("probs must be (N, K)")
    n, K = P.shape
    classes = tuple(range(K)) if classes is None else tuple(classes)
    if len(classes) != K:
        raise ShapeError(f"{K} probability columns but {len(classes)} classes")
    y_true = np.asarray(y_true)
    if len(y_true) != n:
        raise ShapeError(f"{len(y_true)} labels but {n} probability rows")
    if n and np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-6):
        raise NonStochasticRows("probability rows must sum to 1 within 1e-6")
    lookup = {c: k for k, c in enumerate(classes)}
    try:
        yk = np.array([lookup[v] for v in y_true.tolist()], dtype=int)
    except KeyError as exc:
        raise LabelError(f"label {exc.args[0]!r} not among {classes}") from None

    pred = np.argmax(P, axis=1) if n else np.zeros(0, dtype=int)
    M = confusion(yk, pred, K)
    support = M.sum(axis=1).astype(float)
    predicted = M.sum(axis=0).astype(float)
    tp = np.diag(M).astype(float)
    fp = predicted - tp
    tn = n - support - fp
    precision = _safe_div(tp, predicted)
    tp_rate = _safe_div(tp, support)
    fp_rate = _safe_div(fp, fp + tn)
    T = np.zeros_like(P)
    if n:
        T[np.arange(n), yk] = 1.0
    dev = P - T
    denom = max(n * K, 1)
    return MetricsReport(
        classes=classes,
        n=int(n),
        accuracy=float(tp.sum() / n) if n else 0.0,
        precision=precision.tolist(),
        tp_rate=tp_rate.tolist(),
        fp_rate=fp_rate.tolist(),
        weighted_precision=float(np.sum(precision * support) / n) if n else 0.0,
        macro_precision=float(precision.mean()),
        mae=float(np.sum(np.abs(dev)) / denom),
        rmse=float(np.sqrt(np.sum(dev * dev) / denom)),
        confusion=M,
        timing_seconds=float(timing_seconds),
    )


# ---------------------------------------------------------------------------


def stratified_folds(y, k: int, seed: int) -> np.ndarray:
    """Fold id per row: rows of each class are shuffled, then dealt round-robin."""
    y = np.asarray(y)
    if k < 2:
        raise ValueError("k must be >= 2")
    rng = np.random.default_rng(seed)
    fold = np.empty(len(y), dtype=int)
    position = 0
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        if len(idx) < k:
            raise StratifyError(f"class {c} has {len(idx)} rows, fewer than k={k}")
        idx = rng.permutation(idx)
        fold[idx] = (position + np.arange(len(idx))) % k
        position += len(idx)
    return fold


def align_proba(model, X, classes) -> np.ndarray:
    """Model probabilities re-indexed onto ``classes`` (missing columns are 0)."""
    P = model.predict_proba(X)
    out = np.zeros((len(P), len(classes)))
    col = {c: j for j, c in enumerate(classes)}
    for j, c in enumerate(model.labels):
        out[:, col[c]] = P[:, j]
    return out


@dataclass
class KFoldResult:
    aggregate: MetricsReport
    folds: list[MetricsReport]
    fold_of: np.ndarray
    probs: np.ndarray = field(repr=False)

    @property
    def mean_fold_accuracy(self) -> float:
        return float(np.mean([f.accuracy for f in self.folds]))

    def to_dict(self, include_timing: bool = False) -> dict:
        return {
            "aggregate": self.aggregate.to_dict(include_timing),
            "mean_fold_accuracy": self.mean_fold_accuracy,
            "folds": [f.to_dict(include_timing) for f in self.folds],
        }


def kfold(X, y, k: int, trainer: Callable, seed: int = 0, classes=None) -> KFoldResult:
    """Stratified k-fold CV; ``trainer(X, y)`` returns a model with
    ``predict_proba`` and ``labels``. The aggregate pools all held-out
    predictions."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    classes = tuple(np.unique(y).tolist()) if classes is None else tuple(classes)
    fold = stratified_folds(y, k, seed)
    probs = np.zeros((len(y), len(classes)))
    reports = []
    total_time = 0.0
    for f in range(k):
        test = fold == f
        t0 = time.perf_counter()
        model = trainer(X[~test], y[~test])
        P = align_proba(model, X[test], classes)
        elapsed = time.perf_counter() - t0
        total_time += elapsed
        probs[test] = P
        reports.append(metrics(y[test], P, classes, elapsed))
    return KFoldResult(metrics(y, probs, classes, total_time), reports, fold, probs)
