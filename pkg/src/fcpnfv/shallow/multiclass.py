"""One-vs-rest reduction and a uniform binary-training front end."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateLabels
from .adt import AdtHyper, AdtModel, train_adt
from .forest import RfHyper, RfModel, train_rf
from .svm import SvmHyper, SvmModel, train_svm

ALGOS = ("svm", "adt", "rf")
HYPER_TYPES = {"svm": SvmHyper, "adt": AdtHyper, "rf": RfHyper}


def default_hyper(algo: str):
    try:
        return HYPER_TYPES[algo]()
    except KeyError:
        raise ValueError(f"unknown algorithm {algo!r}; choose from {ALGOS}") from None


def train_binary(X, y, algo: str, hyper=None):
    """Train one two-class model with ``algo`` in {'svm', 'adt', 'rf'}."""
    hyper = hyper if hyper is not None else default_hyper(algo)
    if algo == "svm":
        return train_svm(X, y, hyper)
    if algo == "adt":
        return train_adt(X, y, hyper)
    if algo == "rf":
        return train_rf(X, y, hyper)
    raise ValueError(f"unknown algorithm {algo!r}")


def binary_decision(model, X) -> np.ndarray:
    """Signed confidence for the positive (higher) label."""
    if isinstance(model, SvmModel):
        f = model.decision_function(X)
        return f if model.classes[1] > model.classes[0] else -f
    if isinstance(model, AdtModel):
        s = model.score(X)
        return s if model.classes[1] > model.classes[0] else -s
    if isinstance(model, RfModel):
        return model.predict_proba(X)[:, -1]
    raise TypeError(f"unsupported model {type(model).__name__}")


@dataclass
class OvrModel:
    algo: str
    classes: tuple
    models: list  # models[k] separates classes[k] (label 1) from the rest (label 0)

    @property
    def labels(self) -> tuple:
        return self.classes

    @property
    def dim(self) -> int:
        return self.models[0].dim

    def decision_matrix(self, X) -> np.ndarray:
        return np.column_stack([binary_decision(m, X) for m in self.models])

    def predict(self, X) -> np.ndarray:
        # argmax takes the first maximum, i.e. the lowest class id
        return np.asarray(self.classes)[np.argmax(self.decision_matrix(X), axis=1)]

    def predict_proba(self, X) -> np.ndarray:
        D = self.decision_matrix(X)
        if self.algo == "svm":
            P = np.zeros_like(D)
            P[np.arange(len(D)), np.argmax(D, axis=1)] = 1.0
            return P
        if self.algo == "adt":
            D = 1.0 / (1.0 + np.exp(-2.0 * D))
        total = D.sum(axis=1, keepdims=True)
        uniform = np.full_like(D, 1.0 / D.shape[1])
        with np.errstate(invalid="ignore", divide="ignore"):
            P = np.where(total > 0, D / np.where(total > 0, total, 1.0), uniform)
        return P


def train_multiclass(X, y, algo: str = "svm", hyper=None, classes=None) -> OvrModel:
    y = np.asarray(y)
    present = tuple(np.unique(y).tolist())
    classes = tuple(classes) if classes is not None else present
    missing = set(classes) - set(present)
    if missing:
        raise DegenerateLabels(f"classes absent from training data: {sorted(missing)}")
    if len(classes) < 2:
        raise DegenerateLabels("need at least two classes")
    models = [train_binary(X, (y == c).astype(int), algo, hyper) for c in classes]
    return OvrModel(algo, classes, models)


def predict_multiclass(model: OvrModel, x):
    x = np.asarray(x, dtype=float).reshape(1, -1)
    d = model.decision_matrix(x)[0]
    return model.classes[int(np.argmax(d))], d
