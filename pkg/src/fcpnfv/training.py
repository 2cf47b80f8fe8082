"""One front end for fitting any of the four model families on a matrix."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .deep import SparseHyper, train_stack
from .errors import ConfigError, DegenerateLabels
from .ingest import fit_standardization
from .persist import TrainedModel
from .shallow.multiclass import default_hyper, train_binary, train_multiclass

MODEL_CHOICES = ("svm", "adt", "rf", "sae")


@dataclass(frozen=True)
class SaeConfig:
    h1: int = 100
    h2: int = 50
    beta: float = 4.0
    rho: float = 0.1
    l2: float = 0.001
    epochs1: int = 400
    epochs2: int = 100
    softmax_epochs: int = 400
    finetune_epochs: int = 400

    def hypers(self):
        h1 = SparseHyper(rho=self.rho, beta=self.beta, l2=self.l2, epochs=self.epochs1)
        return h1, replace(h1, epochs=self.epochs2)


def fit_model(X, y, algo: str, hyper=None, seed: int = 0, task: str = "", feature_names=(), classes=None):
    """Train ``algo`` on (X, y) and wrap it with its preprocessing.

    Shallow models see z-scored inputs (stats from X) and are one-vs-rest
    when there are more than two classes; the stacked autoencoder applies
    its own min-max scaling. ``seed`` overrides any seed in ``hyper``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if algo not in MODEL_CHOICES:
        raise ConfigError(f"unknown model {algo!r}; choose from {MODEL_CHOICES}")
    if len(y) == 0:
        raise DegenerateLabels("no training rows")
    if algo == "sae":
        cfg = hyper if hyper is not None else SaeConfig()
        h1, h2 = cfg.hypers()
        model = train_stack(
            X, y, (cfg.h1, cfg.h2), h1, h2, cfg.softmax_epochs, cfg.finetune_epochs, seed, classes=classes
        )
        return TrainedModel(model, None, tuple(feature_names), task, asdict(cfg), seed)

    hyper = hyper if hyper is not None else default_hyper(algo)
    if "seed" in {f.name for f in fields(hyper)}:
        hyper = replace(hyper, seed=seed)
    stats = fit_standardization(X)
    Xs = stats.apply(X)
    present = tuple(np.unique(y).tolist())
    wanted = tuple(classes) if classes is not None else present
    if len(wanted) == 2 and set(present) == set(wanted):
        model = train_binary(Xs, y, algo, hyper)
    else:
        model = train_multiclass(Xs, y, algo, hyper, wanted)
    return TrainedModel(model, stats, tuple(feature_names), task, asdict(hyper), seed)
