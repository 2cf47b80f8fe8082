"""Boosted alternating decision trees.

Every round adds one splitter under an existing prediction node
(precondition). The splitter is picked to minimize the boosting Z-measure

    Z = 2 (sqrt(W+(p & c) W-(p & c)) + sqrt(W+(p & ~c) W-(p & ~c))) + W(~p)

and its two prediction values are ``0.5 * ln((W+ + eps) / (W- + eps))``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError
from .svm import as_signed


@dataclass(frozen=True)
class AdtHyper:
    rounds: int = 10

    def __post_init__(self):
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")


@dataclass(frozen=True)
class Splitter:
    parent: tuple[int, bool] | None  # (splitter index, branch) or None for the root
    feature: int
    threshold: float  # condition is x[feature] < threshold
    value_true: float
    value_false: float


@dataclass
class AdtModel:
    root: float
    splitters: list[Splitter]
    rounds: int
    dim: int
    classes: tuple = (-1, 1)

    def precondition_path(self, k: int) -> tuple[tuple[int, bool], ...]:
        path = []
        parent = self.splitters[k].parent
        while parent is not None:
            path.append(parent)
            parent = self.splitters[parent[0]].parent
        return tuple(reversed(path))

    def _outcomes(self, X):
        """reached[k], branch[k] for every splitter as (N,) boolean arrays."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.dim:
            raise ShapeError(f"expected {self.dim} features, got {X.shape[1]}")
        reached, branch = [], []
        for s in self.splitters:
            if s.parent is None:
                r = np.ones(len(X), dtype=bool)
            else:
                k, side = s.parent
                r = reached[k] & (branch[k] == side)
            reached.append(r)
            branch.append(X[:, s.feature] < s.threshold)
        return X, reached, branch

    def score(self, X) -> np.ndarray:
        X, reached, branch = self._outcomes(X)
        out = np.full(len(X), self.root)
        for s, r, c in zip(self.splitters, reached, branch):
            out += np.where(r, np.where(c, s.value_true, s.value_false), 0.0)
        return out

    def predict(self, X) -> np.ndarray:
        return np.where(self.score(X) >= 0, self.classes[1], self.classes[0])

    def predict_proba(self, X) -> np.ndarray:
        # prediction values are half log-odds, so P(+) = sigmoid(2 * score)
        p = 1.0 / (1.0 + np.exp(-2.0 * self.score(X)))
        if self.classes[1] > self.classes[0]:
            return np.column_stack([1 - p, p])
        return np.column_stack([p, 1 - p])

    @property
    def labels(self) -> tuple:
        return tuple(sorted(self.classes))


def _half_log_ratio(wp, wn, eps):
    return 0.5 * np.log((wp + eps) / (wn + eps))


def train_adt(X, y, hyper: AdtHyper = AdtHyper()) -> AdtModel:
    X = np.asarray(X, dtype=float)
    ys, classes = as_signed(y)
    n, d = X.shape
    if len(ys) != n:
        raise ShapeError(f"{n} rows but {len(ys)} labels")
    eps = 1.0 / (2 * n)
    pos = ys > 0

    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    # a cut between sorted positions k and k+1 exists only where values differ
    valid = xs[1:] > xs[:-1]
    thresholds = 0.5 * (xs[1:] + xs[:-1])

    w = np.ones(n)
    root = float(_half_log_ratio(w[pos].sum(), w[~pos].sum(), eps))
    w *= np.exp(-ys * root)

    splitters: list[Splitter] = []
    # prediction nodes that can take a splitter: (parent key, membership mask)
    preconditions: list[tuple[tuple[int, bool] | None, np.ndarray]] = [(None, np.ones(n, dtype=bool))]

    for _ in range(hyper.rounds):
        total = w.sum()
        best = None
        for p_idx, (key, mask) in enumerate(preconditions):
            wp = np.where(mask & pos, w, 0.0)
            wn = np.where(mask & ~pos, w, 0.0)
            outside = total - wp.sum() - wn.sum()
            # left part (x < threshold) = first k+1 sorted entries
            cp = np.cumsum(wp[order], axis=0)[:-1]
            cn = np.cumsum(wn[order], axis=0)[:-1]
            tp, tn = wp.sum(), wn.sum()
            z = 2.0 * (np.sqrt(cp * cn) + np.sqrt(np.maximum(tp - cp, 0) * np.maximum(tn - cn, 0))) + outside
            z = np.where(valid, z, np.inf)
            flat = int(np.argmin(z))
            if not np.isfinite(z.flat[flat]):
                continue
            if best is None or z.flat[flat] < best[0] - 1e-15:
                k, f = divmod(flat, d)
                best = (z.flat[flat], p_idx, f, float(thresholds[k, f]), cp[k, f], cn[k, f], tp, tn)
        if best is None:
            break
        _, p_idx, f, thr, lp, ln, tp, tn = best
        key, mask = preconditions[p_idx]
        a = float(_half_log_ratio(lp, ln, eps))
        b = float(_half_log_ratio(tp - lp, tn - ln, eps))
        splitters.append(Splitter(key, f, thr, a, b))
        idx = len(splitters) - 1
        cond = X[:, f] < thr
        w *= np.exp(-ys * np.where(mask, np.where(cond, a, b), 0.0))
        preconditions.append(((idx, True), mask & cond))
        preconditions.append(((idx, False), mask & ~cond))

    return AdtModel(root, splitters, hyper.rounds, d, classes)


def predict_adt(model: AdtModel, x):
    """(label, score) for one instance."""
    s = float(model.score(np.asarray(x, dtype=float).reshape(1, -1))[0])
    return (model.classes[1] if s >= 0 else model.classes[0]), s
