"""CART trees with Gini splits and a bagged random forest with OOB error."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateLabels, ShapeError


@dataclass(frozen=True)
class RfHyper:
    n_trees: int = 100
    mtry: int | None = None  # None: floor(sqrt(D))
    min_leaf: int = 1
    max_depth: int | None = None
    bootstrap: bool = True
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_trees < 1 or self.min_leaf < 1:
            raise ValueError("n_trees and min_leaf must be positive")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be positive")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")


@dataclass
class Tree:
    """Flat node arrays; leaves have feature == -1. ``counts`` are class tallies."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (nodes, K)

    def leaf_index(self, X) -> np.ndarray:
        node = np.zeros(len(X), dtype=int)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            nd = node[idx]
            go_left = X[idx, self.feature[nd]] <= self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def predict_index(self, X) -> np.ndarray:
        # argmax picks the lowest class index on ties
        return np.argmax(self.counts[self.leaf_index(X)], axis=1)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)


def gini(counts) -> float:
    counts = np.asarray(counts, dtype=float)
    n = counts.sum()
    return 0.0 if n == 0 else 1.0 - float(np.sum((counts / n) ** 2))


def _best_split(X, yk, idx, features, K, min_leaf):
    """Lowest weighted child Gini over ``features``; None when no cut is valid."""
    sub = X[np.ix_(idx, features)]
    order = np.argsort(sub, axis=0, kind="stable")
    xs = np.take_along_axis(sub, order, axis=0)
    onehot = np.eye(K)[yk[idx]]
    left = np.cumsum(onehot[order], axis=0)[:-1]  # (n-1, F, K)
    n = len(idx)
    nl = np.arange(1, n)[:, None]
    nr = n - nl
    right = onehot.sum(0)[None, None, :] - left
    gl = 1.0 - np.sum(left**2, axis=2) / nl**2
    gr = 1.0 - np.sum(right**2, axis=2) / nr**2
    impurity = (nl * gl + nr * gr) / n
    ok = (xs[1:] > xs[:-1]) & (nl >= min_leaf) & (nr >= min_leaf)
    if not ok.any():
        return None
    impurity = np.where(ok, impurity, np.inf)
    flat = int(np.argmin(impurity))
    k, j = divmod(flat, len(features))
    thr = 0.5 * (xs[k, j] + xs[k + 1, j])
    if thr >= xs[k + 1, j]:
        thr = xs[k, j]
    return features[j], float(thr), float(impurity[k, j])


def build_tree(X, yk, K, idx, mtry, min_leaf, max_depth, rng, importances=None) -> Tree:
    d = X.shape[1]
    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(sample):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(np.bincount(yk[sample], minlength=K))
        return len(feature) - 1

    stack = [(new_node(idx), idx, 0)]
    while stack:
        node, sample, depth = stack.pop()
        c = counts[node]
        if np.count_nonzero(c) <= 1 or len(sample) < 2 * min_leaf:
            continue
        if max_depth is not None and depth >= max_depth:
            continue
        perm = rng.permutation(d)
        split = _best_split(X, yk, sample, perm[:mtry], K, min_leaf)
        if split is None and mtry < d:
            # keep drawing features until a valid cut exists, as CART does
            split = _best_split(X, yk, sample, perm[mtry:], K, min_leaf)
        if split is None:
            continue
        f, thr, imp = split
        if importances is not None:
            importances[f] += len(sample) * (gini(c) - imp)
        goes_left = X[sample, f] <= thr
        li, ri = sample[goes_left], sample[~goes_left]
        feature[node], threshold[node] = f, thr
        left[node], right[node] = new_node(li), new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return Tree(
        np.array(feature, dtype=int),
        np.array(threshold, dtype=float),
        np.array(left, dtype=int),
        np.array(right, dtype=int),
        np.array(counts, dtype=float).reshape(-1, K),
    )


@dataclass
class RfModel:
    trees: list[Tree]
    per_tree_seed: list
    oob_error: float
    feature_importances: np.ndarray
    classes: tuple
    dim: int

    @property
    def labels(self) -> tuple:
        return self.classes

    def _check(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.dim:
            raise ShapeError(f"expected {self.dim} features, got {X.shape[1]}")
        return X

    def votes(self, X) -> np.ndarray:
        """(N, n_trees) class indices voted by each tree."""
        X = self._check(X)
        return np.column_stack([t.predict_index(X) for t in self.trees])

    def predict_proba(self, X) -> np.ndarray:
        v = self.votes(X)
        K = len(self.classes)
        return np.stack([(v == k).mean(axis=1) for k in range(K)], axis=1)

    def predict(self, X) -> np.ndarray:
        return np.asarray(self.classes)[np.argmax(self.predict_proba(X), axis=1)]


def tree_seed(master: int, index: int) -> list[int]:
    return [int(master), int(index)]


def train_rf(X, y, hyper: RfHyper = RfHyper(), allow_single_class: bool = False) -> RfModel:
    """Bagged CART forest.

    A single-class ``y`` raises DegenerateLabels unless ``allow_single_class``,
    in which case every tree is a single leaf and the OOB error is 0.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    n, d = X.shape
    if len(y) != n:
        raise ShapeError(f"{n} rows but {len(y)} labels")
    if n < 2:
        raise ValueError("need at least two rows")
    classes = tuple(np.unique(y).tolist())
    if len(classes) < 2 and not allow_single_class:
        raise DegenerateLabels(f"only one class present: {classes}")
    return _fit_forest(X, y, classes, hyper)


def _fit_forest(X, y, classes, hyper: RfHyper) -> RfModel:
    n, d = X.shape
    K = len(classes)
    yk = np.searchsorted(np.asarray(classes), y)
    mtry = hyper.mtry or max(1, int(np.floor(np.sqrt(d))))
    mtry = min(mtry, d)

    def grow(t):
        rng = np.random.default_rng(tree_seed(hyper.seed, t))
        if hyper.bootstrap:
            sample = rng.integers(n, size=n)
        else:
            sample = np.arange(n)
        imp = np.zeros(d)
        tree = build_tree(X, yk, K, np.sort(sample), mtry, hyper.min_leaf, hyper.max_depth, rng, imp)
        oob = np.ones(n, dtype=bool)
        oob[sample] = False
        return tree, oob, imp

    if hyper.n_jobs > 1:
        with ThreadPoolExecutor(hyper.n_jobs) as pool:
            grown = list(pool.map(grow, range(hyper.n_trees)))
    else:
        grown = [grow(t) for t in range(hyper.n_trees)]

    oob_votes = np.zeros((n, K))
    importances = np.zeros(d)
    for tree, oob, imp in grown:
        if oob.any():
            oob_votes[np.flatnonzero(oob), tree.predict_index(X[oob])] += 1
        importances += imp
    has_oob = oob_votes.sum(axis=1) > 0
    if has_oob.any():
        oob_pred = np.argmax(oob_votes[has_oob], axis=1)
        oob_error = float(np.mean(oob_pred != yk[has_oob]))
    else:
        oob_error = float("nan")
    total = importances.sum()
    if total > 0:
        importances = importances / total
    return RfModel(
        trees=[g[0] for g in grown],
        per_tree_seed=[tree_seed(hyper.seed, t) for t in range(hyper.n_trees)],
        oob_error=oob_error,
        feature_importances=importances,
        classes=classes,
        dim=d,
    )


def predict_rf(model: RfModel, x):
    """(label, class-probability vector) for one instance."""
    p = model.predict_proba(np.asarray(x, dtype=float).reshape(1, -1))[0]
    return model.classes[int(np.argmax(p))], p
