"""Soft-margin kernel SVM trained by sequential minimal optimization."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateLabels, ShapeError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SvmHyper:
    C: float = 1.0
    kernel: str = "rbf"
    gamma: float | None = None  # None: 1 / (D * var(X))
    tol: float = 1e-3
    max_passes: int = 10
    max_iter: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.kernel not in ("linear", "rbf"):
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if not (self.C > 0 and self.tol > 0 and self.max_passes > 0):
            raise ValueError("C, tol and max_passes must be positive")
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError("gamma must be positive")


def kernel_matrix(A, B, kernel: str, gamma: float) -> np.ndarray:
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    if kernel == "linear":
        return A @ B.T
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * (A @ B.T)
    return np.exp(-gamma * np.maximum(sq, 0.0))


def default_gamma(X) -> float:
    X = np.asarray(X, dtype=float)
    v = X.var()
    return 1.0 / (X.shape[1] * v) if v > 0 else 1.0


@dataclass
class SvmModel:
    support_vectors: np.ndarray
    dual_coefs: np.ndarray  # alpha_i * y_i
    bias: float
    kernel: str
    gamma: float
    C: float
    classes: tuple = (-1, 1)  # (label for -1 side, label for +1 side)
    objective_history: list = field(default_factory=list, repr=False, compare=False)
    converged: bool = True

    @property
    def alphas(self) -> np.ndarray:
        return np.abs(self.dual_coefs)

    @property
    def dim(self) -> int:
        return self.support_vectors.shape[1]

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.dim:
            raise ShapeError(f"expected {self.dim} features, got {X.shape[1]}")
        if len(self.dual_coefs) == 0:
            return np.full(len(X), self.bias)
        return kernel_matrix(X, self.support_vectors, self.kernel, self.gamma) @ self.dual_coefs + self.bias

    def predict(self, X) -> np.ndarray:
        f = self.decision_function(X)
        return np.where(f >= 0, self.classes[1], self.classes[0])

    def predict_proba(self, X) -> np.ndarray:
        # no calibration: hard 0/1 class membership, columns ordered as sorted classes
        pos = self.decision_function(X) >= 0
        out = np.zeros((len(pos), 2))
        hi = 1 if self.classes[1] > self.classes[0] else 0
        out[pos, hi] = 1.0
        out[~pos, 1 - hi] = 1.0
        return out

    @property
    def labels(self) -> tuple:
        return tuple(sorted(self.classes))


def as_signed(y) -> tuple[np.ndarray, tuple]:
    """Map a two-valued label vector to -1/+1; returns (signed, (neg, pos))."""
    y = np.asarray(y)
    values = np.unique(y)
    if len(values) != 2:
        raise DegenerateLabels(f"binary training needs exactly two labels, got {values.tolist()}")
    if set(values.tolist()) == {-1, 1}:
        return y.astype(float), (-1, 1)
    neg, pos = values.tolist()
    return np.where(y == pos, 1.0, -1.0), (neg, pos)


def dual_objective(alpha, y, K) -> float:
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


def kkt_violations(alpha, y, f, C, tol) -> np.ndarray:
    r = y * f - 1.0
    return ((r < -tol) & (alpha < C)) | ((r > tol) & (alpha > 0))


def train_svm(X, y, hyper: SvmHyper = SvmHyper()) -> SvmModel:
    """Solve the soft-margin dual with SMO.

    The working pair is (i, random j) for each KKT violator i; once
    ``max_passes`` sweeps change nothing, a full KKT check runs and any
    remaining violators are retried against every j (largest |E_i - E_j|
    first). Training stops when no violator is left.
    """
    X = np.asarray(X, dtype=float)
    ys, classes = as_signed(y)
    n = len(ys)
    if X.shape[0] != n:
        raise ShapeError(f"{X.shape[0]} rows but {n} labels")
    gamma = hyper.gamma if hyper.gamma is not None else default_gamma(X)
    K = kernel_matrix(X, X, hyper.kernel, gamma)
    C, tol = hyper.C, hyper.tol
    rng = np.random.default_rng(hyper.seed)

    alpha = np.zeros(n)
    b = 0.0
    E = -ys.copy()  # f(x_k) - y_k with f = 0
    history = [0.0]
    eps = 1e-12

    def objective():
        # Q alpha = y * (f - b) and f = E + y
        return float(alpha.sum() - 0.5 * np.sum(alpha * ys * (E + ys - b)))

    def take_step(i, j):
        nonlocal b
        if i == j:
            return False
        ai, aj, yi, yj = alpha[i], alpha[j], ys[i], ys[j]
        if yi != yj:
            lo, hi = max(0.0, aj - ai), min(C, C + aj - ai)
        else:
            lo, hi = max(0.0, ai + aj - C), min(C, ai + aj)
        if hi - lo < eps:
            return False
        eta = 2.0 * K[i, j] - K[i, i] - K[j, j]
        if eta >= -eps:
            return False
        aj_new = aj - yj * (E[i] - E[j]) / eta
        aj_new = min(max(aj_new, lo), hi)
        if aj_new < eps * C:
            aj_new = 0.0
        elif aj_new > C * (1 - eps):
            aj_new = C
        if abs(aj_new - aj) < eps * (aj_new + aj + eps):
            return False
        ai_new = ai + yi * yj * (aj - aj_new)
        if ai_new < eps * C:
            ai_new = 0.0
        elif ai_new > C * (1 - eps):
            ai_new = C
        di, dj = ai_new - ai, aj_new - aj
        b1 = b - E[i] - yi * di * K[i, i] - yj * dj * K[i, j]
        b2 = b - E[j] - yi * di * K[i, j] - yj * dj * K[j, j]
        if 0 < ai_new < C:
            b_new = b1
        elif 0 < aj_new < C:
            b_new = b2
        else:
            b_new = 0.5 * (b1 + b2)
        E[:] += yi * di * K[i] + yj * dj * K[j] + (b_new - b)
        alpha[i], alpha[j], b = ai_new, aj_new, b_new
        history.append(objective())
        return True

    passes = 0
    steps = 0
    converged = False
    while steps < hyper.max_iter:
        changed = 0
        for i in range(n):
            r = ys[i] * E[i]  # y f - 1
            if (r < -tol and alpha[i] < C) or (r > tol and alpha[i] > 0):
                j = int(rng.integers(n - 1))
                j += j >= i
                if take_step(i, j):
                    changed += 1
                    steps += 1
        passes = passes + 1 if changed == 0 else 0
        if passes < hyper.max_passes:
            continue
        viol = np.flatnonzero(kkt_violations(alpha, ys, E + ys, C, tol))
        if len(viol) == 0:
            converged = True
            break
        progress = False
        for i in viol:
            for j in np.argsort(-np.abs(E[i] - E), kind="stable"):
                if take_step(i, int(j)):
                    progress = True
                    steps += 1
                    break
        if not progress:
            break
        passes = 0
    if not converged:
        log.warning("SMO stopped after %d steps with KKT violations remaining", steps)

    keep = alpha > 0
    return SvmModel(
        support_vectors=X[keep].copy(),
        dual_coefs=(alpha * ys)[keep],
        bias=float(b),
        kernel=hyper.kernel,
        gamma=float(gamma),
        C=C,
        classes=classes,
        objective_history=history,
        converged=converged,
    )


def predict_svm(model: SvmModel, x):
    """(label, decision value) for one instance."""
    f = float(model.decision_function(np.asarray(x, dtype=float).reshape(1, -1))[0])
    return (model.classes[1] if f >= 0 else model.classes[0]), f
