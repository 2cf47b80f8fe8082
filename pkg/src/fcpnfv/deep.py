"""Sparse autoencoders, greedy layer-wise stacking and a softmax head.

All training is full-batch gradient descent with momentum. A step that would
raise the loss by more than ``LOSS_SLACK`` is rejected: the step size is
halved and the momentum reset. Accepted steps grow the step size by 5%.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateLabels, NonFiniteLoss, ShapeError
from .ingest import stratified_parts

log = logging.getLogger(__name__)

LOSS_SLACK = 1e-9
RHO_CLAMP = 1e-12
MAX_HALVINGS = 40


def sigmoid(z):
    # overflow-safe for large |z|
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softmax(Z):
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def glorot(rng, fan_out, fan_in):
    r = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-r, r, size=(fan_out, fan_in))


# ---------------------------------------------------------------------------
# optimizer


@dataclass(frozen=True)
class DescentTrace:
    losses: list
    step_size: float
    rejected: int


def descend(params: list[np.ndarray], fun: Callable, epochs: int, lr: float, momentum: float):
    """Minimize ``fun(params) -> (loss, grads)`` in place; returns a DescentTrace."""
    loss, grads = fun(params)
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"initial loss is {loss}")
    velocity = [np.zeros_like(p) for p in params]
    losses = [loss]
    rejected = 0
    for _ in range(epochs):
        for attempt in range(MAX_HALVINGS + 1):
            vel = [momentum * v - lr * g for v, g in zip(velocity, grads)]
            trial = [p + v for p, v in zip(params, vel)]
            t_loss, t_grads = fun(trial)
            if np.isfinite(t_loss) and t_loss <= loss + LOSS_SLACK:
                break
            rejected += 1
            lr *= 0.5
            velocity = [np.zeros_like(p) for p in params]
        else:
            if not np.isfinite(t_loss):
                raise NonFiniteLoss(f"loss stayed non-finite after {MAX_HALVINGS} halvings")
            # no descent direction left at this precision: stop early
            break
        for p, t in zip(params, trial):
            p[...] = t
        velocity = vel
        loss, grads = t_loss, t_grads
        losses.append(loss)
        lr *= 1.05
    return DescentTrace(losses, lr, rejected)


# ---------------------------------------------------------------------------
# sparse autoencoder layer


@dataclass(frozen=True)
class SparseHyper:
    rho: float = 0.1
    beta: float = 4.0
    l2: float = 0.001
    epochs: int = 400
    step: float = 1.0
    momentum: float = 0.9

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        if self.beta < 0 or self.l2 < 0 or self.epochs < 0:
            raise ValueError("beta, l2 and epochs must be >= 0")
        if not (self.step > 0 and 0 <= self.momentum < 1):
            raise ValueError("step must be > 0 and momentum in [0, 1)")


@dataclass
class AutoencoderLayer:
    W1: np.ndarray  # (H, D)
    b1: np.ndarray
    W2: np.ndarray  # (D, H)
    b2: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.W1.shape

    def params(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2]

    def encode(self, X) -> np.ndarray:
        return encode(self, X)

    def reconstruct(self, X) -> np.ndarray:
        return sigmoid(encode(self, X) @ self.W2.T + self.b2)


def init_layer(d: int, h: int, seed: int) -> AutoencoderLayer:
    rng = np.random.default_rng(seed)
    W1 = glorot(rng, h, d)
    W2 = glorot(rng, d, h)
    return AutoencoderLayer(W1, np.zeros(h), W2, np.zeros(d))


def _check_batch(layer, X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ShapeError("batch must be a nonempty 2-D array")
    if X.shape[1] != layer.W1.shape[1]:
        raise ShapeError(f"batch has {X.shape[1]} features, layer expects {layer.W1.shape[1]}")
    return X


def kl_divergence(rho, rho_hat):
    rho_hat = np.clip(rho_hat, RHO_CLAMP, 1 - RHO_CLAMP)
    return rho * np.log(rho / rho_hat) + (1 - rho) * np.log((1 - rho) / (1 - rho_hat))


def _ae_loss_grad(params, X, hyper: SparseHyper, want_grad=True):
    W1, b1, W2, b2 = params
    n = X.shape[0]
    A = sigmoid(X @ W1.T + b1)
    R = sigmoid(A @ W2.T + b2)
    diff = R - X
    rho_hat = A.mean(axis=0)
    loss = 0.5 * np.sum(diff * diff) / n
    if hyper.beta:
        loss += hyper.beta * np.sum(kl_divergence(hyper.rho, rho_hat))
    if hyper.l2:
        loss += 0.5 * hyper.l2 * (np.sum(W1 * W1) + np.sum(W2 * W2))
    if not want_grad:
        return loss, None
    d_out = diff * R * (1 - R) / n
    gW2 = d_out.T @ A + hyper.l2 * W2
    gb2 = d_out.sum(axis=0)
    d_hid = d_out @ W2
    if hyper.beta:
        rh = np.clip(rho_hat, RHO_CLAMP, 1 - RHO_CLAMP)
        d_hid = d_hid + hyper.beta * (-hyper.rho / rh + (1 - hyper.rho) / (1 - rh)) / n
    d_hid *= A * (1 - A)
    gW1 = d_hid.T @ X + hyper.l2 * W1
    gb1 = d_hid.sum(axis=0)
    return loss, [gW1, gb1, gW2, gb2]


def ae_loss(layer: AutoencoderLayer, X, hyper: SparseHyper = SparseHyper()) -> float:
    """Mean half squared reconstruction error + beta * sum KL(rho || rho_hat)
    + (l2 / 2) * (|W1|^2 + |W2|^2)."""
    X = _check_batch(layer, X)
    return float(_ae_loss_grad(layer.params(), X, hyper, want_grad=False)[0])


def ae_grad(layer: AutoencoderLayer, X, hyper: SparseHyper = SparseHyper()) -> AutoencoderLayer:
    X = _check_batch(layer, X)
    _, g = _ae_loss_grad(layer.params(), X, hyper)
    return AutoencoderLayer(*g)


def ae_train(X, size: int, hyper: SparseHyper = SparseHyper(), seed: int = 0, trace: list | None = None):
    X = np.asarray(X, dtype=float)
    if size < 1:
        raise ValueError("hidden size must be >= 1")
    layer = init_layer(X.shape[1], size, seed)
    _check_batch(layer, X)
    params = layer.params()
    result = descend(
        params, lambda p: _ae_loss_grad(p, X, hyper), hyper.epochs, hyper.step, hyper.momentum
    )
    if trace is not None:
        trace.extend(result.losses)
    return AutoencoderLayer(*params)


def encode(layer, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    W, b = (layer.W1, layer.b1) if isinstance(layer, AutoencoderLayer) else (layer.W, layer.b)
    if X.shape[-1] != W.shape[1]:
        raise ShapeError(f"input has {X.shape[-1]} features, encoder expects {W.shape[1]}")
    return sigmoid(X @ W.T + b)


def reconstruction_mse(layer: AutoencoderLayer, X) -> float:
    X = np.asarray(X, dtype=float)
    return float(np.mean((layer.reconstruct(X) - X) ** 2))


# ---------------------------------------------------------------------------
# softmax head


@dataclass
class SoftmaxHead:
    W: np.ndarray  # (K, H)
    b: np.ndarray

    def probabilities(self, H) -> np.ndarray:
        H = np.asarray(H, dtype=float)
        if H.shape[-1] != self.W.shape[1]:
            raise ShapeError(f"input has {H.shape[-1]} features, softmax expects {self.W.shape[1]}")
        return softmax(np.atleast_2d(H) @ self.W.T + self.b)


def _onehot(yk, K):
    T = np.zeros((len(yk), K))
    T[np.arange(len(yk)), yk] = 1.0
    return T


def _softmax_loss_grad(params, H, T, l2=0.0):
    W, b = params
    P = softmax(H @ W.T + b)
    n = len(H)
    loss = -np.sum(T * np.log(np.clip(P, 1e-300, None))) / n + 0.5 * l2 * np.sum(W * W)
    dZ = (P - T) / n
    return loss, [dZ.T @ H + l2 * W, dZ.sum(axis=0)]


def class_index(y, classes=None):
    y = np.asarray(y)
    classes = tuple(np.unique(y).tolist()) if classes is None else tuple(classes)
    if len(classes) < 2:
        raise DegenerateLabels(f"need at least two classes, got {classes}")
    lookup = {c: k for k, c in enumerate(classes)}
    try:
        yk = np.array([lookup[v] for v in y.tolist()], dtype=int)
    except KeyError as exc:
        raise DegenerateLabels(f"label {exc.args[0]} not in {classes}") from None
    return yk, classes


def softmax_train(
    H, y, epochs: int = 400, seed: int = 0, step: float = 1.0, momentum: float = 0.9, l2: float = 0.0,
    classes=None,
):
    """Cross-entropy softmax regression; returns (head, classes)."""
    H = np.asarray(H, dtype=float)
    yk, classes = class_index(y, classes)
    K = len(classes)
    rng = np.random.default_rng(seed)
    params = [glorot(rng, K, H.shape[1]), np.zeros(K)]
    T = _onehot(yk, K)
    descend(params, lambda p: _softmax_loss_grad(p, H, T, l2), epochs, step, momentum)
    return SoftmaxHead(*params), classes


# ---------------------------------------------------------------------------
# stack


@dataclass
class Encoder:
    W: np.ndarray
    b: np.ndarray


@dataclass
class MinMaxScaling:
    low: np.ndarray
    span: np.ndarray

    @classmethod
    def fit(cls, X):
        X = np.asarray(X, dtype=float)
        low = X.min(axis=0)
        span = X.max(axis=0) - low
        return cls(low, np.where(span > 0, span, 1.0))

    def apply(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != len(self.low):
            raise ShapeError(f"expected {len(self.low)} features, got {X.shape[-1]}")
        return (X - self.low) / self.span


@dataclass
class StackedModel:
    encoders: list[Encoder]
    softmax: SoftmaxHead
    classes: tuple
    scaling: MinMaxScaling | None = None
    fine_tuned: bool = False
    ae1_mse: float = float("nan")
    hyper: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.encoders[0].W.shape[1]

    @property
    def labels(self) -> tuple:
        return self.classes

    def deepest(self, X) -> np.ndarray:
        """h^(n): activation of the last encoder."""
        H = np.asarray(X, dtype=float)
        if H.ndim == 1:
            H = H[None, :]
        if self.scaling is not None:
            H = self.scaling.apply(H)
        for enc in self.encoders:
            H = encode(enc, H)
        return H

    def predict_proba(self, X) -> np.ndarray:
        return self.softmax.probabilities(self.deepest(X))

    def predict(self, X) -> np.ndarray:
        return np.asarray(self.classes)[np.argmax(self.predict_proba(X), axis=1)]


def _stack_loss_grad(params, X, T):
    """Cross-entropy of encoders + softmax; params = [W_1, b_1, ..., W_n, b_n, Ws, bs]."""
    n_enc = (len(params) - 2) // 2
    acts = [X]
    for k in range(n_enc):
        acts.append(sigmoid(acts[-1] @ params[2 * k].T + params[2 * k + 1]))
    Ws, bs = params[-2:]
    P = softmax(acts[-1] @ Ws.T + bs)
    n = len(X)
    loss = -np.sum(T * np.log(np.clip(P, 1e-300, None))) / n
    delta = (P - T) / n
    grads = [None] * len(params)
    grads[-2] = delta.T @ acts[-1]
    grads[-1] = delta.sum(axis=0)
    back = delta @ Ws
    for k in reversed(range(n_enc)):
        A = acts[k + 1]
        d = back * A * (1 - A)
        grads[2 * k] = d.T @ acts[k]
        grads[2 * k + 1] = d.sum(axis=0)
        back = d @ params[2 * k]
    return loss, grads


def stack_loss(model: StackedModel, X, y) -> float:
    yk, _ = class_index(y, model.classes)
    return float(_stack_loss_grad(_stack_params(model), model.scaling.apply(X) if model.scaling else X,
                                  _onehot(yk, len(model.classes)))[0])


def _stack_params(model: StackedModel) -> list[np.ndarray]:
    out = []
    for e in model.encoders:
        out += [e.W, e.b]
    return out + [model.softmax.W, model.softmax.b]


def train_stack(
    X,
    y,
    sizes: Sequence[int] = (100, 50),
    hyper1: SparseHyper = SparseHyper(),
    hyper2: SparseHyper = SparseHyper(epochs=100),
    softmax_epochs: int = 400,
    finetune_epochs: int = 400,
    seed: int = 0,
    scale: bool = True,
    classes=None,
) -> StackedModel:
    """Greedy layer-wise pretraining of sparse autoencoders, a softmax head on
    the deepest codes, then end-to-end fine-tuning on cross-entropy.

    Layer k is seeded with ``seed + k``; the softmax head with ``seed + len(sizes)``.
    """
    X = np.asarray(X, dtype=float)
    yk, classes = class_index(y, classes)
    sizes = list(sizes)
    if any(b >= a for a, b in zip(sizes, sizes[1:])):
        log.warning("hidden sizes %s are not decreasing", sizes)
    scaling = MinMaxScaling.fit(X) if scale else None
    Xs = scaling.apply(X) if scaling else X

    hypers = [hyper1, hyper2] + [hyper2] * max(0, len(sizes) - 2)
    encoders, H = [], Xs
    ae1_mse = float("nan")
    for k, (h, hp) in enumerate(zip(sizes, hypers)):
        layer = ae_train(H, h, hp, seed + k)
        if k == 0:
            ae1_mse = reconstruction_mse(layer, H)
        encoders.append(Encoder(layer.W1.copy(), layer.b1.copy()))
        H = layer.encode(H)
    head, _ = softmax_train(H, [classes[i] for i in yk], softmax_epochs, seed + len(sizes), classes=classes)
    model = StackedModel(
        encoders, head, classes, scaling, False, ae1_mse,
        hyper={
            "sizes": sizes,
            "hyper1": _hyper_dict(hyper1),
            "hyper2": _hyper_dict(hyper2),
            "softmax_epochs": softmax_epochs,
            "finetune_epochs": finetune_epochs,
            "seed": seed,
        },
    )
    if finetune_epochs <= 0:
        return model
    before = float(np.mean(np.argmax(model.softmax.probabilities(H), axis=1) == yk))
    params = [p.copy() for p in _stack_params(model)]
    T = _onehot(yk, len(classes))
    descend(params, lambda p: _stack_loss_grad(p, Xs, T), finetune_epochs, hyper1.step, hyper1.momentum)
    tuned = StackedModel(
        [Encoder(params[2 * k], params[2 * k + 1]) for k in range(len(sizes))],
        SoftmaxHead(params[-2], params[-1]),
        classes, scaling, True, ae1_mse, model.hyper,
    )
    after = float(np.mean(tuned.predict(X) == np.asarray(classes)[yk]))
    if after < before - 0.01:
        log.warning("fine-tuning lowered training accuracy %.4f -> %.4f; keeping pretrained stack", before, after)
        return model
    return tuned


def _hyper_dict(h: SparseHyper) -> dict:
    return {k: getattr(h, k) for k in ("rho", "beta", "l2", "epochs", "step", "momentum")}


def predict_stack(model: StackedModel, x):
    p = model.predict_proba(np.asarray(x, dtype=float).reshape(1, -1))[0]
    return model.classes[int(np.argmax(p))], p


# ---------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class SweepData:
    X_train: np.ndarray
    y_train: np.ndarray
    X_val: np.ndarray
    y_val: np.ndarray


def sweep_split(X, y, seed: int, val_fraction: float = 0.2) -> SweepData:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    tr, va = stratified_parts(y, (1 - val_fraction, val_fraction), seed)
    return SweepData(X[tr], y[tr], X[va], y[va])


def _val_accuracy(model: StackedModel, data: SweepData) -> float:
    return float(np.mean(model.predict(data.X_val) == data.y_val))


def sweep_hidden_sizes(
    data: SweepData,
    h1_values: Sequence[int],
    h2_values: Sequence[int],
    hyper1: SparseHyper = SparseHyper(),
    hyper2: SparseHyper = SparseHyper(epochs=100),
    softmax_epochs: int = 400,
    finetune_epochs: int = 400,
    seed: int = 0,
) -> list[dict]:
    """One stack per (H1, H2) cell, all with the same seed.

    ``accuracy`` is validation accuracy and ``mse`` the AE1 reconstruction
    MSE on the (scaled) training inputs.
    """
    if not h1_values or not h2_values:
        raise ValueError("hidden-size lists must be nonempty")
    rows = []
    for h1 in h1_values:
        for h2 in h2_values:
            model = train_stack(
                data.X_train, data.y_train, (h1, h2), hyper1, hyper2, softmax_epochs, finetune_epochs, seed
            )
            rows.append(
                {"h1": int(h1), "h2": int(h2), "accuracy": _val_accuracy(model, data), "mse": model.ae1_mse}
            )
    return rows


def sweep_sparsity(
    data: SweepData,
    betas: Sequence[float],
    rhos: Sequence[float],
    sizes: Sequence[int] = (100, 50),
    base1: SparseHyper = SparseHyper(),
    base2: SparseHyper = SparseHyper(epochs=100),
    softmax_epochs: int = 400,
    finetune_epochs: int = 400,
    seed: int = 0,
) -> list[dict]:
    """Grid search over (beta, rho), applied to both autoencoders."""
    rows = []
    for beta in betas:
        for rho in rhos:
            h1 = replace(base1, beta=float(beta), rho=float(rho))
            h2 = replace(base2, beta=float(beta), rho=float(rho))
            model = train_stack(data.X_train, data.y_train, sizes, h1, h2, softmax_epochs, finetune_epochs, seed)
            rows.append(
                {"beta": float(beta), "rho": float(rho), "accuracy": _val_accuracy(model, data), "mse": model.ae1_mse}
            )
    return rows
