"""Versioned JSON model files.

Floats are written with Python's shortest round-trip repr, so a load gives
back bit-identical arrays. Arrays are stored row-major with their shape.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .deep import Encoder, MinMaxScaling, SoftmaxHead, StackedModel
from .errors import FileMissing, ParseError, VersionError
from .ingest import Standardization
from .shallow.adt import AdtModel, Splitter
from .shallow.forest import RfModel, Tree
from .shallow.multiclass import OvrModel, binary_decision
from .shallow.svm import SvmModel

SCHEMA_VERSION = 1
MODEL_TYPES = ("svm", "adt", "rf", "stacked_ae", "ovr_ensemble", "localizer")


@dataclass
class Localizer:
    """Layer-1 category model plus one Layer-2 model per category.

    ``layer2[cat]`` is None when the category holds a single Layer-2 class
    (then that class is implied) or when no model was trained for it.
    """

    layer1: "TrainedModel | None"  # None when there is a single category
    layer1_names: tuple[str, ...]
    layer2: dict
    layer2_classes: dict  # category name -> tuple of Layer-2 class ids
    class_names: dict = field(default_factory=dict)  # Layer-2 class id -> name

    @property
    def labels(self) -> tuple:
        return self.layer1_names

    @property
    def dim(self) -> int | None:
        if self.layer1 is not None:
            return self.layer1.dim
        dims = [m.dim for m in self.layer2.values() if m is not None]
        return dims[0] if dims else None


@dataclass
class TrainedModel:
    """A fitted model plus the preprocessing and metadata needed to apply it."""

    model: object
    preprocessing: Standardization | None = None
    feature_names: tuple = ()
    task: str = ""
    hyperparameters: dict = field(default_factory=dict)
    seed: int | None = None
    extras: dict = field(default_factory=dict)  # JSON-ready side data, e.g. per-location fault rates

    @property
    def labels(self) -> tuple:
        return tuple(self.model.labels)

    @property
    def dim(self) -> int:
        return self.model.dim

    def _prep(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        return self.preprocessing.apply(X) if self.preprocessing is not None else X

    def predict_proba(self, X) -> np.ndarray:
        return self.model.predict_proba(self._prep(X))

    def predict(self, X) -> np.ndarray:
        return np.asarray(self.model.predict(self._prep(X)))

    def decision_function(self, X) -> np.ndarray:
        """Signed confidence for the higher of two labels; >= 0 means that label."""
        if isinstance(self.model, (SvmModel, AdtModel)):
            return binary_decision(self.model, self._prep(X))
        P = self.predict_proba(X)
        return P[:, -1] - P[:, 0]


# ---------------------------------------------------------------------------
# encoding


def _arr(a) -> dict:
    a = np.asarray(a)
    kind = "int" if np.issubdtype(a.dtype, np.integer) or a.dtype == bool else "float"
    flat = a.reshape(-1).tolist()
    if kind == "float":
        flat = [_num(v) for v in flat]
    return {"shape": list(a.shape), "dtype": kind, "values": flat}


def _num(v):
    v = float(v)
    return v if math.isfinite(v) else None


def _unarr(d) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in d["shape"])
        if d["dtype"] == "int":
            a = np.array([int(v) for v in d["values"]], dtype=int)
        else:
            a = np.array([float("nan") if v is None else float(v) for v in d["values"]], dtype=float)
        return a.reshape(shape)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"corrupted numeric array: {exc}") from None


def _label_list(labels):
    return [v if isinstance(v, str) else int(v) for v in labels]


def encode_model(m) -> dict:
    if isinstance(m, SvmModel):
        return {
            "model_type": "svm",
            "scalars": {"bias": m.bias, "gamma": m.gamma, "C": m.C, "kernel": m.kernel,
                        "converged": m.converged},
            "label_vocabulary": _label_list(m.classes),
            "parameters": {"support_vectors": _arr(m.support_vectors), "dual_coefs": _arr(m.dual_coefs)},
        }
    if isinstance(m, AdtModel):
        s = m.splitters
        return {
            "model_type": "adt",
            "scalars": {"root": m.root, "rounds": m.rounds, "dim": m.dim},
            "label_vocabulary": _label_list(m.classes),
            "parameters": {
                "parent_index": _arr(np.array([-1 if x.parent is None else x.parent[0] for x in s], dtype=int)),
                "parent_branch": _arr(np.array([0 if x.parent is None else int(x.parent[1]) for x in s], dtype=int)),
                "feature": _arr(np.array([x.feature for x in s], dtype=int)),
                "threshold": _arr(np.array([x.threshold for x in s], dtype=float)),
                "value_true": _arr(np.array([x.value_true for x in s], dtype=float)),
                "value_false": _arr(np.array([x.value_false for x in s], dtype=float)),
            },
        }
    if isinstance(m, RfModel):
        return {
            "model_type": "rf",
            "scalars": {"oob_error": _num(m.oob_error), "dim": m.dim, "per_tree_seed": m.per_tree_seed},
            "label_vocabulary": _label_list(m.classes),
            "parameters": {"feature_importances": _arr(m.feature_importances)},
            "trees": [
                {k: _arr(getattr(t, k)) for k in ("feature", "threshold", "left", "right", "counts")}
                for t in m.trees
            ],
        }
    if isinstance(m, OvrModel):
        return {
            "model_type": "ovr_ensemble",
            "scalars": {"algo": m.algo},
            "label_vocabulary": _label_list(m.classes),
            "parameters": {},
            "submodels": [encode_model(b) for b in m.models],
        }
    if isinstance(m, StackedModel):
        params = {}
        for k, e in enumerate(m.encoders):
            params[f"encoder{k}.W"] = _arr(e.W)
            params[f"encoder{k}.b"] = _arr(e.b)
        params["softmax.W"] = _arr(m.softmax.W)
        params["softmax.b"] = _arr(m.softmax.b)
        pre = None
        if m.scaling is not None:
            pre = {"kind": "minmax", "low": _arr(m.scaling.low), "span": _arr(m.scaling.span)}
        return {
            "model_type": "stacked_ae",
            "scalars": {"n_encoders": len(m.encoders), "fine_tuned": m.fine_tuned, "ae1_mse": _num(m.ae1_mse)},
            "label_vocabulary": _label_list(m.classes),
            "inner_preprocessing": pre,
            "hyperparameters": m.hyper,
            "parameters": params,
        }
    if isinstance(m, Localizer):
        return {
            "model_type": "localizer",
            "scalars": {},
            "label_vocabulary": list(m.layer1_names),
            "parameters": {},
            "layer1": None if m.layer1 is None else _encode_trained(m.layer1),
            "layer2": {
                cat: None if sub is None else _encode_trained(sub) for cat, sub in sorted(m.layer2.items())
            },
            "layer2_classes": {cat: _label_list(v) for cat, v in sorted(m.layer2_classes.items())},
            "class_names": {str(k): v for k, v in sorted(m.class_names.items())},
        }
    raise TypeError(f"cannot persist {type(m).__name__}")


def decode_model(d: dict):
    try:
        kind = d["model_type"]
        sc = d.get("scalars", {})
        labels = tuple(d["label_vocabulary"])
        p = {k: _unarr(v) for k, v in d.get("parameters", {}).items()}
        if kind == "svm":
            return SvmModel(
                p["support_vectors"], p["dual_coefs"], float(sc["bias"]), sc["kernel"], float(sc["gamma"]),
                float(sc["C"]), labels, converged=bool(sc.get("converged", True)),
            )
        if kind == "adt":
            splitters = [
                Splitter(
                    None if pi < 0 else (int(pi), bool(pb)), int(f), float(t), float(a), float(b)
                )
                for pi, pb, f, t, a, b in zip(
                    p["parent_index"], p["parent_branch"], p["feature"], p["threshold"],
                    p["value_true"], p["value_false"],
                )
            ]
            return AdtModel(float(sc["root"]), splitters, int(sc["rounds"]), int(sc["dim"]), labels)
        if kind == "rf":
            trees = [Tree(*(_unarr(t[k]) for k in ("feature", "threshold", "left", "right", "counts")))
                     for t in d["trees"]]
            oob = sc["oob_error"]
            return RfModel(trees, sc["per_tree_seed"], float("nan") if oob is None else float(oob),
                           p["feature_importances"], labels, int(sc["dim"]))
        if kind == "ovr_ensemble":
            return OvrModel(sc["algo"], labels, [decode_model(s) for s in d["submodels"]])
        if kind == "stacked_ae":
            n = int(sc["n_encoders"])
            encoders = [Encoder(p[f"encoder{k}.W"], p[f"encoder{k}.b"]) for k in range(n)]
            pre = d.get("inner_preprocessing")
            scaling = MinMaxScaling(_unarr(pre["low"]), _unarr(pre["span"])) if pre else None
            mse = sc.get("ae1_mse")
            return StackedModel(
                encoders, SoftmaxHead(p["softmax.W"], p["softmax.b"]), labels, scaling,
                bool(sc["fine_tuned"]), float("nan") if mse is None else float(mse),
                d.get("hyperparameters", {}),
            )
        if kind == "localizer":
            return Localizer(
                None if d["layer1"] is None else _decode_trained(d["layer1"]),
                labels,
                {cat: None if sub is None else _decode_trained(sub) for cat, sub in d["layer2"].items()},
                {cat: tuple(v) for cat, v in d["layer2_classes"].items()},
                {int(k): v for k, v in d.get("class_names", {}).items()},
            )
    except ParseError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed model file: {exc!r}") from None
    raise ParseError(f"unknown model_type {d.get('model_type')!r}")


def _encode_trained(tm: TrainedModel) -> dict:
    pre = None
    if tm.preprocessing is not None:
        pre = {"kind": "standardize", "mean": _arr(tm.preprocessing.mean), "stddev": _arr(tm.preprocessing.stddev)}
    return {
        "task": tm.task,
        "hyperparameters": tm.hyperparameters,
        "seed": tm.seed,
        "feature_names": list(tm.feature_names),
        "preprocessing": pre,
        "extras": tm.extras,
        "model": encode_model(tm.model),
    }


def _decode_trained(d: dict) -> TrainedModel:
    try:
        pre = d.get("preprocessing")
        stats = Standardization(_unarr(pre["mean"]), _unarr(pre["stddev"])) if pre else None
        return TrainedModel(
            decode_model(d["model"]), stats, tuple(d.get("feature_names", ())), d.get("task", ""),
            d.get("hyperparameters", {}), d.get("seed"), d.get("extras", {}),
        )
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed model file: {exc!r}") from None


def dumps_model(tm: TrainedModel) -> str:
    doc = {"schema_version": SCHEMA_VERSION, **_encode_trained(tm)}
    return json.dumps(doc, sort_keys=True, indent=1, allow_nan=False) + "\n"


def loads_model(text: str, source="<string>") -> TrainedModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"not valid JSON: {exc}", source) from None
    if not isinstance(doc, dict) or "schema_version" not in doc:
        raise ParseError("missing schema_version", source)
    if doc["schema_version"] != SCHEMA_VERSION:
        raise VersionError(f"{source}: schema_version {doc['schema_version']} != supported {SCHEMA_VERSION}")
    return _decode_trained(doc)


@contextmanager
def atomic_output(path):
    """Yield a temp path next to ``path``; it replaces ``path`` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def atomic_write(path, text: str) -> None:
    with atomic_output(path) as tmp:
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def save_model(tm, path) -> None:
    if not isinstance(tm, TrainedModel):
        tm = TrainedModel(tm)
    atomic_write(path, dumps_model(tm))


def load_model(path) -> TrainedModel:
    path = Path(path)
    if not path.is_file():
        raise FileMissing(f"missing model file: {path}")
    return loads_model(path.read_text(encoding="utf-8"), str(path))
