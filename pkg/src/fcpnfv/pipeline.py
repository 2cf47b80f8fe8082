"""Two-stage fault detection followed by localization or severity forecast.

Routing per record::

    stage 1  NoFault -> stop
             Fault   -> stage 2  Manifest  -> localize (Layer-1, Layer-2)
                                 Impending -> severity forecast + location hint
"""

from __future__ import annotations

import csv
import io
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FcpError, LabelError, ModelMissing, ShapeError
from .ingest import DesignMatrix
from .persist import Localizer, TrainedModel, load_model

log = logging.getLogger(__name__)

NO_FAULT, FAULT = "NoFault", "Fault"
MANIFEST, IMPENDING = "Manifest", "Impending"
FORECASTS = ("Warning", "Minor", "Major", "Critical")
STAGES = ("stage1", "stage2", "localize", "severity")

# fault_severity of the Telstra path is 0/1/2 (none, few, many faults)
TELSTRA_FORECASTS = {0: "Warning", 1: "Minor", 2: "Major"}
# KDE severity 1..3 follows the warning/major/critical reading of the table
KDE_FORECASTS = {1: "Warning", 2: "Major", 3: "Critical"}


@dataclass(frozen=True)
class SeverityMapping:
    """Severity code -> 'none' | 'impending' | 'manifest'."""

    stage_of: dict = field(default_factory=lambda: {0: "none", 1: "impending", 2: "manifest", 3: "manifest"})

    def __post_init__(self):
        bad = {k: v for k, v in self.stage_of.items() if v not in ("none", "impending", "manifest")}
        if bad:
            raise ConfigError(f"unknown stage names in severity mapping: {bad}")

    def stage(self, severity: int) -> str:
        try:
            return self.stage_of[int(severity)]
        except KeyError:
            raise LabelError(f"severity {severity} not in mapping {sorted(self.stage_of)}") from None

    def to_dict(self) -> dict:
        return {str(k): v for k, v in sorted(self.stage_of.items())}

    @classmethod
    def from_dict(cls, d: dict) -> "SeverityMapping":
        return cls({int(k): v for k, v in d.items()})


# ---------------------------------------------------------------------------
# training-set builders


def stage1_training_set(m: DesignMatrix, mapping: SeverityMapping = SeverityMapping()) -> DesignMatrix:
    """All rows; label 1 = Fault, 0 = NoFault."""
    y = [0 if mapping.stage(s) == "none" else 1 for s in m.labels]
    return DesignMatrix(m.rows, y, m.feature_names, m.ids, m.schema)


def stage2_training_set(m: DesignMatrix, mapping: SeverityMapping = SeverityMapping()) -> DesignMatrix:
    """Fault rows only; label 1 = Manifest, 0 = Impending."""
    stages = [mapping.stage(s) for s in m.labels]
    keep = np.array([s != "none" for s in stages], dtype=bool)
    sub = m.take(np.flatnonzero(keep))
    y = [1 if s == "manifest" else 0 for s, k in zip(stages, keep) if k]
    return DesignMatrix(sub.rows, y, sub.feature_names, sub.ids, sub.schema)


def severity_training_set(
    m: DesignMatrix, mapping: SeverityMapping = SeverityMapping(), faults_only: bool = False
) -> DesignMatrix:
    """Severity labels as-is; ``faults_only`` drops rows mapped to 'none' (KDE path)."""
    if not faults_only:
        return m
    keep = [i for i, s in enumerate(m.labels) if mapping.stage(s) != "none"]
    return m.take(keep)


def location_fault_rates(m: DesignMatrix, mapping: SeverityMapping = SeverityMapping(),
                         location_feature: str = "location_index") -> dict:
    """Historical fraction of fault records per location index."""
    if location_feature not in m.feature_names:
        return {}
    col = m.rows[:, m.feature_names.index(location_feature)].astype(int)
    fault = np.array([mapping.stage(s) != "none" for s in m.labels], dtype=float)
    out = {}
    for loc in np.unique(col):
        sel = col == loc
        out[str(int(loc))] = float(fault[sel].mean())
    return out


def layer1_vocabulary(taxonomy) -> tuple[str, ...]:
    """Layer-1 categories in order of first appearance by class id."""
    names = []
    for c in taxonomy.classes:
        cat = c.layer1 or "Unassigned"
        if cat not in names:
            names.append(cat)
    return tuple(names)


def train_localizer(X, class_ids, taxonomy, fit) -> Localizer:
    """Hierarchical localizer over the taxonomy's Layer-1 categories.

    ``fit(X, y)`` returns a model with ``predict_proba`` and ``labels``.
    Rows without a class (None or 0) are ignored. The Layer-1 model is
    trained on category indices into the Layer-1 vocabulary.
    """
    X = np.asarray(X, dtype=float)
    ids = np.array([0 if c is None else int(c) for c in class_ids], dtype=int)
    keep = ids > 0
    X, ids = X[keep], ids[keep]
    names = layer1_vocabulary(taxonomy)
    cat_of = {c.id: names.index(c.layer1 or "Unassigned") for c in taxonomy.classes}
    unknown = sorted(set(ids.tolist()) - set(cat_of))
    if unknown:
        raise LabelError(f"class ids {unknown} not in taxonomy")
    y1 = np.array([cat_of[i] for i in ids], dtype=int)
    layer1 = fit(X, y1) if len(names) > 1 else None
    layer2, layer2_classes = {}, {}
    for k, cat in enumerate(names):
        members = tuple(c.id for c in taxonomy.classes if cat_of[c.id] == k)
        layer2_classes[cat] = members
        present = sorted(set(ids[y1 == k].tolist()))
        if len(members) > 1 and len(present) > 1:
            sel = y1 == k
            layer2[cat] = fit(X[sel], ids[sel])
        else:
            layer2[cat] = None
    return Localizer(layer1, names, layer2, layer2_classes, {c.id: c.name for c in taxonomy.classes})


# ---------------------------------------------------------------------------
# verdicts


@dataclass(frozen=True)
class LocationHint:
    location: int
    fault_rate: float | None  # None for a location unseen in training


@dataclass
class FcpVerdict:
    id: object
    stage1: str | None = None
    stage2: str | None = None
    layer1_category: str | None = None
    layer2_class: str | None = None
    predicted_severity: str | None = None
    location_hint: LocationHint | None = None
    confidences: dict = field(default_factory=dict)
    flags: tuple = ()
    error: str | None = None
    error_stage: str | None = None

    def problems(self) -> list[str]:
        """Violations of the optional-field presence rules (empty when valid).

        A record whose processing failed at stage s keeps the outputs of the
        stages before s, and every field from s on is absent.
        """
        out = []
        if self.error is not None and self.error_stage not in STAGES:
            return [f"unknown error stage {self.error_stage!r}"]
        reached = STAGES.index(self.error_stage) if self.error is not None else len(STAGES)
        if reached > 0:
            if self.stage1 not in (NO_FAULT, FAULT):
                out.append(f"stage1 is {self.stage1!r}")
        elif self.stage1 is not None:
            out.append("stage1 set although stage 1 failed")
        stage2_due = self.stage1 == FAULT and reached > 1
        if stage2_due != (self.stage2 is not None):
            out.append("stage2 present iff stage1 = Fault")
        if self.stage2 is not None and self.stage2 not in (MANIFEST, IMPENDING):
            out.append(f"stage2 is {self.stage2!r}")
        layers_due = self.stage2 == MANIFEST and reached > 2
        if layers_due != (self.layer1_category is not None):
            out.append("layer1 present iff stage2 = Manifest")
        if self.layer2_class is not None and not layers_due:
            out.append("layer2 present without Manifest")
        if layers_due and self.layer2_class is None and "no_layer2_model" not in self.flags:
            out.append("layer2 missing without the no_layer2_model flag")
        sev_due = self.stage2 == IMPENDING and reached > 3
        if sev_due != (self.predicted_severity is not None):
            out.append("predicted_severity present iff stage2 = Impending")
        if self.predicted_severity is not None and self.predicted_severity not in FORECASTS:
            out.append(f"predicted_severity is {self.predicted_severity!r}")
        if self.location_hint is not None and not sev_due:
            out.append("location hint without a severity forecast")
        return out

    def to_dict(self) -> dict:
        hint = self.location_hint
        return {
            "id": self.id,
            "stage1": self.stage1,
            "stage2": self.stage2,
            "layer1": self.layer1_category,
            "layer2": self.layer2_class,
            "severity": self.predicted_severity,
            "location": None if hint is None else hint.location,
            "location_fault_rate": None if hint is None else hint.fault_rate,
            "confidences": dict(sorted(self.confidences.items())),
            "flags": list(self.flags),
            "error": self.error,
            "error_stage": self.error_stage,
        }


# ---------------------------------------------------------------------------
# config


@dataclass
class PipelineConfig:
    stage1: object | None
    stage2: object | None
    localizer: Localizer | None
    severity: object | None
    feature_names: tuple = ()
    mapping: SeverityMapping = field(default_factory=SeverityMapping)
    forecast_names: dict = field(default_factory=lambda: dict(KDE_FORECASTS))
    location_feature: str | None = "location_index"
    location_fault_rate: dict = field(default_factory=dict)

    def validate(self) -> "PipelineConfig":
        d = len(self.feature_names)
        for name in ("stage1", "stage2", "localizer", "severity"):
            m = getattr(self, name)
            dim = getattr(m, "dim", None)
            if m is not None and dim is not None and d and dim != d:
                raise ConfigError(f"{name} model expects {dim} features, schema has {d}")
        bad = [v for v in self.forecast_names.values() if v not in FORECASTS]
        if bad:
            raise ConfigError(f"forecast names {bad} not in {FORECASTS}")
        return self

    @property
    def location_column(self) -> int | None:
        if self.location_feature and self.location_feature in self.feature_names:
            return self.feature_names.index(self.location_feature)
        return None


def load_config(path) -> PipelineConfig:
    """Config JSON: model file paths (relative to the config file), the
    severity mapping and optional overrides.

    {"models": {"stage1": ..., "stage2": ..., "localizer": ..., "severity": ...},
     "severity_mapping": {"0": "none", ...}, "forecast_names": {"1": "Warning", ...},
     "feature_names": [...], "location_feature": "location_index"}
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ModelMissing(f"missing pipeline config: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from None
    models = {}
    for slot in ("stage1", "stage2", "localizer", "severity"):
        ref = (doc.get("models") or {}).get(slot)
        if ref is None:
            models[slot] = None
            continue
        tm = load_model(path.parent / ref)
        models[slot] = tm.model if slot == "localizer" else tm
    sev = models["severity"]
    extras = sev.extras if isinstance(sev, TrainedModel) else {}
    names = doc.get("feature_names")
    if names is None:
        for slot in ("stage1", "stage2", "severity"):
            if isinstance(models[slot], TrainedModel) and models[slot].feature_names:
                names = models[slot].feature_names
                break
    forecasts = doc.get("forecast_names") or extras.get("forecast_names") or {str(k): v for k, v in KDE_FORECASTS.items()}
    return PipelineConfig(
        models["stage1"], models["stage2"], models["localizer"], models["severity"],
        tuple(names or ()),
        SeverityMapping.from_dict(doc["severity_mapping"]) if "severity_mapping" in doc else SeverityMapping(),
        {int(k): v for k, v in forecasts.items()},
        doc.get("location_feature", "location_index"),
        dict(doc.get("location_fault_rate") or extras.get("location_fault_rate") or {}),
    ).validate()


# ---------------------------------------------------------------------------
# stages


def _row(x, config: PipelineConfig) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if config.feature_names and len(x) != len(config.feature_names):
        raise ShapeError(f"record has {len(x)} features, schema has {len(config.feature_names)}")
    if not np.all(np.isfinite(x)):
        raise ShapeError("record contains NaN or Inf")
    return x


def _decide(model, x, name):
    if model is None:
        raise ModelMissing(f"no {name} model configured")
    return float(np.asarray(model.decision_function(x[None, :])).reshape(-1)[0])


def detect_stage1(x, config: PipelineConfig):
    """(NoFault | Fault, decision value); decision >= 0 means Fault."""
    v = _decide(config.stage1, _row(x, config), "stage-1")
    return (FAULT if v >= 0 else NO_FAULT), v


def detect_stage2(x, config: PipelineConfig):
    """(Manifest | Impending, decision value); decision >= 0 means Manifest."""
    v = _decide(config.stage2, _row(x, config), "stage-2")
    return (MANIFEST if v >= 0 else IMPENDING), v


def _proba(model, x) -> tuple[object, np.ndarray]:
    p = np.asarray(model.predict_proba(x[None, :]), dtype=float)[0]
    return model.labels[int(np.argmax(p))], p


@dataclass(frozen=True)
class Localization:
    layer1: str
    layer2: str | None
    layer1_proba: np.ndarray
    layer2_proba: np.ndarray | None
    flags: tuple = ()


def localize_manifest(x, config: PipelineConfig) -> Localization:
    loc = config.localizer
    if loc is None:
        raise ModelMissing("no localizer configured")
    x = _row(x, config)
    if loc.layer1 is None:
        if len(loc.layer1_names) != 1:
            raise ModelMissing("localizer has several categories but no Layer-1 model")
        cat, p1 = loc.layer1_names[0], np.ones(1)
    else:
        k, p1 = _proba(loc.layer1, x)
        cat = loc.layer1_names[int(k)]
    members = tuple(loc.layer2_classes.get(cat, ()))
    sub = loc.layer2.get(cat)
    if sub is None:
        if len(members) == 1:
            return Localization(cat, loc.class_names.get(members[0], str(members[0])), p1, np.ones(1))
        return Localization(cat, None, p1, None, ("no_layer2_model",))
    cls, p2 = _proba(sub, x)
    return Localization(cat, loc.class_names.get(int(cls), str(cls)), p1, p2)


@dataclass(frozen=True)
class Forecast:
    severity: str
    label: object
    proba: np.ndarray
    location_hint: LocationHint | None


def predict_impending(x, config: PipelineConfig) -> Forecast:
    if config.severity is None:
        raise ModelMissing("no severity model configured")
    x = _row(x, config)
    cls, p = _proba(config.severity, x)
    try:
        name = config.forecast_names[int(cls)]
    except (KeyError, ValueError):
        raise LabelError(f"severity class {cls!r} has no forecast name") from None
    hint = None
    col = config.location_column
    if col is not None:
        where = int(x[col])
        rate = config.location_fault_rate.get(str(where))
        hint = LocationHint(where, None if rate is None else float(rate))
    return Forecast(name, cls, p, hint)


def process_record(rid, x, config: PipelineConfig) -> FcpVerdict:
    v = FcpVerdict(id=rid)
    stage = "stage1"
    try:
        v.stage1, v.confidences["stage1"] = detect_stage1(x, config)
        if v.stage1 == NO_FAULT:
            return v
        stage = "stage2"
        s2, v.confidences["stage2"] = detect_stage2(x, config)
        v.stage2 = s2
        if s2 == MANIFEST:
            stage = "localize"
            loc = localize_manifest(x, config)
            v.layer1_category, v.layer2_class = loc.layer1, loc.layer2
            v.confidences["layer1"] = float(loc.layer1_proba.max())
            if loc.layer2_proba is not None:
                v.confidences["layer2"] = float(loc.layer2_proba.max())
            v.flags = loc.flags
        else:
            stage = "severity"
            f = predict_impending(x, config)
            v.predicted_severity, v.location_hint = f.severity, f.location_hint
            v.confidences["severity"] = float(f.proba.max())
    except Exception as exc:  # noqa: BLE001 - one bad record must not stop the batch
        if not isinstance(exc, FcpError):
            log.warning("record %s: unexpected %s at %s", rid, type(exc).__name__, stage)
        _truncate(v, stage)
        v.error = f"{type(exc).__name__}: {exc}"
        v.error_stage = stage
    return v


def _truncate(v: FcpVerdict, stage: str) -> None:
    """Clear everything from ``stage`` on, keeping earlier outputs."""
    k = STAGES.index(stage)
    if k <= 0:
        v.stage1 = None
    if k <= 1:
        v.stage2 = None
    if k <= 2:
        v.layer1_category = v.layer2_class = None
        v.flags = ()
    v.predicted_severity = None
    v.location_hint = None
    keep = {"stage1": (), "stage2": ("stage1",), "localize": ("stage1", "stage2"),
            "severity": ("stage1", "stage2")}[stage]
    v.confidences = {key: val for key, val in v.confidences.items() if key in keep}


def run_pipeline(records, config: PipelineConfig, ids=None) -> list[FcpVerdict]:
    """Verdicts in input order. ``records`` is an (N, D) array or a DesignMatrix."""
    if isinstance(records, DesignMatrix):
        ids = records.ids.tolist() if ids is None else ids
        records = records.rows
    X = np.asarray(records, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1) if len(X) else X.reshape(0, len(config.feature_names))
    ids = list(range(len(X))) if ids is None else list(ids)
    if len(ids) != len(X):
        raise ShapeError(f"{len(ids)} ids for {len(X)} records")
    return [process_record(rid, x, config) for rid, x in zip(ids, X)]


# ---------------------------------------------------------------------------
# output

VERDICT_COLUMNS = (
    "id", "stage1", "stage2", "layer1", "layer2", "severity",
    "confidence_stage1", "confidence_stage2", "confidence_layer1", "confidence_layer2",
    "confidence_severity", "location", "location_fault_rate", "flags", "error",
)


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def verdicts_csv(verdicts) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(VERDICT_COLUMNS)
    for v in verdicts:
        d = v.to_dict()
        c = d["confidences"]
        w.writerow([_cell(x) for x in (
            d["id"], d["stage1"], d["stage2"], d["layer1"], d["layer2"], d["severity"],
            c.get("stage1"), c.get("stage2"), c.get("layer1"), c.get("layer2"), c.get("severity"),
            d["location"], d["location_fault_rate"], ";".join(d["flags"]) or None, d["error"],
        )])
    return buf.getvalue()


def verdict_report(verdicts) -> dict:
    counts = Counter()
    for v in verdicts:
        for key in (v.stage1, v.stage2):
            if key is not None:
                counts[key] += 1
        if v.error is not None:
            counts["errors"] += 1
    return {
        "n_records": len(verdicts),
        "counts": dict(sorted(counts.items())),
        "layer1": dict(sorted(Counter(v.layer1_category for v in verdicts if v.layer1_category).items())),
        "layer2": dict(sorted(Counter(v.layer2_class for v in verdicts if v.layer2_class).items())),
        "severity": dict(sorted(Counter(v.predicted_severity for v in verdicts if v.predicted_severity).items())),
        "verdicts": [v.to_dict() for v in verdicts],
    }
