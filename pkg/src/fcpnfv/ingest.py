"""Loading of Telstra-style and KDE-style fault tables, feature assembly,
standardization and stratified splitting."""

from __future__ import annotations

import csv
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FileMissing, ParseError, ShapeError, StratifyError

log = logging.getLogger(__name__)

TELSTRA_FILES = {
    "train": ("train.csv", ("id", "location", "fault_severity")),
    "event_type": ("event_type.csv", ("id", "event_type")),
    "log_feature": ("log_feature.csv", ("id", "log_feature", "volume")),
    "resource_type": ("resource_type.csv", ("id", "resource_type")),
    "severity_type": ("severity_type.csv", ("id", "severity_type")),
}

KDE_FEATURES = (
    "ci_ratio",
    "power_margin_dbm",
    "poi_cong_pct",
    "cssr_pct",
    "tch_cong_pct",
    "sdcch_cong_pct",
    "signal_strength_dbm",
    "packet_loss_pct",
)
KDE_HEADER = ("docket",) + KDE_FEATURES + ("severity",)
PERCENT_FIELDS = frozenset(f for f in KDE_FEATURES if f.endswith("_pct"))
PERCENT_RANGE = (0.0, 120.0)

# X.733-aligned reading of the 0..3 KDE severity column.
SEVERITY_NAMES = {0: "none", 1: "warning", 2: "major", 3: "critical"}


@dataclass(frozen=True)
class RawFaultTables:
    train: list[tuple[int, str, int]]
    event_type: list[tuple[int, str]]
    log_feature: list[tuple[int, str, int]]
    resource_type: list[tuple[int, str]]
    severity_type: list[tuple[int, str]]

    def row_counts(self) -> dict[str, int]:
        return {name: len(getattr(self, name)) for name in TELSTRA_FILES}


@dataclass(frozen=True)
class FeatureSchema:
    """Vocabularies learned from a training set; frozen for test-time use."""

    log_features: tuple[str, ...]
    event_types: tuple[str, ...]
    resource_types: tuple[str, ...]
    severity_types: tuple[str, ...]
    location_counts: dict[str, int] = field(default_factory=dict)

    @property
    def feature_names(self) -> tuple[str, ...]:
        return (
            tuple(f"log_feature:{t}" for t in self.log_features)
            + tuple(f"event_type:{t}" for t in self.event_types)
            + tuple(f"resource_type:{t}" for t in self.resource_types)
            + tuple(f"severity_type:{t}" for t in self.severity_types)
            + ("location_index", "location_frequency")
        )

    @property
    def dim(self) -> int:
        return len(self.feature_names)

    def to_dict(self) -> dict:
        return {
            "log_features": list(self.log_features),
            "event_types": list(self.event_types),
            "resource_types": list(self.resource_types),
            "severity_types": list(self.severity_types),
            "location_counts": dict(sorted(self.location_counts.items())),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        return cls(
            tuple(d["log_features"]),
            tuple(d["event_types"]),
            tuple(d["resource_types"]),
            tuple(d["severity_types"]),
            {k: int(v) for k, v in d["location_counts"].items()},
        )


@dataclass
class DesignMatrix:
    rows: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...]
    ids: np.ndarray
    schema: FeatureSchema | None = None

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=float)
        if self.rows.ndim != 2:
            self.rows = self.rows.reshape(len(self.rows), -1)
        self.labels = np.asarray(self.labels, dtype=int)
        self.ids = np.asarray(self.ids)
        self.feature_names = tuple(self.feature_names)
        n, d = self.rows.shape
        if len(self.labels) != n or len(self.ids) != n:
            raise ShapeError(f"rows={n}, labels={len(self.labels)}, ids={len(self.ids)}")
        if len(self.feature_names) != d:
            raise ShapeError(f"{d} columns but {len(self.feature_names)} feature names")
        if not np.all(np.isfinite(self.rows)):
            raise ValueError("design matrix contains NaN or Inf")

    def __len__(self):
        return len(self.labels)

    def take(self, index) -> "DesignMatrix":
        index = np.asarray(index, dtype=int)
        return DesignMatrix(
            self.rows[index], self.labels[index], self.feature_names, self.ids[index], self.schema
        )

    def with_rows(self, rows) -> "DesignMatrix":
        return DesignMatrix(rows, self.labels, self.feature_names, self.ids, self.schema)


@dataclass(frozen=True)
class Standardization:
    mean: np.ndarray
    stddev: np.ndarray

    def apply(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != len(self.mean):
            raise ShapeError(f"expected {len(self.mean)} features, got {X.shape[-1]}")
        return (X - self.mean) / self.stddev


@dataclass(frozen=True)
class KdeRecord:
    docket: int
    features: tuple[float, ...]
    severity: int
    fault_class: int | None = None


# ---------------------------------------------------------------------------
# CSV plumbing


def _read_csv(path: Path, header: Sequence[str], optional: Sequence[str] = ()):
    if not path.is_file():
        raise FileMissing(f"missing input file: {path}")
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            got = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file, header expected", path, 1) from None
        expected = list(header)
        if got != expected and got != expected + list(optional):
            raise ParseError(f"header {got} != {expected}", path, 1)
        width = len(got)
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != width:
                raise ParseError(f"expected {width} fields, got {len(row)}", path, lineno)
            yield lineno, [c.strip() for c in row], got


def _int(value: str, path, lineno, what):
    try:
        return int(value)
    except ValueError:
        raise ParseError(f"non-integer {what}: {value!r}", path, lineno) from None


def load_telstra(directory) -> RawFaultTables:
    directory = Path(directory)
    tables = {}
    for name, (fname, header) in TELSTRA_FILES.items():
        path = directory / fname
        rows = []
        for lineno, row, _ in _read_csv(path, header):
            rid = _int(row[0], path, lineno, "id")
            if name == "train":
                sev = _int(row[2], path, lineno, "fault_severity")
                if sev not in (0, 1, 2):
                    raise ParseError(f"fault_severity {sev} not in 0..2", path, lineno)
                rows.append((rid, row[1], sev))
            elif name == "log_feature":
                vol = _int(row[2], path, lineno, "volume")
                if vol < 0:
                    raise ParseError(f"negative volume {vol}", path, lineno)
                rows.append((rid, row[1], vol))
            else:
                rows.append((rid, row[1]))
        tables[name] = rows
    raw = RawFaultTables(**tables)
    log.info("loaded %s: %s", directory, raw.row_counts())
    return raw


def write_telstra(tables: RawFaultTables, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, (fname, header) in TELSTRA_FILES.items():
        with open(directory / fname, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(getattr(tables, name))


# ---------------------------------------------------------------------------
# feature assembly

_TRAILING_INT = re.compile(r"(-?\d+)\s*$")


def token_index(token: str) -> int:
    m = _TRAILING_INT.search(token)
    if m is None:
        raise ParseError(f"no numeric index in token {token!r}")
    return int(m.group(1))


def _natural_key(token: str):
    m = _TRAILING_INT.search(token)
    return (token[: m.start()] if m else token, int(m.group(1)) if m else -1, token)


def _vocab(tokens: Iterable[str]) -> tuple[str, ...]:
    return tuple(sorted(set(tokens), key=_natural_key))


def build_schema(tables: RawFaultTables) -> FeatureSchema:
    return FeatureSchema(
        log_features=_vocab(t for _, t, _ in tables.log_feature),
        event_types=_vocab(t for _, t in tables.event_type),
        resource_types=_vocab(t for _, t in tables.resource_type),
        severity_types=_vocab(t for _, t in tables.severity_type),
        location_counts=dict(Counter(loc for _, loc, _ in tables.train)),
    )


def assemble_features(tables: RawFaultTables, schema: FeatureSchema | None = None) -> DesignMatrix:
    """One row per train id: summed log-feature volumes, per-token counts of
    event/resource/severity types, then location index and frequency.

    Pass the training ``schema`` when assembling a test set so that the
    column layout is frozen; unseen tokens contribute nothing.
    """
    if schema is None:
        schema = build_schema(tables)
    blocks = [
        (tables.log_feature, schema.log_features, True),
        (tables.event_type, schema.event_types, False),
        (tables.resource_type, schema.resource_types, False),
        (tables.severity_type, schema.severity_types, False),
    ]
    row_of = {}
    for i, (rid, _, _) in enumerate(tables.train):
        if rid in row_of:
            raise ParseError(f"duplicate train id {rid}")
        row_of[rid] = i
    n = len(tables.train)
    X = np.zeros((n, schema.dim))
    seen = np.zeros(n, dtype=bool)
    offset = 0
    for rows, vocab, weighted in blocks:
        col_of = {tok: offset + j for j, tok in enumerate(vocab)}
        for rec in rows:
            i = row_of.get(rec[0])
            if i is None:
                continue
            seen[i] = True
            j = col_of.get(rec[1])
            if j is not None:
                X[i, j] += rec[2] if weighted else 1
        offset += len(vocab)
    for i, (_, loc, _) in enumerate(tables.train):
        X[i, offset] = token_index(loc)
        X[i, offset + 1] = schema.location_counts.get(loc, 0)
    if not seen.all():
        log.warning("%d train ids have no auxiliary rows; zero features used", (~seen).sum())
    return DesignMatrix(
        rows=X,
        labels=[sev for _, _, sev in tables.train],
        feature_names=schema.feature_names,
        ids=[rid for rid, _, _ in tables.train],
        schema=schema,
    )


def write_design_matrix(m: DesignMatrix, path, label_name: str = "label") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("id",) + m.feature_names + (label_name,))
        for rid, row, y in zip(m.ids, m.rows, m.labels):
            w.writerow([rid, *(repr(float(v)) for v in row), int(y)])


def read_design_matrix(path, label_name: str = "label") -> DesignMatrix:
    path = Path(path)
    if not path.is_file():
        raise FileMissing(f"missing input file: {path}")
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[0] != "id" or header[-1] != label_name:
            raise ParseError(f"expected id,...,{label_name} header", path, 1)
        ids, rows, labels = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", path, lineno)
            try:
                rows.append([float(v) for v in row[1:-1]])
                labels.append(int(row[-1]))
            except ValueError as exc:
                raise ParseError(str(exc), path, lineno) from None
            ids.append(_maybe_int(row[0]))
    return DesignMatrix(
        np.array(rows, dtype=float).reshape(len(rows), len(header) - 2), labels, header[1:-1], ids
    )


def _maybe_int(s):
    try:
        return int(s)
    except ValueError:
        return s


# ---------------------------------------------------------------------------
# standardization and splitting


def fit_standardization(X) -> Standardization:
    X = np.asarray(X, dtype=float)
    mean = X.mean(axis=0) if len(X) else np.zeros(X.shape[1])
    std = X.std(axis=0) if len(X) else np.ones(X.shape[1])
    std = np.where(std <= 1e-12 * np.maximum(1.0, np.abs(mean)), 1.0, std)
    return Standardization(mean, std)


def standardize(m: DesignMatrix, stats: Standardization | None = None):
    """Z-score columns (population variance); constant columns get stddev 1."""
    if stats is None:
        stats = fit_standardization(m.rows)
    elif len(stats.mean) != m.rows.shape[1]:
        raise ShapeError(f"stats have dimension {len(stats.mean)}, matrix has {m.rows.shape[1]}")
    return m.with_rows(stats.apply(m.rows)), stats


def _allocate(n: int, ratios: Sequence[float]) -> list[int]:
    raw = [r * n for r in ratios]
    counts = [int(np.floor(x)) for x in raw]
    rest = n - sum(counts)
    order = sorted(range(len(ratios)), key=lambda k: (-(raw[k] - counts[k]), k))
    for k in order[:rest]:
        counts[k] += 1
    return counts


def stratified_parts(labels, ratios: Sequence[float], seed: int) -> list[np.ndarray]:
    ratios = [float(r) for r in ratios]
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be nonnegative and sum to 1, got {ratios}")
    labels = np.asarray(labels)
    n_parts = sum(r > 0 for r in ratios)
    rng = np.random.default_rng(seed)
    parts: list[list[int]] = [[] for _ in ratios]
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if len(idx) < n_parts:
            raise StratifyError(f"class {cls} has {len(idx)} rows, fewer than {n_parts} parts")
        idx = rng.permutation(idx)
        start = 0
        for k, c in enumerate(_allocate(len(idx), ratios)):
            parts[k].extend(idx[start : start + c].tolist())
            start += c
    return [rng.permutation(np.array(p, dtype=int)) for p in parts]


def split(m: DesignMatrix, ratios=(0.7, 0.15, 0.15), seed: int = 0):
    """Stratified (train, val, test) partition, deterministic in ``seed``."""
    return tuple(m.take(p) for p in stratified_parts(m.labels, ratios, seed))


# ---------------------------------------------------------------------------
# KDE-style tables


def load_kde_table(path) -> list[KdeRecord]:
    path = Path(path)
    lo, hi = PERCENT_RANGE
    records = []
    for lineno, row, header in _read_csv(path, KDE_HEADER, optional=("class",)):
        try:
            values = [float(v) for v in row[1 : 1 + len(KDE_FEATURES)]]
        except ValueError as exc:
            raise ParseError(str(exc), path, lineno) from None
        values = [
            min(max(v, lo), hi) if name in PERCENT_FIELDS else v
            for name, v in zip(KDE_FEATURES, values)
        ]
        sev = _int(row[len(KDE_HEADER) - 1], path, lineno, "severity")
        if sev not in SEVERITY_NAMES:
            raise ParseError(f"severity {sev} not in 0..3", path, lineno)
        fault_class = None
        if len(header) > len(KDE_HEADER) and row[-1] != "":
            fault_class = _int(row[-1], path, lineno, "class")
            if fault_class < 1:
                raise ParseError(f"class {fault_class} must be >= 1", path, lineno)
        records.append(KdeRecord(_int(row[0], path, lineno, "docket"), tuple(values), sev, fault_class))
    return records


def write_kde_table(records: Sequence[KdeRecord], path, with_class: bool = True) -> None:
    header = KDE_HEADER + (("class",) if with_class else ())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in records:
            row = [r.docket, *(repr(float(v)) for v in r.features), r.severity]
            if with_class:
                row.append("" if r.fault_class is None else r.fault_class)
            w.writerow(row)


def kde_design_matrix(records: Sequence[KdeRecord], target: str = "severity") -> DesignMatrix:
    """Matrix over the eight KDE features; ``target`` is 'severity' or 'class'."""
    if target not in ("severity", "class"):
        raise ValueError(f"unknown target {target!r}")
    labels = [r.severity if target == "severity" else (r.fault_class or 0) for r in records]
    rows = np.array([r.features for r in records], dtype=float).reshape(len(records), len(KDE_FEATURES))
    return DesignMatrix(rows, labels, KDE_FEATURES, [r.docket for r in records])

