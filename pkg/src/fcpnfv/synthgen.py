"""Synthetic fault records from per-class Gaussian kernel density estimates.

Each fault class gets its own product-kernel KDE fitted on seed samples; new
records are drawn from a random-walk Metropolis chain targeting that KDE.
Direct mixture sampling (pick a kernel centre, add Gaussian noise) is kept
alongside as an alternative backend and as the reference the chain is
checked against.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, ShapeError
from .ingest import KdeRecord

log = logging.getLogger(__name__)

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# Reference vocabularies of the mobile-network fault taxonomy.
KDE_CLASS_NAMES = (
    "Call drop",
    "Call setup",
    "No Roaming",
    "Weak Signal",
    "No registration",
    "No outgoing",
    "Data not working",
)
KDE_ALL_FEATURES = (
    "BTS hardware", "Radio link phase", "EVM", "C/I ratio", "BSIC fault", "BCC fault",
    "Time slot short", "Power", "Rx noise", "Antenna tilt", "Occupied BW", "Filter fault",
    "TCH Congestion", "POI Congestion", "Temperature", "Hypervisor", "HLR", "VLR", "Billing",
    "MS", "Virtual resource", "ID Signal Strength", "OD Signal Strength", "Handover", "CSSR",
    "SDCCH Congestion",
)


@dataclass(frozen=True)
class KdeModel:
    samples: np.ndarray
    bandwidth: np.ndarray
    class_label: int | None = None

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.samples, dtype=float))
        h = np.atleast_1d(np.asarray(self.bandwidth, dtype=float))
        if s.shape[0] < 1:
            raise ShapeError("a KDE needs at least one sample")
        if h.shape != (s.shape[1],):
            raise ShapeError(f"bandwidth shape {h.shape} does not match dimension {s.shape[1]}")
        if not np.all(h > 0):
            raise ConfigError("bandwidths must be positive")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "bandwidth", h)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)


@dataclass(frozen=True)
class ChainConfig:
    burn_in: int = 500
    thin: int = 5
    proposal_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.burn_in < 0:
            raise ConfigError("burn_in must be >= 0")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")
        if not self.proposal_scale > 0:
            raise ConfigError("proposal_scale must be > 0")


@dataclass(frozen=True)
class FaultClass:
    id: int
    name: str
    severity: int
    layer1: str | None = None


@dataclass
class ClassTaxonomy:
    classes: list[FaultClass]
    features: list[str]
    priors: list[float] | None = None
    seeds: dict[int, np.ndarray] = field(default_factory=dict)
    # optional no-fault profile: severity-0 records without a class
    normal_seeds: np.ndarray | None = None
    normal_fraction: float = 0.0

    def __post_init__(self):
        ids = [c.id for c in self.classes]
        if sorted(ids) != list(range(1, len(ids) + 1)):
            raise ConfigError(f"class ids must be unique and contiguous from 1, got {ids}")
        self.classes = sorted(self.classes, key=lambda c: c.id)
        if self.priors is not None and len(self.priors) != len(self.classes):
            raise ConfigError("one prior per class required")

    def by_id(self, class_id: int) -> FaultClass:
        return self.classes[class_id - 1]

    def fit_models(self, rule: str = "silverman") -> list[KdeModel]:
        models = []
        for c in self.classes:
            if c.id not in self.seeds:
                raise ConfigError(f"no seed samples for class {c.id} ({c.name})")
            m = fit_kde(self.seeds[c.id], rule)
            models.append(KdeModel(m.samples, m.bandwidth, c.id))
        return models


def load_taxonomy(path=None) -> ClassTaxonomy:
    """Read a taxonomy JSON; ``None`` loads the shipped mobile-network one."""
    if path is None:
        text = resources.files("fcpnfv.data").joinpath("mobile_taxonomy.json").read_text()
        base = None
    else:
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        base = path.parent
    doc = json.loads(text)
    try:
        classes = [
            FaultClass(int(c["id"]), c["name"], int(c["severity"]), c.get("layer1"))
            for c in doc["classes"]
        ]
        features = list(doc["features"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed taxonomy: {exc}") from None
    seeds = {}
    for key, value in (doc.get("seeds") or {}).items():
        seeds[int(key)] = _seed_array(value, base, len(features))
    normal = doc.get("normal") or {}
    return ClassTaxonomy(
        classes=classes,
        features=features,
        priors=doc.get("priors"),
        seeds=seeds,
        normal_seeds=_seed_array(normal["seeds"], base, len(features)) if "seeds" in normal else None,
        normal_fraction=float(normal.get("fraction", 0.0)),
    )


def _seed_array(value, base, dim):
    if isinstance(value, str):
        p = Path(value) if base is None else base / value
        arr = np.loadtxt(p, delimiter=",", ndmin=2)
    else:
        arr = np.asarray(value, dtype=float)
    arr = np.atleast_2d(arr)
    if arr.shape[1] != dim:
        raise ConfigError(f"seed rows have {arr.shape[1]} columns, taxonomy declares {dim} features")
    return arr


# ---------------------------------------------------------------------------


def silverman_bandwidth(samples) -> np.ndarray:
    s = np.atleast_2d(np.asarray(samples, dtype=float))
    m, d = s.shape
    return s.std(axis=0, ddof=1) * (4.0 / ((d + 2) * m)) ** (1.0 / (d + 4))


def scott_bandwidth(samples) -> np.ndarray:
    s = np.atleast_2d(np.asarray(samples, dtype=float))
    m, d = s.shape
    return s.std(axis=0, ddof=1) * m ** (-1.0 / (d + 4))


BANDWIDTH_RULES = {"silverman": silverman_bandwidth, "scott": scott_bandwidth}


def fit_kde(samples, rule="silverman", class_label=None) -> KdeModel:
    """Fit a Gaussian product-kernel KDE.

    ``rule`` is a rule name or an explicit per-dimension bandwidth. Data-driven
    rules need at least two samples. Zero-variance dimensions get the floor
    ``1e-6 * (1 + |mean|)``.
    """
    s = np.asarray(samples, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    if not np.all(np.isfinite(s)):
        raise ValueError("samples must be finite")
    if not isinstance(rule, str):
        return KdeModel(s, np.broadcast_to(np.asarray(rule, dtype=float), (s.shape[1],)).copy(), class_label)
    if rule not in BANDWIDTH_RULES:
        raise ConfigError(f"unknown bandwidth rule {rule!r}")
    if s.shape[0] < 2:
        raise ConfigError("a single sample needs an explicit bandwidth")
    h = BANDWIDTH_RULES[rule](s)
    floor = 1e-6 * (1.0 + np.abs(s.mean(axis=0)))
    flat = ~(h > 0)
    if flat.any():
        log.warning("zero-variance dimensions %s: bandwidth floored", np.flatnonzero(flat).tolist())
        h = np.where(flat, floor, h)
    return KdeModel(s, h, class_label)


def log_density(model: KdeModel, x) -> np.ndarray | float:
    """Log of the KDE at one point (D,) or many points (Q, D)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xq = np.atleast_2d(x)
    if xq.shape[1] != model.dim:
        raise ShapeError(f"query dimension {xq.shape[1]} != model dimension {model.dim}")
    h = model.bandwidth
    z = (xq[:, None, :] - model.samples[None, :, :]) / h
    log_k = -0.5 * np.sum(z * z, axis=2) - np.sum(np.log(h)) - model.dim * LOG_SQRT_2PI
    out = logsumexp(log_k, axis=1) - math.log(model.samples.shape[0])
    return float(out[0]) if single else out


def density(model: KdeModel, x):
    return np.exp(log_density(model, x))


def sample_direct(model: KdeModel, n: int, seed: int) -> np.ndarray:
    """i.i.d. draws: uniform kernel centre plus Gaussian(0, h) noise."""
    rng = np.random.default_rng(seed)
    centres = rng.integers(model.samples.shape[0], size=n)
    return model.samples[centres] + rng.standard_normal((n, model.dim)) * model.bandwidth


@dataclass(frozen=True)
class ChainResult:
    draws: np.ndarray
    acceptance_rate: float


def run_chain(model: KdeModel, n: int, cfg: ChainConfig) -> ChainResult:
    if n < 1:
        raise ConfigError("n must be >= 1")
    rng = np.random.default_rng(cfg.seed)
    x = model.samples[rng.integers(model.samples.shape[0])].copy()
    lp = log_density(model, x)
    step = cfg.proposal_scale * model.bandwidth
    total = cfg.burn_in + n * cfg.thin
    noise = rng.standard_normal((total, model.dim)) * step
    log_u = np.log(rng.random(total))
    out = np.empty((n, model.dim))
    accepted = 0
    kept = 0
    for t in range(total):
        cand = x + noise[t]
        lp_cand = log_density(model, cand)
        if log_u[t] < lp_cand - lp:
            x, lp = cand, lp_cand
            accepted += 1
        if t >= cfg.burn_in and (t - cfg.burn_in + 1) % cfg.thin == 0:
            out[kept] = x
            kept += 1
    return ChainResult(out, accepted / total)


def sample_markov(model: KdeModel, n: int, cfg: ChainConfig) -> np.ndarray:
    """Random-walk Metropolis draws targeting ``density(model, .)``.

    Proposal stddev per dimension is ``cfg.proposal_scale * h_j``; the chain
    starts on a uniformly chosen training sample, drops ``burn_in`` states and
    keeps every ``thin``-th one after that.
    """
    return run_chain(model, n, cfg).draws


# ---------------------------------------------------------------------------


def class_counts(priors: Sequence[float], n: int, seed: int) -> np.ndarray:
    priors = np.asarray(priors, dtype=float)
    if np.any(priors < 0) or abs(priors.sum() - 1.0) > 1e-9:
        raise ConfigError("priors must be a probability vector")
    return np.random.default_rng(seed).multinomial(n, priors)


def generate_labeled(
    taxonomy: ClassTaxonomy,
    per_class: Sequence[KdeModel],
    priors: Sequence[float],
    n: int,
    cfg: ChainConfig,
    first_docket: int = 1,
    sampler: str = "markov",
) -> list[KdeRecord]:
    k = len(taxonomy.classes)
    if len(per_class) != k:
        raise ConfigError(f"{k} classes but {len(per_class)} models")
    if len(priors) != k:
        raise ConfigError(f"{k} classes but {len(priors)} priors")
    if any(m is None for m in per_class):
        raise ConfigError("missing model for a class")
    if n == 0:
        return []
    counts = class_counts(priors, n, cfg.seed)
    records = []
    docket = first_docket
    for fc, model, count in zip(taxonomy.classes, per_class, counts):
        if count == 0:
            continue
        draws = _draw(model, int(count), cfg, cfg.seed + fc.id, sampler)
        for row in draws:
            records.append(KdeRecord(docket, tuple(float(v) for v in row), fc.severity, fc.id))
            docket += 1
    return records


def _draw(model, count, cfg, seed, sampler):
    if sampler == "markov":
        return sample_markov(
            model, count, ChainConfig(cfg.burn_in, cfg.thin, cfg.proposal_scale, seed)
        )
    if sampler == "direct":
        return sample_direct(model, count, seed)
    raise ConfigError(f"unknown sampler {sampler!r}")


def generate_dataset(
    taxonomy: ClassTaxonomy, n: int, cfg: ChainConfig, sampler: str = "markov"
) -> list[KdeRecord]:
    """Fault records from every class plus, if the taxonomy carries a normal
    profile, ``normal_fraction`` of severity-0 records without a class.

    The no-fault chain is seeded with ``cfg.seed`` itself (class seeds are
    ``cfg.seed + class_id``). Records are rounded to integers, matching the
    granularity of operator fault dockets, and percentages are clamped.
    """
    if n == 0:
        return []
    n_normal = 0
    if taxonomy.normal_seeds is not None and taxonomy.normal_fraction > 0:
        n_normal = int(round(n * taxonomy.normal_fraction))
    priors = taxonomy.priors or [1.0 / len(taxonomy.classes)] * len(taxonomy.classes)
    records = generate_labeled(
        taxonomy, taxonomy.fit_models(), priors, n - n_normal, cfg, sampler=sampler
    )
    if n_normal:
        model = fit_kde(taxonomy.normal_seeds)
        draws = _draw(model, n_normal, cfg, cfg.seed, sampler)
        start = len(records) + 1
        records += [
            KdeRecord(start + i, tuple(float(v) for v in row), 0, None) for i, row in enumerate(draws)
        ]
    return [_tidy(r, taxonomy.features) for r in records]


def _tidy(r: KdeRecord, names) -> KdeRecord:
    vals = []
    for name, v in zip(names, r.features):
        v = float(np.round(v))
        if name.endswith("_pct"):
            v = min(max(v, 0.0), 120.0)
        vals.append(v + 0.0)
    return KdeRecord(r.docket, tuple(vals), r.severity, r.fault_class)

