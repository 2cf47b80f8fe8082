"""Simulator for tables in the Telstra network-disruption layout.

Produces the five relational tables (train, event_type, log_feature,
resource_type, severity_type) with the vocabulary sizes of the public
release: 386 log features, 53 event types, 10 resource types, 5 severity
types and about 1100 locations. Labels come from a latent per-record fault
level; each categorical family draws tokens from a mixture of a shared
background distribution and a level-specific one, so evidence accumulates
over the several rows a record owns. ``signal`` sets the mixture weight
and ``label_noise`` the fraction of relabelled records.

Used whenever the real tables are not available.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import RawFaultTables

N_LOG_FEATURES = 386
N_EVENT_TYPES = 53
N_RESOURCE_TYPES = 10
N_SEVERITY_TYPES = 5
N_LOCATIONS = 1126
LEVEL_PRIORS = (0.648, 0.253, 0.099)  # class balance of the public training file


@dataclass(frozen=True)
class SimConfig:
    n_records: int = 7381
    seed: int = 2016
    signal: float = 0.6
    label_noise: float = 0.02
    location_effect: float = 1.0


def _marker_rows(rng, size, per_level):
    """One distribution per fault level over disjoint random marker tokens
    (wrapping around when the vocabulary is too small)."""
    tokens = rng.permutation(size)
    rows = np.zeros((3, size))
    for lv in range(3):
        pick = tokens[(lv * per_level + np.arange(per_level)) % size]
        rows[lv, pick] = rng.dirichlet(np.ones(per_level))
    return rows


def _zipf_probs(n, s, rng):
    p = 1.0 / np.arange(1, n + 1) ** s
    return rng.permutation(p / p.sum())


def simulate(cfg: SimConfig = SimConfig()) -> RawFaultTables:
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_records
    ids = np.sort(rng.choice(np.arange(1, 18553), size=n, replace=False))

    # locations with heterogeneous fault propensity
    loc_p = _zipf_probs(N_LOCATIONS, 0.8, rng)
    loc_risk = rng.standard_normal(N_LOCATIONS) * cfg.location_effect
    locs = rng.choice(N_LOCATIONS, size=n, p=loc_p)

    # fault level: priors tilted by location risk
    base = np.log(np.asarray(LEVEL_PRIORS))
    logits = base[None, :] + np.outer(loc_risk[locs], [-1.0, 0.3, 0.8])
    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    level = np.array([rng.choice(3, p=p) for p in probs])

    # (vocabulary size, background distribution, marker tokens per level)
    families = {
        "log_feature": (N_LOG_FEATURES, _zipf_probs(N_LOG_FEATURES, 1.0, rng), 12),
        "event_type": (N_EVENT_TYPES, _zipf_probs(N_EVENT_TYPES, 1.0, rng), 4),
        "resource_type": (N_RESOURCE_TYPES, _zipf_probs(N_RESOURCE_TYPES, 1.5, rng), 2),
        "severity_type": (N_SEVERITY_TYPES, np.array([0.47, 0.47, 0.01, 0.04, 0.01]), 1),
    }
    specific = {name: _marker_rows(rng, size, k) for name, (size, _, k) in families.items()}
    rows_per_record = {
        "log_feature": lambda: 1 + rng.poisson(3.0),
        "event_type": lambda: 1 + rng.poisson(1.2),
        "resource_type": lambda: 1 + rng.binomial(1, 0.3),
        "severity_type": lambda: 1,
    }

    tables = {name: [] for name in families}
    w = cfg.signal
    for i, rid in enumerate(ids.tolist()):
        lv = level[i]
        for name, (size, background, _) in families.items():
            p = (1 - w) * background + w * specific[name][lv]
            count = rows_per_record[name]()
            tokens = sorted(set(rng.choice(size, size=count, p=p).tolist()))
            for t in tokens:
                if name == "log_feature":
                    vol = int(1 + rng.geometric(0.25 if lv == 0 else 0.15) - 1)
                    tables[name].append((rid, f"feature {t + 1}", vol))
                else:
                    prefix = name
                    tables[name].append((rid, f"{prefix} {t + 1}"))

    flip = rng.random(n) < cfg.label_noise
    noisy = np.where(flip, rng.integers(3, size=n), level)
    order = rng.permutation(n)
    train = [(int(ids[i]), f"location {locs[i] + 1}", int(noisy[i])) for i in order]
    for name in tables:
        rows = tables[name]
        perm = rng.permutation(len(rows))
        tables[name] = [rows[k] for k in perm]
    return RawFaultTables(train=train, **tables)
