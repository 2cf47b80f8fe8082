import json
import math

import numpy as np
import pytest

from fcpnfv import synthgen
from fcpnfv.errors import ConfigError, ShapeError
from fcpnfv.ingest import KDE_FEATURES, load_kde_table, write_kde_table

from oracles import direct_kde_draws, ks_statistic, naive_kde, silverman_1d


def test_single_sample_needs_explicit_bandwidth():
    with pytest.raises(ConfigError):
        synthgen.fit_kde([[0.0]])
    m = synthgen.fit_kde([[0.0]], rule=[1.0])
    assert m.bandwidth.tolist() == [1.0]


def test_silverman_matches_hand_formula(rng):
    x = rng.standard_normal(1000)
    m = synthgen.fit_kde(x)
    assert m.bandwidth[0] == pytest.approx(silverman_1d(x), rel=1e-12)


def test_scott_rule():
    x = np.array([[0.0], [1.0], [3.0]])
    m = synthgen.fit_kde(x, rule="scott")
    assert m.bandwidth[0] == pytest.approx(np.std(x, ddof=1) * 3 ** (-1 / 5), rel=1e-12)


def test_duplicate_samples_hit_floor(caplog):
    m = synthgen.fit_kde([[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]])
    assert m.bandwidth[0] == pytest.approx(1e-6 * 6.0)
    assert m.bandwidth[1] > 0
    assert "floored" in caplog.text


def test_density_at_centre_and_symmetry():
    one = synthgen.fit_kde([[2.0]], rule=[1.0])
    assert synthgen.density(one, [2.0]) == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-15)
    two = synthgen.fit_kde([[-1.0], [1.0]], rule=[1.0])
    assert synthgen.density(two, [0.0]) == pytest.approx(math.exp(-0.5) / math.sqrt(2 * math.pi), rel=1e-15)


def test_density_matches_naive_sum_8d(rng):
    S = rng.normal(size=(50, 8)) * rng.uniform(0.5, 3, 8)
    m = synthgen.fit_kde(S)
    Q = rng.normal(size=(10, 8))
    got = synthgen.density(m, Q)
    want = np.array([naive_kde(S, m.bandwidth, q) for q in Q])
    assert np.max(np.abs(got - want) / want) < 1e-12


def test_density_shape_error():
    m = synthgen.fit_kde(np.zeros((3, 2)) + np.arange(3)[:, None])
    with pytest.raises(ShapeError):
        synthgen.density(m, [0.0, 0.0, 0.0])


def test_density_integrates_to_one(rng):
    m = synthgen.fit_kde(rng.standard_normal(40))
    h = m.bandwidth[0]
    grid = np.linspace(m.samples.min() - 10 * h, m.samples.max() + 10 * h, 200001)
    vals = synthgen.density(m, grid[:, None])
    assert abs(np.trapezoid(vals, grid) - 1) < 1e-6


def test_proposal_scale_must_be_positive():
    with pytest.raises(ConfigError):
        synthgen.ChainConfig(burn_in=0, thin=1, proposal_scale=0.0)
    with pytest.raises(ConfigError):
        synthgen.ChainConfig(thin=0)


def test_chain_mean_within_three_se(rng):
    m = synthgen.fit_kde(rng.standard_normal(200))
    draws = synthgen.sample_markov(m, 5000, synthgen.ChainConfig(1000, 10, 1.0, 7))[:, 0]
    iid = direct_kde_draws(m.samples, m.bandwidth, 20000, 8)[:, 0]
    se = iid.std(ddof=1) / math.sqrt(len(draws))
    assert abs(draws.mean() - m.samples.mean()) < 3 * se * 1.5  # thinning leaves mild autocorrelation


def test_chain_is_deterministic():
    m = synthgen.fit_kde(np.arange(10.0)[:, None])
    cfg = synthgen.ChainConfig(50, 2, 1.0, 3)
    assert synthgen.sample_markov(m, 100, cfg).tobytes() == synthgen.sample_markov(m, 100, cfg).tobytes()


def test_chain_ks_against_direct_draws(rng):
    m = synthgen.fit_kde(rng.standard_normal(300))
    chain = synthgen.sample_markov(m, 5000, synthgen.ChainConfig(1000, 10, 1.0, 11))[:, 0]
    iid = direct_kde_draws(m.samples, m.bandwidth, 5000, 12)[:, 0]
    assert ks_statistic(chain, iid) < 0.05


def test_shipped_taxonomy_shape():
    tax = synthgen.load_taxonomy()
    assert [c.id for c in tax.classes] == list(range(1, 8))
    assert tax.by_id(3).name == "No Roaming"
    assert tax.features == list(KDE_FEATURES)
    assert len(synthgen.KDE_CLASS_NAMES) == 7 and len(synthgen.KDE_ALL_FEATURES) == 26


def test_acceptance_rate_band_on_shipped_taxonomy():
    tax = synthgen.load_taxonomy()
    models = tax.fit_models() + [synthgen.fit_kde(tax.normal_seeds)]
    for m in models:
        rate = synthgen.run_chain(m, 300, synthgen.ChainConfig(200, 2, 1.0, 0)).acceptance_rate
        assert 0.05 < rate < 0.95


def test_taxonomy_ids_must_be_contiguous(tmp_path):
    doc = {"classes": [{"id": 1, "name": "a", "severity": 1}, {"id": 3, "name": "b", "severity": 2}],
           "features": ["x"]}
    (tmp_path / "t.json").write_text(json.dumps(doc))
    with pytest.raises(ConfigError):
        synthgen.load_taxonomy(tmp_path / "t.json")


def test_taxonomy_seed_csv_path(tmp_path):
    np.savetxt(tmp_path / "s1.csv", np.array([[1.0, 2.0], [2.0, 3.0], [3.0, 1.0]]), delimiter=",")
    doc = {"classes": [{"id": 1, "name": "a", "severity": 2}], "features": ["x", "y"], "seeds": {"1": "s1.csv"}}
    (tmp_path / "t.json").write_text(json.dumps(doc))
    tax = synthgen.load_taxonomy(tmp_path / "t.json")
    assert tax.seeds[1].shape == (3, 2)


def _small_taxonomy():
    tax = synthgen.load_taxonomy()
    return tax, tax.fit_models()


def test_one_hot_prior_gives_one_class():
    tax, models = _small_taxonomy()
    priors = [0, 0, 1, 0, 0, 0, 0]
    recs = synthgen.generate_labeled(tax, models, priors, 30, synthgen.ChainConfig(20, 1, 1.0, 5))
    assert len(recs) == 30
    assert {r.fault_class for r in recs} == {3}
    assert {r.severity for r in recs} == {tax.by_id(3).severity}


def test_zero_records():
    tax, models = _small_taxonomy()
    assert synthgen.generate_labeled(tax, models, [1 / 7] * 7, 0, synthgen.ChainConfig()) == []
    assert synthgen.generate_dataset(tax, 0, synthgen.ChainConfig()) == []


def test_missing_model_is_config_error():
    tax, models = _small_taxonomy()
    with pytest.raises(ConfigError):
        synthgen.generate_labeled(tax, models[:-1] + [None], [1 / 7] * 7, 5, synthgen.ChainConfig())


def test_class_counts_multinomial_replay():
    got = synthgen.class_counts([1 / 7] * 7, 7000, 42)
    replay = np.random.default_rng(42).multinomial(7000, np.full(7, 1 / 7))
    np.testing.assert_array_equal(got, replay)


def test_generate_labeled_counts_follow_replay():
    tax, models = _small_taxonomy()
    cfg = synthgen.ChainConfig(10, 1, 1.0, 42)
    recs = synthgen.generate_labeled(tax, models, [1 / 7] * 7, 700, cfg, sampler="direct")
    tally = np.bincount([r.fault_class for r in recs], minlength=8)[1:]
    np.testing.assert_array_equal(tally, np.random.default_rng(42).multinomial(700, np.full(7, 1 / 7)))


def test_generated_dataset_roundtrips_through_csv(tmp_path):
    tax = synthgen.load_taxonomy()
    recs = synthgen.generate_dataset(tax, 200, synthgen.ChainConfig(50, 2, 1.0, 9))
    assert len(recs) == 200
    assert sum(r.severity == 0 for r in recs) == 80
    write_kde_table(recs, tmp_path / "k.csv")
    back = load_kde_table(tmp_path / "k.csv")
    assert back == recs
    for r in back:
        pct = [v for name, v in zip(KDE_FEATURES, r.features) if name.endswith("_pct")]
        assert all(0 <= v <= 120 for v in pct)
