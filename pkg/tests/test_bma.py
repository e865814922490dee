import itertools
import json

import numpy as np
import pytest

from rdsnet.bma import (
    CalibrationDraw, CalibrationError, FitConfig, GraphPrior, MixingDistribution, astuple,
    calibrate_mixing, complexity_of, fit, write_fit_report)
from rdsnet.design import RdsConfig, RdsData, RdsTrace, RecruitEvent, simulate_rds
from rdsnet.graph import Graph
from rdsnet.mcmc import ComplexitySpec, KernelConfig
from rdsnet.mrf import MrfPrior

TRACE = RdsTrace((0,), [RecruitEvent(1, 0, 1, 3), RecruitEvent(2, 0, 1, 3),
                        RecruitEvent(3, 1, 2, 2)], 2, 4)
DATA = RdsData(TRACE, {0: 1, 1: 0, 2: 1, 3: 0})


def small_fit(**kw):
    base = dict(population=8, draws=30, chains=3, burn_in=20, samples=40)
    base.update(kw)
    return FitConfig(**base)


def test_point_mass_prior_gives_empty_spec():
    prior = GraphPrior(omega1=0.0, omega2=1.0)
    mix = calibrate_mixing(prior, RdsConfig((0,), 3, 10), 30, 25, np.random.default_rng(0))
    assert mix.frequencies() == {ComplexitySpec(0, 0, 0): 1.0}


def test_complete_graph_spec_by_hand():
    N = 5
    g = Graph(N, list(itertools.combinations(range(N), 2)))
    rng = np.random.default_rng(1)
    for _ in range(5):
        tr = simulate_rds(g, RdsConfig((int(rng.integers(N)),), 2, N), rng)
        waves = tr.waves()
        tree = {frozenset(e) for e in tr.recruitment_edges()}
        hand = sum(1 for u, v in itertools.combinations(range(N), 2)
                   if waves[u] != waves[v] and frozenset((u, v)) not in tree)
        assert complexity_of(g, tr) == ComplexitySpec(0, hand, 0)


def test_complexity_counts_extra_sample_structure():
    g = Graph(6, [(0, 1), (0, 2), (1, 3), (2, 3), (0, 4), (3, 4), (3, 5), (1, 2)])
    spec = complexity_of(g, TRACE)
    # unsampled 4 (two edges) and 5 (one edge); (2, 3) crosses waves, (1, 2) does not
    assert spec == ComplexitySpec(2, 1, 3)


def _binned_marginals(mix, edges):
    arr = np.array([astuple(d.spec) for d in mix.draws])
    return [np.histogram(arr[:, j], bins=edges[j])[0] / len(arr) for j in range(3)]


@pytest.fixture(scope="module")
def two_calibrations():
    rds = RdsConfig((0,), 3, 50)
    return [calibrate_mixing(GraphPrior(2, 38), rds, 200, 1000, np.random.default_rng(s))
            for s in (11, 12)]


@pytest.mark.xfail(strict=True, reason="with N=200 nearly every calibration atom is unique, "
                   "so the total variation between two exact-atom histograms is close to 1")
def test_calibration_atoms_stable(two_calibrations):
    a, b = two_calibrations
    assert a.total_variation(b) < 0.1


def test_calibration_marginals_stable(two_calibrations):
    a, b = two_calibrations
    pooled = np.array([astuple(d.spec) for d in a.draws + b.draws])
    edges = [np.unique(np.quantile(pooled[:, j], np.linspace(0, 1, 11))) for j in range(3)]
    for pa, pb in zip(_binned_marginals(a, edges), _binned_marginals(b, edges)):
        assert 0.5 * np.abs(pa - pb).sum() < 0.1


def test_calibration_gives_up_on_stalling_prior():
    prior = GraphPrior(omega1=0.01, omega2=5000.0)
    with pytest.raises(CalibrationError):
        calibrate_mixing(prior, RdsConfig((0,), 3, 20), 100, 5, np.random.default_rng(0),
                         max_retries=5)


def test_mixing_sample_and_tv():
    d1 = CalibrationDraw(ComplexitySpec(1, 0, 1), 0.1)
    d2 = CalibrationDraw(ComplexitySpec(2, 0, 2), 0.1)
    a = MixingDistribution([d1, d1, d2, d2])
    b = MixingDistribution([d1, d1, d1, d2])
    assert a.total_variation(b) == pytest.approx(0.25)
    assert set(a.sample(np.random.default_rng(0), 10)) <= {d1, d2}


def test_graph_prior():
    p = GraphPrior.centred(0.1, 40)
    assert (p.omega1, p.omega2) == pytest.approx((4.0, 36.0))
    with pytest.raises(ValueError):
        GraphPrior(family="lattice")


def test_nothing_to_augment_returns_sample_mean():
    tight = MrfPrior(eta1=500, eta2=500, nu1=500, nu2=500)
    s = fit(DATA, small_fit(mrf_prior=tight, chains=1), 0,
            specs=[CalibrationDraw(ComplexitySpec(0, 0, 0), 0.2)])
    assert s.estimate == pytest.approx(0.5)
    assert s.samples.size == 40


def test_pooling_properties(tmp_path):
    specs = [CalibrationDraw(ComplexitySpec(2, 1, 3), 0.3),
             CalibrationDraw(ComplexitySpec(1, 0, 2), 0.2),
             CalibrationDraw(ComplexitySpec(2, 1, 3), 0.3)]
    s = fit(DATA, small_fit(), 5, specs=specs)
    assert s.samples.size == 3 * 40
    assert 0.0 <= s.lower <= s.estimate <= s.upper <= 1.0
    assert s.samples.min() <= s.estimate <= s.samples.max()
    assert s.spec_weights[ComplexitySpec(2, 1, 3)] == pytest.approx(2 / 3)
    shuffled = np.concatenate([r.q_mc for r in reversed(s.results)])
    assert shuffled.mean() == pytest.approx(s.estimate, abs=1e-15)
    again = fit(DATA, small_fit(), 5, specs=specs)
    assert np.array_equal(again.samples, s.samples)
    write_fit_report(s, tmp_path / "r.json", seed=5)
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["estimate"] == s.estimate and len(rep["chains"]) == 3


def test_fit_with_calibration_and_threads():
    cfg = small_fit(graph_prior=GraphPrior.centred(0.4), chains=2, threads=2)
    s = fit(DATA, cfg, 3)
    serial = fit(DATA, small_fit(graph_prior=GraphPrior.centred(0.4), chains=2), 3)
    assert np.array_equal(s.samples, serial.samples)
    assert sum(s.spec_weights.values()) == pytest.approx(1.0)


def test_fit_config_validation():
    with pytest.raises(ValueError):
        FitConfig(population=0)
    with pytest.raises(ValueError):
        FitConfig(population=10, level=1.0)
    with pytest.raises(ValueError):
        KernelConfig(param_ratio="bogus")
