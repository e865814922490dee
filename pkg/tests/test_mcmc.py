import dataclasses
import itertools
import math

import numpy as np
import pytest
from scipy import integrate, stats

import oracles as O
from rdsnet.bma import CalibrationDraw, FitConfig, fit
from rdsnet.design import (
    RdsConfig, RdsData, RdsTrace, RecruitEvent, TraceExhausted, simulate_rds)
from rdsnet.diagnostics import mc_variance
from rdsnet.graph import ErdosRenyi, sample_graph
from rdsnet.mcmc import (
    ComplexitySpec, InvariantViolation, KernelConfig, Model, Priors, _floyd_sample,
    _intra_swap, _psi_proposal, _reflected_normal_density, _rewired, _zeta_proposal,
    check_invariants, extra_log_accept, init_state, intra_log_accept, log_joint, psi_log_accept, reflect,
    run_chain, sweep, update_y_aug, write_chain_csv, y_aug_log_accept,
    y_aug_proposal_log_correction, zeta_log_accept)
from rdsnet.mrf import MrfParams, joint_conditional

EXACT = KernelConfig(param_ratio="exact", graph_ratio="exact")

# 0 recruits 1 and 2; 1 recruits 3 and stops the sample
TINY = RdsTrace((0,), [RecruitEvent(1, 0, 1, 3), RecruitEvent(2, 0, 1, 3),
                       RecruitEvent(3, 1, 2, 2)], 2, 4)
TINY_Y = [1, 0, 1, 0]


def tiny_model(**prior):
    return Model(RdsData(TINY, {i: TINY_Y[i] for i in range(4)}), Priors(**prior))


def random_state(seed, n=5, spec=(2, 1, 3), m=2):
    """A random trace on a random graph plus an initialised chain state."""
    rng = np.random.default_rng(seed)
    while True:
        g = sample_graph(ErdosRenyi(0.6), n + 2, rng)
        try:
            tr = simulate_rds(g, RdsConfig((0,), m, n), rng)
            break
        except TraceExhausted:
            continue
    y = {v: int(rng.random() < 0.5) for v in tr.order()}
    model = Model(RdsData(tr, y), Priors())
    params = MrfParams(float(rng.uniform(-2.5, -0.2)), float(rng.uniform(0.05, 0.9)))
    state, _ = init_state(model, ComplexitySpec(*spec), 0.3, rng, params)
    return state, rng


# -- initialisation and invariants ----------------------------------------------------

def test_model_admissible_sets():
    m = tiny_model()
    assert m.extra_targets == [0, 1, 2, 3]
    assert m.intra_pairs == [(0, 3), (2, 3)]
    assert m.pivot == 0


def test_init_respects_spec():
    state, notes = init_state(tiny_model(), ComplexitySpec(2, 1, 3), 0.3,
                              np.random.default_rng(0))
    check_invariants(state)
    assert notes == []
    assert state.n_mc == 6
    assert state.params == MrfParams(-1.5, 0.5)


def test_init_clips_infeasible_spec():
    state, notes = init_state(tiny_model(), ComplexitySpec(1, 5, 7), 0.3,
                              np.random.default_rng(0))
    assert state.spec == ComplexitySpec(1, 2, 4)
    assert len(notes) == 2
    check_invariants(state)


def test_invariant_violation_detected():
    state, _ = init_state(tiny_model(), ComplexitySpec(2, 1, 3), 0.3, np.random.default_rng(0))
    state.y[0] = 1 - state.y[0]
    with pytest.raises(InvariantViolation):
        check_invariants(state)


def test_complexity_spec_validation():
    with pytest.raises(ValueError):
        ComplexitySpec(3, 0, 2)
    with pytest.raises(ValueError):
        ComplexitySpec(-1, 0, 0)


@pytest.mark.parametrize("seed", range(3))
def test_kernels_preserve_invariants(seed):
    state, rng = random_state(seed, n=8, spec=(3, 2, 5), m=3)
    cfg = KernelConfig(check_invariants=True)
    for _ in range(30):
        sweep(state, cfg, rng)
        q = state.q_mc()
        n = state.model.n
        assert 0.0 <= q <= 1.0
        want = (state.model.y_inc.sum() + state.y[n:].sum()) / state.n_mc
        assert q == pytest.approx(want, abs=1e-15)


# -- acceptance ratios against the exact joint ------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_param_ratios_exact_mode(seed):
    state, rng = random_state(seed)
    for _ in range(5):
        new_psi = float(rng.uniform(-3, 0))
        want = (log_joint(state, MrfParams(new_psi, state.params.zeta)) - log_joint(state)
                + _psi_proposal(state, EXACT).log_correction(state.params.psi, new_psi))
        assert psi_log_accept(state, new_psi, EXACT) == pytest.approx(want, abs=1e-8)
        new_zeta = float(rng.uniform(0, 1))
        got = zeta_log_accept(state, new_zeta, EXACT)
        want = (log_joint(state, MrfParams(state.params.psi, new_zeta)) - log_joint(state)
                + _zeta_proposal(state, EXACT).log_correction(state.params.zeta, new_zeta))
        assert got == pytest.approx(want, abs=1e-8)


def test_star_ratio_exact_when_graph_is_a_star_on_the_pivot():
    tr = RdsTrace((0,), [RecruitEvent(1, 0, 1, 3), RecruitEvent(2, 0, 1, 3),
                         RecruitEvent(3, 0, 1, 3)], 3, 4)
    model = Model(RdsData(tr, {0: 1, 1: 0, 2: 1, 3: 1}), Priors())
    state, _ = init_state(model, ComplexitySpec(0, 0, 0), 0.3, np.random.default_rng(1),
                          MrfParams(-0.7, 0.4))
    star = KernelConfig(param_ratio="star")
    for new_psi in (-2.2, -0.3):
        assert psi_log_accept(state, new_psi, star) == pytest.approx(
            psi_log_accept(state, new_psi, EXACT), abs=1e-10)
    for new_zeta in (0.05, 0.8):
        assert zeta_log_accept(state, new_zeta, star) == pytest.approx(
            zeta_log_accept(state, new_zeta, EXACT), abs=1e-10)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("mode", ["local", "exact"])
def test_y_aug_ratio(seed, mode):
    state, rng = random_state(seed)
    cfg = KernelConfig(graph_ratio=mode)
    n = state.model.n
    cur = state.y[n:].copy()
    for new in itertools.product((0, 1), repeat=state.n_mc - n):
        new = np.array(new, dtype=np.int8)
        y_new = state.y.copy()
        y_new[n:] = new
        want = (log_joint(state, y=y_new) - log_joint(state)
                + y_aug_proposal_log_correction(state, cur, new, cfg))
        assert y_aug_log_accept(state, new, cfg) == pytest.approx(want, abs=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_edge_ratios_exact_mode(seed):
    state, rng = random_state(seed)
    model = state.model
    for k in state.aug_nodes:
        h = len(state.graph.adj[k])
        for new in itertools.combinations(model.extra_targets, h):
            g_new = _rewired(state.graph, k, set(new))
            want = log_joint(state, graph=g_new) - log_joint(state)
            got = extra_log_accept(state, k, new, EXACT)
            if want == -math.inf:
                assert got == -math.inf
            else:
                assert got == pytest.approx(want, abs=1e-8)
    e = len(state.intra)
    for new in itertools.combinations(model.intra_pairs, e):
        new = set(new)
        g_new = _intra_swap(state.graph, state.intra, new)
        want = log_joint(state, graph=g_new) - log_joint(state)
        got = intra_log_accept(state, new, EXACT)
        if want == -math.inf:
            assert got == -math.inf
        else:
            assert got == pytest.approx(want, abs=1e-8)


def test_identity_proposals_accept():
    state, _ = random_state(0)
    cfg = KernelConfig(param_ratio="star")
    assert psi_log_accept(state, state.params.psi, cfg) == pytest.approx(0.0, abs=1e-12)
    n = state.model.n
    assert y_aug_log_accept(state, state.y[n:].copy(), cfg) == pytest.approx(0.0, abs=1e-12)
    k = state.model.n
    assert extra_log_accept(state, k, sorted(state.graph.adj[k]), cfg) == 0.0
    assert intra_log_accept(state, set(state.intra), cfg) == 0.0


# -- proposals ----------------------------------------------------------------------------------

def test_reflect_stays_in_box():
    for x in (-7.3, -0.2, 0.4, 3.9, 12.0):
        r = reflect(x, -3.0, 0.0)
        assert -3.0 <= r <= 0.0
    assert reflect(0.5, -3.0, 0.0) == pytest.approx(-0.5)
    assert reflect(-3.25, -3.0, 0.0) == pytest.approx(-2.75)


def test_reflected_normal_density_integrates_to_one():
    tot, _ = integrate.quad(lambda x: _reflected_normal_density(x, -0.1, 0.4, -3.0, 0.0),
                            -3.0, 0.0)
    assert tot == pytest.approx(1.0, abs=1e-9)


def test_floyd_sample_is_uniform():
    rng = np.random.default_rng(3)
    counts = {}
    T = 20000
    for _ in range(T):
        s = frozenset(_floyd_sample(5, 2, rng.random(2)))
        assert len(s) == 2
        counts[s] = counts.get(s, 0) + 1
    assert len(counts) == 10
    assert stats.chisquare(list(counts.values())).pvalue > 1e-3


# -- stationarity ---------------------------------------------------------------------------------

def test_single_augmented_node_matches_conditional():
    model = tiny_model()
    state, _ = init_state(model, ComplexitySpec(1, 0, 2), 0.3, np.random.default_rng(4),
                          MrfParams(-0.6, 0.7))
    rng = np.random.default_rng(5)
    cfg = KernelConfig()
    hits = 0
    T = 10000
    for _ in range(T):
        update_y_aug(state, cfg, rng)
        hits += int(state.y[4])
    p = joint_conditional(4, state.y.tolist(), state.graph, state.params)
    assert abs(hits / T - p) < 3 * math.sqrt(p * (1 - p) / T) * 1.5


def test_psi_posterior_without_interaction():
    # zeta pinned near zero and no augmentation: y_inc is iid Bernoulli(Phi(psi))
    tr = RdsTrace((0,), [RecruitEvent(i, 0, 1, 5) for i in range(1, 6)], 5, 6)
    y = {0: 1, 1: 0, 2: 0, 3: 1, 4: 0, 5: 0}
    model = Model(RdsData(tr, y), Priors())
    state, _ = init_state(model, ComplexitySpec(0, 0, 0), 0.3, np.random.default_rng(0),
                          MrfParams(-1.0, 1e-12))
    cfg = KernelConfig(schedule=(("psi", 1),))
    res = run_chain(state, cfg, 42000, 2000, np.random.default_rng(1), thin=20)
    k, n = 2, 6
    grid = np.linspace(-3, 0, 4001)[1:-1]
    dens = stats.norm.cdf(grid) ** k * stats.norm.sf(grid) ** (n - k)
    cdf = np.cumsum(dens) / dens.sum()
    ref = lambda x: np.interp(x, grid, cdf)
    assert stats.kstest(res.psi, ref).pvalue > 0.01


def test_degenerate_schedule_is_constant():
    state, _ = init_state(tiny_model(), ComplexitySpec(2, 1, 3), 0.3, np.random.default_rng(0))
    q0 = state.q_mc()
    res = run_chain(state, KernelConfig(schedule=()), 20, 5, np.random.default_rng(0))
    assert np.all(res.q_mc == q0) and np.all(res.psi == -1.5) and res.q_mc.size == 15


def test_run_chain_validation_and_dump(tmp_path):
    state, _ = init_state(tiny_model(), ComplexitySpec(2, 1, 3), 0.3, np.random.default_rng(0))
    with pytest.raises(ValueError):
        run_chain(state, KernelConfig(), 5, 5, np.random.default_rng(0))
    res = run_chain(state, KernelConfig(), 30, 10, np.random.default_rng(0), thin=3,
                    keep_states=4, record_terms=True)
    assert res.q_mc.size == 7 and len(res.states) == 4
    write_chain_csv(res, tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "iter,psi,zeta,q_mc,log_design,negpotential"
    assert len(lines) == 8


def test_exact_kernels_recover_enumerated_posterior():
    ref = O.enumerate_posterior_q(O.SimpleTrace([0], [(0, [1, 2]), (1, [3])], 2, 4),
                                  TINY.waves(), TINY_Y, 2, 1, 3, grid=60)
    data = RdsData(TINY, {i: TINY_Y[i] for i in range(4)})
    cfg = FitConfig(population=6, kernel=dataclasses.replace(EXACT, param_ratio="exchange"),
                    chains=4, burn_in=300, samples=3000)
    s = fit(data, cfg, 1, specs=[CalibrationDraw(ComplexitySpec(2, 1, 3), 0.3)] * 4)
    se = math.sqrt(sum(mc_variance(r.q_mc) for r in s.results)) / 4
    assert abs(s.estimate - ref) < 2 * se
