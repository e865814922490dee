import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles as O
from rdsnet.fastgibbs import GraphArrays, gibbs, log_odds
from rdsnet.graph import Graph
from rdsnet.mrf import (
    CapacityError, MrfParams, MrfPrior, Potentials, StarModel, brook_log_ratio, clique_counts,
    enumerate_cliques, full_conditional, gibbs_sweep, joint_conditional, joint_log_odds,
    kc_log_joint, log_partition, negpotential, normal_cdf, prior_log_density_psi,
    prior_log_density_zeta, probit_logit, sample_psi_prior, sample_zeta_prior)


def to_graph(A):
    n = len(A)
    return Graph(n, [(i, j) for i in range(n) for j in range(i + 1, n) if A[i][j]])


@st.composite
def small_models(draw, max_nodes=7):
    n = draw(st.integers(1, max_nodes))
    bits = draw(st.lists(st.booleans(), min_size=n * (n - 1) // 2, max_size=n * (n - 1) // 2))
    A = [[0] * n for _ in range(n)]
    for b, (i, j) in zip(bits, itertools.combinations(range(n), 2)):
        A[i][j] = A[j][i] = int(b)
    psi = draw(st.floats(-2.9, -0.01))
    zeta = draw(st.floats(0.01, 0.99))
    y = draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    return A, MrfParams(psi, zeta), y


# -- normal CDF and potentials ------------------------------------------------

@pytest.mark.parametrize("x", [-30.0, -8.5, -3.0, -1e-3, 0.0, 0.7, 5.0, 8.0])
def test_normal_cdf_against_high_precision(x):
    mpmath.mp.dps = 40
    exact = float(mpmath.ncdf(x))
    assert abs(normal_cdf(x) - exact) <= 1e-14
    assert normal_cdf(x) == pytest.approx(exact, rel=1e-12)


@pytest.mark.parametrize("x", [-12.0, -2.0, 0.0, 1.5, 9.0])
def test_probit_logit_tails(x):
    mpmath.mp.dps = 50
    p = mpmath.ncdf(x)
    exact = float(mpmath.log(p) - mpmath.log(1 - p))
    assert probit_logit(x) == pytest.approx(exact, rel=1e-12)


def test_potentials_match_inclusion_exclusion():
    params = MrfParams(-1.1, 0.37)
    pot = Potentials(params, size=2)
    ref = O.clique_weights(-1.1, 0.37, 9)
    for k in range(1, 10):
        assert pot.h(k) == pytest.approx(ref[k], abs=1e-12)
    assert pot.array(4).shape == (5,)


def test_potentials_reproduce_probit_for_complete_neighbourhood():
    # a node whose s active neighbours form a clique sees log-odds L(s)
    params = MrfParams(-0.8, 0.3)
    pot = Potentials(params)
    for s in range(6):
        counts = [math.comb(s, k) for k in range(s + 1)]
        assert pot.logit(counts) == pytest.approx(probit_logit(-0.8 + 0.3 * s), abs=1e-12)


# -- cliques ------------------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(small_models())
def test_clique_counts_match_bruteforce(model):
    A, _, y = model
    g = to_graph(A)
    active = [i for i in range(len(y)) if y[i]]
    ref = O.clique_size_counts(y, A)
    got = clique_counts(active, g.adj)
    assert got[0] == 1
    for k in range(1, len(got)):
        assert got[k] == ref[k]
    assert sum(ref[len(got):]) == 0
    assert sorted(enumerate_cliques(active, g.adj)) == sorted(O.cliques_of(active, A))


# -- joint ----------------------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(small_models())
def test_joint_matches_enumeration(model):
    A, params, y = model
    g = to_graph(A)
    table = O.log_joint_table(A, params.psi, params.zeta)
    idx = int("".join(map(str, y)), 2)
    assert kc_log_joint(y, g, params) == pytest.approx(table[idx], abs=1e-10)
    for i in range(len(y)):
        assert joint_conditional(i, y, g, params) == pytest.approx(
            O.conditional_from_table(table, len(y), i, y), abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(small_models(), st.data())
def test_brook_ratio_is_joint_difference(model, data):
    A, params, y = model
    g = to_graph(A)
    other = data.draw(st.lists(st.integers(0, 1), min_size=len(y), max_size=len(y)))
    got = brook_log_ratio(y, other, g, params)
    assert got == pytest.approx(kc_log_joint(y, g, params) - kc_log_joint(other, g, params),
                                abs=1e-10)


def test_full_conditional_is_probit_of_active_count():
    g = Graph(4, [(0, 1), (0, 2), (0, 3)])
    params = MrfParams(-1.0, 0.4)
    y = [0, 1, 1, 0]
    assert full_conditional(0, y, g, params) == pytest.approx(O.phi(-1.0 + 0.8), abs=1e-15)


def test_empty_graph_is_independent_bernoulli():
    g = Graph(3)
    params = MrfParams(-0.5, 0.9)
    p = O.phi(-0.5)
    assert kc_log_joint([1, 0, 1], g, params) == pytest.approx(
        2 * math.log(p) + math.log1p(-p), abs=1e-12)


def test_log_partition_and_negpotential():
    rng = np.random.default_rng(4)
    A = O.random_adjacency(6, 0.5, rng)
    g = to_graph(A)
    params = MrfParams(-1.3, 0.6)
    h = np.array(O.clique_weights(-1.3, 0.6, 6))
    q = [O.clique_size_counts(s, A) @ h for s in O.all_states(6)]
    assert log_partition(g, params) == pytest.approx(np.logaddexp.reduce(q), abs=1e-10)
    y = [1, 1, 0, 1, 0, 1]
    assert negpotential(y, g, params) == pytest.approx(O.clique_size_counts(y, A) @ h, abs=1e-12)


def test_star_marginal_matches_restricted_enumeration():
    rng = np.random.default_rng(9)
    A = O.random_adjacency(7, 0.45, rng)
    g = to_graph(A)
    params = MrfParams(-0.9, 0.5)
    star = [0] + sorted(j for j in range(7) if A[0][j])
    sub = [[A[a][b] for b in star] for a in star]
    table = np.exp(O.log_joint_table(sub, params.psi, params.zeta))
    states = O.all_states(len(star))
    ref = table[states[:, 0] == 0].sum()
    got = math.exp(StarModel(0, g).log_prob_zero(Potentials(params)))
    assert got == pytest.approx(ref, abs=1e-12)


def test_capacity_error_on_large_component():
    n = 30
    g = Graph(n, [(i, i + 1) for i in range(n - 1)])
    with pytest.raises(CapacityError):
        log_partition(g, MrfParams(-1.0, 0.2))


# -- Gibbs ------------------------------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(small_models(max_nodes=12))
def test_compiled_log_odds_match_reference(model):
    A, params, y = model
    g = to_graph(A)
    pot = Potentials(params)
    got = log_odds(np.array(y, dtype=np.int8), GraphArrays(g), pot)
    for i in range(len(y)):
        assert got[i] == pytest.approx(joint_log_odds(i, y, g, pot), abs=1e-10)


@pytest.mark.parametrize("leaves", [63, 64, 70])
def test_compiled_log_odds_large_active_neighbourhood(leaves):
    # hub 0 with active leaves; leaf edges (1,2), (3,4), (5,6) and triangle (7,8,9)
    edges = [(0, v) for v in range(1, leaves + 2)]
    edges += [(1, 2), (3, 4), (5, 6), (7, 8), (8, 9), (7, 9)]
    g = Graph(leaves + 2, edges)
    y = np.ones(leaves + 2, dtype=np.int8)
    y[leaves + 1] = 0
    params = MrfParams(-0.4, 0.05)
    h = O.clique_weights(params.psi, params.zeta, 4)
    want = h[1] + leaves * h[2] + 6 * h[3] + h[4]
    got = log_odds(y, GraphArrays(g), Potentials(params), np.array([0]))[0]
    assert got == pytest.approx(want, abs=1e-9)
    assert got == pytest.approx(joint_log_odds(0, y, g, Potentials(params)), abs=1e-9)
    gibbs(y, GraphArrays(g), Potentials(params), 2, np.random.default_rng(0))


@pytest.mark.parametrize("compiled", [False, True])
def test_gibbs_targets_joint(compiled):
    A = [[0, 1, 1, 0, 0], [1, 0, 1, 1, 0], [1, 1, 0, 1, 0], [0, 1, 1, 0, 1], [0, 0, 0, 1, 0]]
    g = to_graph(A)
    params = MrfParams(-0.6, 0.8)
    table = np.exp(O.log_joint_table(A, params.psi, params.zeta))
    marg = O.all_states(5).T @ table
    rng = np.random.default_rng(11)
    y = np.zeros(5, dtype=np.int8)
    T = 20000 if compiled else 6000
    acc = np.zeros(5)
    for _ in range(T):
        if compiled:
            gibbs(y, GraphArrays(g), Potentials(params), 1, rng)
        else:
            gibbs_sweep(y, g, params, rng)
        acc += y
    se = np.sqrt(marg * (1 - marg) / T) * 3.0  # allow for autocorrelation
    assert np.all(np.abs(acc / T - marg) < 4 * se)


def test_gibbs_respects_frozen_nodes():
    g = Graph(4, [(0, 1), (1, 2), (2, 3)])
    y = np.array([1, 0, 1, 0], dtype=np.int8)
    free = np.array([False, True, False, True])
    gibbs(y, GraphArrays(g), Potentials(MrfParams(-0.2, 0.9)), 50,
          np.random.default_rng(0), free)
    assert y[0] == 1 and y[2] == 1


# -- priors -----------------------------------------------------------------------------

def test_prior_sampler_moments():
    rng = np.random.default_rng(5)
    prior = MrfPrior(delta=0.8, xi=2.5, eta1=2.0, eta2=5.0, nu1=3.0, nu2=1.5)
    z = sample_zeta_prior(prior.eta1, prior.eta2, prior.delta, rng, size=20000)
    p = sample_psi_prior(prior.nu1, prior.nu2, prior.xi, rng, size=20000)
    mz = 0.8 * 2 / 7
    vz = 0.8 ** 2 * 2 * 5 / (49 * 8)
    mp = -2.5 + 2.5 * 3 / 4.5
    vp = 2.5 ** 2 * 3 * 1.5 / (4.5 ** 2 * 5.5)
    assert abs(z.mean() - mz) < 3 * math.sqrt(vz / z.size)
    assert abs(p.mean() - mp) < 3 * math.sqrt(vp / p.size)
    assert prior.mean() == MrfParams(pytest.approx(mp), pytest.approx(mz))


def test_prior_densities_integrate_to_one():
    from scipy import integrate
    tot, _ = integrate.quad(lambda x: math.exp(prior_log_density_zeta(x, 2.0, 3.0, 0.7)), 0, 0.7)
    assert tot == pytest.approx(1.0, abs=1e-8)
    tot, _ = integrate.quad(lambda x: math.exp(prior_log_density_psi(x, 1.5, 2.0, 3.0)), -3, 0)
    assert tot == pytest.approx(1.0, abs=1e-8)
    assert prior_log_density_psi(0.1, 1, 1, 3) == -math.inf


def test_prior_rejects_out_of_box():
    prior = MrfPrior()
    with pytest.raises(ValueError):
        prior.params(0.5, 0.2)
    with pytest.raises(ValueError):
        prior.params(-1.0, 1.5)
    with pytest.raises(ValueError):
        MrfPrior(delta=0.0)
