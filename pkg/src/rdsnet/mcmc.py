"""Metropolis-within-Gibbs sampler for one fixed augmentation complexity.

State: (psi, zeta, Y_AUG, augmented edges, alpha). Sampled nodes carry ids
``0..n-1`` in sample order; augmented nodes ``n..N_MC-1``. Augmented edges are
either intra-sample (two sampled nodes of different waves, never a recruitment
edge) or extra-sample (sampled-augmented). Augmented nodes are never adjacent
to each other.

Two ratio modes are available. ``"paper"`` uses the local simplifications that
scale to populations of hundreds of nodes: the zero-pivot telescoping with a
star-marginal correction for psi/zeta, full-conditional ratios for Y_AUG and
the extra-sample edges, and the wave factorisation for the intra-sample edges.
``"exact"`` replaces every MRF ratio by a difference of exact log-joints and is
limited to graphs whose components can be enumerated.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy import special

from .design import RdsData, RdsTrace, ReplayIndex, observed_graph, rds_log_likelihood
from .graph import ErdosRenyi, Graph, alpha_log_prior, graph_log_density
from .fastgibbs import GraphArrays, gibbs
from .mrf import (MrfParams, MrfPrior, Potentials, StarModel, clique_counts, kc_log_joint,
                  prior_log_density_psi, prior_log_density_zeta)

log = logging.getLogger(__name__)


class InvariantViolation(AssertionError):
    pass


@dataclass(frozen=True)
class ComplexitySpec:
    """One atom of the model-averaging mixture."""

    n_aug: int
    e_intra: int
    e_extra: int

    def __post_init__(self):
        if min(self.n_aug, self.e_intra, self.e_extra) < 0:
            raise ValueError("complexity counts must be non-negative")
        if self.e_extra < self.n_aug:
            raise ValueError("each augmented node needs at least one extra-sample edge")


@dataclass(frozen=True)
class Priors:
    mrf: MrfPrior = field(default_factory=MrfPrior)
    omega1: float = 1.0
    omega2: float = 1.0


@dataclass(frozen=True)
class KernelConfig:
    # (random walk, prior draw, uniform draw)
    psi_weights: tuple[float, float, float] = (0.5, 0.25, 0.25)
    zeta_weights: tuple[float, float, float] = (0.5, 0.25, 0.25)
    psi_step: Optional[float] = None   # default xi / 20
    zeta_step: Optional[float] = None  # default delta / 20
    # (iid Bernoulli at the sample mean, draw from the conditional)
    y_weights: tuple[float, float] = (0.5, 0.5)
    # number of applications of each kernel per sweep
    schedule: tuple[tuple[str, int], ...] = (
        ("psi", 1), ("zeta", 1), ("y_aug", 1), ("g_extra", 1), ("g_intra", 1))
    # psi/zeta MRF ratio: "exchange" (auxiliary Gibbs draw), "star" (zero-pivot
    # telescoping with the star-marginal correction) or "exact" (enumeration)
    param_ratio: str = "exchange"
    aux_sweeps: int = 20
    # Y_AUG and edge MRF ratios: "local" (conditional factorisations) or "exact"
    graph_ratio: str = "local"
    check_invariants: bool = False

    def __post_init__(self):
        for name in ("psi_weights", "zeta_weights", "y_weights"):
            w = getattr(self, name)
            if any(x < 0 for x in w) or abs(sum(w) - 1.0) > 1e-12:
                raise ValueError(f"{name} must be non-negative and sum to 1")
        if self.param_ratio not in ("exchange", "star", "exact"):
            raise ValueError("param_ratio must be 'exchange', 'star' or 'exact'")
        if self.graph_ratio not in ("local", "exact"):
            raise ValueError("graph_ratio must be 'local' or 'exact'")
        if self.aux_sweeps < 1:
            raise ValueError("aux_sweeps must be positive")


class Model:
    """Observed data and priors shared by all chains of one fit."""

    def __init__(self, data: RdsData, priors: Priors):
        trace, mapping = data.trace.canonical()
        self.trace = trace
        self.mapping = mapping
        self.priors = priors
        self.n = trace.sample_size
        inv = {v: k for k, v in mapping.items()}
        self.y_inc = np.array([data.response[inv[i]] for i in range(self.n)], dtype=np.int8)
        self.replay = ReplayIndex(trace)
        waves = trace.waves()
        self.wave = [waves[i] for i in range(self.n)]
        self.tree = {(min(u, v), max(u, v)) for u, v in trace.recruitment_edges()}
        rp = self.replay
        self.extra_targets = [v for v in range(self.n) if not rp.saturated(v)]
        pairs = []
        for u in range(self.n):
            for v in range(u + 1, self.n):
                if self.wave[u] == self.wave[v] or (u, v) in self.tree:
                    continue
                # u precedes v in sample order; only u's available count can move
                if rp.saturated(u) and rp.counts_against(u, v):
                    continue
                pairs.append((u, v))
        self.intra_pairs = pairs
        self.pivot = trace.seeds[0]

    @classmethod
    def from_arrays(cls, trace: RdsTrace, y: Sequence[int], priors: Priors) -> "Model":
        return cls(RdsData(trace, {v: int(y[v]) for v in trace.order()}), priors)


class ChainState:
    """Mutable MCMC state plus the caches the kernels maintain."""

    def __init__(self, model: Model, spec: ComplexitySpec, params: MrfParams,
                 y: np.ndarray, graph: Graph, alpha: float, intra: set[tuple[int, int]]):
        self.model = model
        self.spec = spec
        self.params = params
        self.y = y
        self.graph = graph
        self.alpha = alpha
        self.intra = intra
        self.stats = {k: [0, 0] for k in ("psi", "zeta", "y_aug", "g_extra", "g_intra")}
        self.refresh()

    @property
    def n_mc(self) -> int:
        return self.graph.node_count

    @property
    def aug_nodes(self) -> range:
        return range(self.model.n, self.graph.node_count)

    def refresh(self) -> None:
        """Recompute every cache from the primary state."""
        self.pot = Potentials(self.params)
        rp = self.model.replay
        self.dtilde = {u: rp.available(u, self.graph) for u in rp.processed}
        self.aug_counts = {k: self._aug_clique_counts(self.graph.adj[k])
                           for k in self.aug_nodes}
        self._active_counts: Optional[list[int]] = None
        self._star_key = None
        self._star: Optional[StarModel] = None
        self._arrays: Optional[GraphArrays] = None

    def copy(self) -> "ChainState":
        s = ChainState.__new__(ChainState)
        s.model = self.model
        s.spec = self.spec
        s.params = self.params
        s.y = self.y.copy()
        s.graph = self.graph.copy()
        s.alpha = self.alpha
        s.intra = set(self.intra)
        s.stats = {k: list(v) for k, v in self.stats.items()}
        s.refresh()
        return s

    def _aug_clique_counts(self, nbrs: Union[set[int], Sequence[int]]) -> list[int]:
        y = self.y
        active = [v for v in nbrs if y[v]]
        if len(active) <= 1:
            return [1, len(active)]
        return clique_counts(active, self.graph.adj)

    def q_mc(self) -> float:
        return float(self.y.sum()) / self.n_mc

    def active_counts(self) -> list[int]:
        if self._active_counts is None:
            active = np.flatnonzero(self.y).tolist()
            self._active_counts = clique_counts(active, self.graph.adj)
        return self._active_counts

    def negpotential(self, pot: Potentials) -> float:
        return sum(c * pot.h(k) for k, c in enumerate(self.active_counts()) if k >= 1)

    def star(self) -> StarModel:
        c = self.model.pivot
        adj = self.graph.adj
        nb = adj[c]
        key = (frozenset(nb), frozenset((u, v) for u in nb for v in adj[u] if v in nb and u < v))
        if key != self._star_key:
            self._star = StarModel(c, self.graph)
            self._star_key = key
        return self._star

    def log_design(self) -> float:
        rp = self.model.replay
        return sum(rp.node_term(u, d) for u, d in self.dtilde.items())

    def arrays(self) -> GraphArrays:
        if self._arrays is None:
            self._arrays = GraphArrays(self.graph)
        return self._arrays

    def graph_changed(self) -> None:
        self._active_counts = None
        self._arrays = None


# ---------------------------------------------------------------------------
# Initialisation
# ---------------------------------------------------------------------------

def init_state(model: Model, spec: ComplexitySpec, alpha: float, rng: np.random.Generator,
               params: Optional[MrfParams] = None) -> tuple[ChainState, list[str]]:
    """Build a starting state honouring ``spec`` (clipped where infeasible)."""
    notes: list[str] = []
    n = model.n
    targets = model.extra_targets
    n_aug, e_extra, e_intra = spec.n_aug, spec.e_extra, spec.e_intra
    if n_aug > 0 and not targets:
        notes.append("no admissible extra-sample endpoints; dropping augmented nodes")
        n_aug, e_extra = 0, 0
    cap = len(targets)
    if e_extra > n_aug * cap:
        notes.append(f"E_extra clipped from {e_extra} to {n_aug * cap}")
        e_extra = n_aug * cap
    if e_intra > len(model.intra_pairs):
        notes.append(f"E_intra clipped from {e_intra} to {len(model.intra_pairs)}")
        e_intra = len(model.intra_pairs)
    graph = observed_graph(model.trace, n_aug)
    degrees = [1] * n_aug
    spare = [k for k in range(n_aug) if cap > 1]
    for _ in range(e_extra - n_aug):
        t = int(rng.integers(len(spare)))
        k = spare[t]
        degrees[k] += 1
        if degrees[k] >= cap:
            spare[t] = spare[-1]
            spare.pop()
    for k, h in enumerate(degrees[:n_aug] if n_aug else []):
        for s in rng.choice(cap, size=h, replace=False):
            graph.add_edge(targets[int(s)], n + k)
    intra = set()
    if e_intra:
        for t in rng.choice(len(model.intra_pairs), size=e_intra, replace=False):
            u, v = model.intra_pairs[int(t)]
            graph.add_edge(u, v)
            intra.add((u, v))
    y = np.zeros(n + n_aug, dtype=np.int8)
    y[:n] = model.y_inc
    if n_aug:
        y[n:] = rng.random(n_aug) < model.y_inc.mean()
    params = params or model.priors.mrf.mean()
    used = ComplexitySpec(n_aug, e_intra, e_extra)
    for msg in notes:
        log.warning(msg)
    return ChainState(model, used, params, y, graph, alpha, intra), notes


def check_invariants(state: ChainState) -> None:
    m = state.model
    n = m.n
    g = state.graph
    for k in state.aug_nodes:
        if not g.adj[k]:
            raise InvariantViolation(f"augmented node {k} has no anchor edge")
        if any(v >= n for v in g.adj[k]):
            raise InvariantViolation(f"augmented node {k} adjacent to an augmented node")
    intra_seen = set()
    for u in range(n):
        for v in g.adj[u]:
            if v < n and u < v:
                if (u, v) in m.tree:
                    continue
                if m.wave[u] == m.wave[v]:
                    raise InvariantViolation(f"same-wave augmented edge ({u}, {v})")
                intra_seen.add((u, v))
    if intra_seen != state.intra:
        raise InvariantViolation("intra-sample edge bookkeeping out of sync")
    e_extra = sum(len(g.adj[k]) for k in state.aug_nodes)
    got = ComplexitySpec(g.node_count - n, len(state.intra), e_extra)
    if got != state.spec:
        raise InvariantViolation(f"complexity drifted: {got} != {state.spec}")
    if not np.array_equal(state.y[:n], m.y_inc):
        raise InvariantViolation("sampled responses changed")
    rp = m.replay
    for u, d in state.dtilde.items():
        if d != rp.available(u, g):
            raise InvariantViolation(f"stale available count for node {u}")


# ---------------------------------------------------------------------------
# Joint density (small models; tests and diagnostics)
# ---------------------------------------------------------------------------

def log_joint(state: ChainState, params: Optional[MrfParams] = None,
              y: Optional[np.ndarray] = None, graph: Optional[Graph] = None) -> float:
    """alpha prior + graph density + design likelihood + (psi, zeta) prior + exact MRF."""
    params = params or state.params
    y = state.y if y is None else y
    graph = graph or state.graph
    pri = state.model.priors
    total = alpha_log_prior(state.alpha, pri.omega1, pri.omega2) if 0 < state.alpha < 1 else 0.0
    total += graph_log_density(graph, ErdosRenyi(state.alpha))
    if total == -math.inf:
        return total
    total += rds_log_likelihood(state.model.trace, graph)
    total += pri.mrf.log_density(params)
    if total == -math.inf:
        return total
    return total + kc_log_joint(y, graph, params)


# ---------------------------------------------------------------------------
# psi / zeta
# ---------------------------------------------------------------------------

def reflect(x: float, lo: float, hi: float) -> float:
    width = hi - lo
    r = (x - lo) % (2.0 * width)
    if r > width:
        r = 2.0 * width - r
    return lo + r


def _reflected_normal_density(x: float, centre: float, scale: float, lo: float,
                              hi: float) -> float:
    width = hi - lo
    reach = int(math.ceil(6.0 * scale / (2.0 * width))) + 1
    total = 0.0
    for k in range(-reach, reach + 1):
        shift = 2.0 * k * width
        for img in (x + shift, 2.0 * lo - x + shift):
            z = (img - centre) / scale
            total += math.exp(-0.5 * z * z)
    return total / (scale * math.sqrt(2.0 * math.pi))


class _BoxProposal:
    """Mixture of a reflecting random walk, the prior and a uniform on (lo, hi)."""

    def __init__(self, weights, step, lo, hi, prior_sample, prior_logpdf):
        self.w = weights
        self.step = step
        self.lo, self.hi = lo, hi
        self.prior_sample = prior_sample
        self.prior_logpdf = prior_logpdf

    def draw(self, cur: float, rng: np.random.Generator) -> float:
        u = rng.random()
        if u < self.w[0]:
            return reflect(cur + self.step * rng.standard_normal(), self.lo, self.hi)
        if u < self.w[0] + self.w[1]:
            return float(self.prior_sample(rng))
        return float(self.lo + (self.hi - self.lo) * rng.random())

    def log_correction(self, cur: float, new: float) -> float:
        """log q(cur | new) - log q(new | cur)."""
        if new == cur:
            return 0.0
        rw = self.w[0] * _reflected_normal_density(new, cur, self.step, self.lo, self.hi) \
            if self.w[0] else 0.0
        unif = self.w[2] / (self.hi - self.lo)

        def q(x):
            return rw + self.w[1] * math.exp(self.prior_logpdf(x)) + unif
        return math.log(q(cur)) - math.log(q(new))


def _psi_proposal(state: ChainState, config: KernelConfig) -> _BoxProposal:
    mp = state.model.priors.mrf
    return _BoxProposal(
        config.psi_weights, config.psi_step or mp.xi / 20.0, -mp.xi, 0.0,
        lambda r: -mp.xi + mp.xi * r.beta(mp.nu1, mp.nu2),
        lambda x: _psi_logpdf(mp, x))


def _zeta_proposal(state: ChainState, config: KernelConfig) -> _BoxProposal:
    mp = state.model.priors.mrf
    return _BoxProposal(
        config.zeta_weights, config.zeta_step or mp.delta / 20.0, 0.0, mp.delta,
        lambda r: mp.delta * r.beta(mp.eta1, mp.eta2),
        lambda x: _zeta_logpdf(mp, x))


def _psi_logpdf(mp: MrfPrior, x: float) -> float:
    return prior_log_density_psi(x, mp.nu1, mp.nu2, mp.xi)


def _zeta_logpdf(mp: MrfPrior, x: float) -> float:
    return prior_log_density_zeta(x, mp.eta1, mp.eta2, mp.delta)


def log_one_minus_phi(x: float) -> float:
    return float(special.log_ndtr(-x))


def mrf_param_log_ratio(state: ChainState, new: MrfParams, mode: str = "exchange",
                        rng: Optional[np.random.Generator] = None,
                        aux_sweeps: int = 20) -> float:
    """log p(Y | G, new) - log p(Y | G, current), or the kernel's stand-in for it.

    ``"star"`` keeps the exact zero-pivot quotient and replaces the ratio of
    zero-state probabilities by the pivot's star marginal times
    ``(1 - Phi(psi))^(N_MC - 1)``. ``"exchange"`` returns the auxiliary-variable
    ratio exp(Q_new(Y) - Q_cur(Y) + Q_cur(Y') - Q_new(Y')) with Y' drawn by
    Gibbs at the proposed parameters, which cancels both partition functions.
    """
    cur = state.params
    if mode == "exact":
        return kc_log_joint(state.y, state.graph, new) - kc_log_joint(state.y, state.graph, cur)
    pot_new = Potentials(new)
    quotient = state.negpotential(pot_new) - state.negpotential(state.pot)
    if mode == "exchange":
        if rng is None:
            raise ValueError("the exchange ratio needs a random generator")
        aux = gibbs(state.y.copy(), state.arrays(), pot_new, aux_sweeps, rng)
        counts = clique_counts(np.flatnonzero(aux).tolist(), state.graph.adj)
        back = sum(c * (state.pot.h(k) - pot_new.h(k)) for k, c in enumerate(counts) if k >= 1)
        return quotient + back
    star = state.star()
    lam = star.log_prob_zero(pot_new) - star.log_prob_zero(state.pot)
    if new.psi != cur.psi:
        lam += (state.n_mc - 1) * (log_one_minus_phi(new.psi) - log_one_minus_phi(cur.psi))
    return quotient + lam


def psi_log_accept(state: ChainState, new_psi: float, config: KernelConfig,
                   rng: Optional[np.random.Generator] = None) -> float:
    mp = state.model.priors.mrf
    cur = state.params.psi
    if not -mp.xi < new_psi < 0.0:
        return -math.inf
    new = MrfParams(new_psi, state.params.zeta)
    return (_psi_logpdf(mp, new_psi) - _psi_logpdf(mp, cur)
            + mrf_param_log_ratio(state, new, config.param_ratio, rng, config.aux_sweeps)
            + _psi_proposal(state, config).log_correction(cur, new_psi))


def zeta_log_accept(state: ChainState, new_zeta: float, config: KernelConfig,
                    rng: Optional[np.random.Generator] = None) -> float:
    mp = state.model.priors.mrf
    cur = state.params.zeta
    if not 0.0 < new_zeta < mp.delta:
        return -math.inf
    new = MrfParams(state.params.psi, new_zeta)
    return (_zeta_logpdf(mp, new_zeta) - _zeta_logpdf(mp, cur)
            + mrf_param_log_ratio(state, new, config.param_ratio, rng, config.aux_sweeps)
            + _zeta_proposal(state, config).log_correction(cur, new_zeta))


def _set_params(state: ChainState, params: MrfParams) -> None:
    state.params = params
    state.pot = Potentials(params)


def update_psi(state: ChainState, config: KernelConfig, rng: np.random.Generator) -> ChainState:
    new = _psi_proposal(state, config).draw(state.params.psi, rng)
    u = rng.random()
    state.stats["psi"][1] += 1
    if new == state.params.psi:
        state.stats["psi"][0] += 1
    elif math.log(u) < psi_log_accept(state, new, config, rng):
        _set_params(state, MrfParams(new, state.params.zeta))
        state.stats["psi"][0] += 1
    return state


def update_zeta(state: ChainState, config: KernelConfig, rng: np.random.Generator) -> ChainState:
    new = _zeta_proposal(state, config).draw(state.params.zeta, rng)
    u = rng.random()
    state.stats["zeta"][1] += 1
    if new == state.params.zeta:
        state.stats["zeta"][0] += 1
    elif math.log(u) < zeta_log_accept(state, new, config, rng):
        _set_params(state, MrfParams(state.params.psi, new))
        state.stats["zeta"][0] += 1
    return state


# ---------------------------------------------------------------------------
# Y_AUG
# ---------------------------------------------------------------------------

def aug_logits(state: ChainState) -> np.ndarray:
    pot = state.pot
    return np.array([pot.logit(state.aug_counts[k]) for k in state.aug_nodes])


def _bern_logpmf(y: np.ndarray, p: float) -> float:
    ones = int(y.sum())
    zeros = y.size - ones
    with np.errstate(divide="ignore"):
        return float(ones * np.log(p) if ones else 0.0) + float(
            zeros * np.log1p(-p) if zeros else 0.0)


def _cond_logpmf(y: np.ndarray, z: np.ndarray) -> float:
    # log sigmoid(z) for ones, log sigmoid(-z) for zeros
    return float(-np.logaddexp(0.0, np.where(y == 1, -z, z)).sum())


def y_aug_log_accept(state: ChainState, new: np.ndarray, config: KernelConfig) -> float:
    n = state.model.n
    cur = state.y[n:]
    if config.graph_ratio == "exact":
        y_new = state.y.copy()
        y_new[n:] = new
        target = (kc_log_joint(y_new, state.graph, state.params)
                  - kc_log_joint(state.y, state.graph, state.params))
    else:
        z = aug_logits(state)
        target = float(((new.astype(float) - cur) * z).sum())
    return target + y_aug_proposal_log_correction(state, cur, new, config)


def y_aug_proposal_log_correction(state: ChainState, cur: np.ndarray, new: np.ndarray,
                                  config: KernelConfig) -> float:
    z = aug_logits(state)
    ybar = float(state.model.y_inc.mean())
    wb, wc = config.y_weights

    def logq(y):
        parts = []
        if wb > 0:
            parts.append(math.log(wb) + _bern_logpmf(y, ybar))
        if wc > 0:
            parts.append(math.log(wc) + _cond_logpmf(y, z))
        return float(np.logaddexp.reduce(parts))
    return logq(cur) - logq(new)


def update_y_aug(state: ChainState, config: KernelConfig, rng: np.random.Generator) -> ChainState:
    n = state.model.n
    k = state.n_mc - n
    if k == 0:
        return state
    state.stats["y_aug"][1] += 1
    wb, _ = config.y_weights
    if rng.random() < wb:
        new = (rng.random(k) < state.model.y_inc.mean()).astype(np.int8)
    else:
        p = special.expit(aug_logits(state))
        new = (rng.random(k) < p).astype(np.int8)
    u = rng.random()
    if np.array_equal(new, state.y[n:]):
        state.stats["y_aug"][0] += 1
        return state
    if math.log(u) < y_aug_log_accept(state, new, config):
        state.y[n:] = new
        state.stats["y_aug"][0] += 1
        state._active_counts = None
    return state


# ---------------------------------------------------------------------------
# Extra-sample edges
# ---------------------------------------------------------------------------

def _design_delta(state: ChainState, changes: dict[int, int]) -> float:
    """Change in log design likelihood when processed nodes' available counts shift."""
    rp = state.model.replay
    delta = 0.0
    for u, dd in changes.items():
        if dd == 0 or u not in state.dtilde:
            continue
        d = state.dtilde[u]
        delta += rp.node_term(u, d + dd) - rp.node_term(u, d)
    return delta


def extra_log_accept(state: ChainState, k: int, new_nbrs: Sequence[int],
                     config: KernelConfig) -> float:
    """Target log ratio for replacing augmented node k's edges by ``new_nbrs``.

    Edge counts are preserved, so the graph-density ratio is one and the
    uniform fixed-size proposal is symmetric.
    """
    old = state.graph.adj[k]
    new = set(new_nbrs)
    changes = {}
    for s in old - new:
        changes[s] = changes.get(s, 0) - 1
    for s in new - old:
        changes[s] = changes.get(s, 0) + 1
    design = _design_delta(state, changes)
    if design == -math.inf:
        return design
    if config.graph_ratio == "exact":
        g_new = _rewired(state.graph, k, new)
        mrf = (kc_log_joint(state.y, g_new, state.params)
               - kc_log_joint(state.y, state.graph, state.params))
    else:
        z_old = state.pot.logit(state.aug_counts[k])
        z_new = state.pot.logit(state._aug_clique_counts(new))
        yk = state.y[k]
        mrf = (yk * (z_new - z_old) - np.logaddexp(0.0, z_new) + np.logaddexp(0.0, z_old))
    return design + float(mrf)


def _rewired(graph: Graph, k: int, new: set[int]) -> Graph:
    g = graph.copy()
    for s in list(g.adj[k]):
        g.remove_edge(k, s)
    for s in new:
        g.add_edge(k, s)
    return g


def _floyd_sample(pool_size: int, h: int, u: np.ndarray) -> list[int]:
    """Uniform h-subset of range(pool_size) from h uniforms (Floyd's algorithm)."""
    chosen: set[int] = set()
    out = []
    for i, j in enumerate(range(pool_size - h, pool_size)):
        t = int(u[i] * (j + 1))
        if t > j:
            t = j
        if t in chosen:
            t = j
        chosen.add(t)
        out.append(t)
    return out


def update_g_aug_extra(state: ChainState, config: KernelConfig,
                   rng: np.random.Generator) -> ChainState:
    model = state.model
    targets = model.extra_targets
    pool = len(targets)
    adj = state.graph.adj
    aug = list(state.aug_nodes)
    if not aug:
        return state
    need = sum(len(adj[k]) for k in aug)
    uni = rng.random(need + len(aug))
    pos = 0
    changed = False
    for k in aug:
        h = len(adj[k])
        picks = _floyd_sample(pool, h, uni[pos:pos + h])
        pos += h
        u_acc = uni[pos]
        pos += 1
        state.stats["g_extra"][1] += 1
        new = {targets[t] for t in picks}
        old = adj[k]
        if new == old:
            state.stats["g_extra"][0] += 1
            continue
        la = extra_log_accept(state, k, new, config)
        if (math.log(u_acc) if u_acc > 0 else -math.inf) < la:
            for s in old - new:
                state.graph.remove_edge(k, s)
                if s in state.dtilde:
                    state.dtilde[s] -= 1
            for s in new - old:
                state.graph.add_edge(k, s)
                if s in state.dtilde:
                    state.dtilde[s] += 1
            state.aug_counts[k] = state._aug_clique_counts(new)
            state.stats["g_extra"][0] += 1
            changed = True
    if changed:
        state.graph_changed()
    return state


# ---------------------------------------------------------------------------
# Intra-sample edges
# ---------------------------------------------------------------------------

def _earlier_wave_log_cond(state: ChainState, v: int, graph: Graph) -> float:
    """log p(y_v | earlier-wave sampled neighbours) on the wave-truncated graph."""
    wave = state.model.wave
    n = state.model.n
    wv = wave[v]
    y = state.y
    active = [k for k in graph.adj[v] if k < n and wave[k] < wv and y[k]]
    counts = [1, len(active)] if len(active) <= 1 else clique_counts(active, graph.adj)
    z = state.pot.logit(counts)
    return float(-np.logaddexp(0.0, -z if y[v] else z))


def _intra_swap(graph: Graph, old: set, new: set) -> Graph:
    g = graph.copy()
    for u, v in old - new:
        g.remove_edge(u, v)
    for u, v in new - old:
        g.add_edge(u, v)
    return g


def intra_log_accept(state: ChainState, new_edges: set[tuple[int, int]],
                     config: KernelConfig) -> float:
    """Target log ratio for replacing the intra-sample edge set by ``new_edges``."""
    old_edges = state.intra
    rp = state.model.replay
    changes: dict[int, int] = {}
    touched: set[int] = set()
    for sign, edges in ((-1, old_edges - new_edges), (1, new_edges - old_edges)):
        for u, v in edges:  # u < v, so u entered the sample first
            if u in state.dtilde and rp.counts_against(u, v):
                changes[u] = changes.get(u, 0) + sign
            touched.update((u, v))
    design = _design_delta(state, changes)
    if design == -math.inf:
        return design
    g_new = _intra_swap(state.graph, old_edges, new_edges)
    if config.graph_ratio == "exact":
        mrf = (kc_log_joint(state.y, g_new, state.params)
               - kc_log_joint(state.y, state.graph, state.params))
    else:
        mrf = 0.0
        seeds = set(state.model.trace.seeds)
        for v in touched:
            if v in seeds:
                continue
            mrf += (_earlier_wave_log_cond(state, v, g_new)
                    - _earlier_wave_log_cond(state, v, state.graph))
    return design + mrf


def update_g_aug_intra(state: ChainState, config: KernelConfig,
                   rng: np.random.Generator) -> ChainState:
    e = len(state.intra)
    pairs = state.model.intra_pairs
    if e == 0:
        return state
    state.stats["g_intra"][1] += 1
    new = {pairs[int(t)] for t in rng.choice(len(pairs), size=e, replace=False)}
    u = rng.random()
    if new == state.intra:
        state.stats["g_intra"][0] += 1
        return state
    la = intra_log_accept(state, new, config)
    if (math.log(u) if u > 0 else -math.inf) < la:
        rp = state.model.replay
        for sign, edges in ((-1, state.intra - new), (1, new - state.intra)):
            for a, b in edges:
                if sign < 0:
                    state.graph.remove_edge(a, b)
                else:
                    state.graph.add_edge(a, b)
                if a in state.dtilde and rp.counts_against(a, b):
                    state.dtilde[a] += sign
        state.intra = new
        # augmented nodes' active neighbourhoods may gain or lose internal links
        for k in state.aug_nodes:
            state.aug_counts[k] = state._aug_clique_counts(state.graph.adj[k])
        state.graph_changed()
        state.stats["g_intra"][0] += 1
    return state


KERNELS = {
    "psi": update_psi,
    "zeta": update_zeta,
    "y_aug": update_y_aug,
    "g_extra": update_g_aug_extra,
    "g_intra": update_g_aug_intra,
}


# ---------------------------------------------------------------------------
# Chain driver
# ---------------------------------------------------------------------------

@dataclass
class ChainResult:
    psi: np.ndarray
    zeta: np.ndarray
    q_mc: np.ndarray
    n_mc: int
    spec: ComplexitySpec
    alpha: float
    acceptance: dict[str, float]
    states: list[tuple[MrfParams, np.ndarray, Graph]] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    log_terms: Optional[np.ndarray] = None


def sweep(state: ChainState, config: KernelConfig, rng: np.random.Generator) -> ChainState:
    for name, reps in config.schedule:
        kernel = KERNELS[name]
        for _ in range(reps):
            kernel(state, config, rng)
            if config.check_invariants:
                try:
                    check_invariants(state)
                except InvariantViolation as exc:
                    raise InvariantViolation(
                        f"after {name}: {exc}; params={state.params}, "
                        f"intra={sorted(state.intra)}, y={state.y.tolist()}") from None
    return state


def run_chain(state: ChainState, config: KernelConfig, iterations: int, burn_in: int,
              rng: np.random.Generator, thin: int = 1, keep_states: int = 0,
              record_terms: bool = False) -> ChainResult:
    """Run ``iterations`` sweeps; emit every ``thin``-th sweep after ``burn_in``."""
    if not iterations > burn_in >= 0:
        raise ValueError("need iterations > burn_in >= 0")
    if thin < 1:
        raise ValueError("thin must be positive")
    psi, zeta, q, terms = [], [], [], []
    emitted = (iterations - burn_in + thin - 1) // thin
    keep_at = set()
    if keep_states:
        keep_at = set(np.linspace(0, emitted - 1, min(keep_states, emitted)).astype(int).tolist())
    states = []
    idx = 0
    for it in range(iterations):
        sweep(state, config, rng)
        if it >= burn_in and (it - burn_in) % thin == 0:
            psi.append(state.params.psi)
            zeta.append(state.params.zeta)
            q.append(state.q_mc())
            if record_terms:
                terms.append((state.log_design(), state.negpotential(state.pot)))
            if idx in keep_at:
                states.append((state.params, state.y.copy(), state.graph.copy()))
            idx += 1
    acc = {k: (a / t if t else float("nan")) for k, (a, t) in state.stats.items()}
    return ChainResult(np.array(psi), np.array(zeta), np.array(q), state.n_mc, state.spec,
                       state.alpha, acc, states,
                       log_terms=np.array(terms) if record_terms else None)


def write_chain_csv(result: ChainResult, path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["iter", "psi", "zeta", "q_mc"]
        if result.log_terms is not None:
            header += ["log_design", "negpotential"]
        w.writerow(header)
        for i in range(result.q_mc.size):
            row = [i, repr(float(result.psi[i])), repr(float(result.zeta[i])),
                   repr(float(result.q_mc[i]))]
            if result.log_terms is not None:
                row += [repr(float(x)) for x in result.log_terms[i]]
            w.writerow(row)
