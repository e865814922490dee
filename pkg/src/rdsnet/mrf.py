"""Probit Markov random field on a graph.

The responses are specified through probit conditionals
``P(y_i = 1 | rest) = Phi(psi + zeta * #active neighbours)``. A joint density
is assembled from these conditionals with the Kaiser-Cressie negpotential
expansion around the all-zeros reference state: every clique ``C`` of the
graph carries the potential

    h_|C| = sum_{j=0}^{|C|-1} (-1)^(|C|-1-j) * binom(|C|-1, j) * L(j),
    L(s)  = log Phi(psi + zeta*s) - log(1 - Phi(psi + zeta*s)),

and ``Q(y)`` is the sum of ``h`` over cliques whose nodes are all active.
Non-clique index sets carry no potential.

The conditionals of this joint (``joint_conditional``) coincide with the probit
specification whenever a node's active neighbours are pairwise adjacent (in
particular with at most one active neighbour). When they are not, no joint can
reproduce the probit conditionals exactly, and the clique expansion is the
joint used everywhere in the package.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import special, stats

from .graph import Graph

WARN_COMPONENT = 20
MAX_COMPONENT = 25
_CHUNK_BITS = 16
_SMALL_CORE_BITS = 5


class CapacityError(RuntimeError):
    """Exact enumeration requested on a component that is too large."""


@dataclass(frozen=True)
class MrfParams:
    psi: float
    zeta: float


@dataclass(frozen=True)
class MrfPrior:
    """Scaled-Beta priors: zeta on (0, delta), psi on (-xi, 0)."""

    delta: float = 1.0
    xi: float = 3.0
    eta1: float = 1.0
    eta2: float = 1.0
    nu1: float = 1.0
    nu2: float = 1.0

    def __post_init__(self):
        if min(self.delta, self.xi, self.eta1, self.eta2, self.nu1, self.nu2) <= 0:
            raise ValueError("MRF prior hyperparameters must be positive")

    def params(self, psi: float, zeta: float) -> MrfParams:
        """Construct parameters, enforcing the box supports."""
        if not -self.xi < psi < 0.0:
            raise ValueError(f"psi={psi} outside (-{self.xi}, 0)")
        if not 0.0 < zeta < self.delta:
            raise ValueError(f"zeta={zeta} outside (0, {self.delta})")
        return MrfParams(psi, zeta)

    def log_density(self, params: MrfParams) -> float:
        return (prior_log_density_psi(params.psi, self.nu1, self.nu2, self.xi)
                + prior_log_density_zeta(params.zeta, self.eta1, self.eta2, self.delta))

    def mean(self) -> MrfParams:
        return MrfParams(-self.xi + self.xi * self.nu1 / (self.nu1 + self.nu2),
                         self.delta * self.eta1 / (self.eta1 + self.eta2))


# ---------------------------------------------------------------------------
# Normal CDF and clique potentials
# ---------------------------------------------------------------------------

def normal_cdf(x: float) -> float:
    """Standard normal CDF (erfc-based, accurate in both tails)."""
    return float(special.ndtr(x))


def probit_logit(x: float) -> float:
    """log Phi(x) - log(1 - Phi(x)) without cancellation."""
    return float(special.log_ndtr(x) - special.log_ndtr(-x))


class Potentials:
    """Clique potentials ``h[k]`` (k >= 1) for fixed (psi, zeta), extended on demand."""

    __slots__ = ("psi", "zeta", "_L", "_h")

    def __init__(self, params: MrfParams, size: int = 8):
        self.psi = params.psi
        self.zeta = params.zeta
        self._L: list[float] = []
        self._h: list[float] = [0.0]
        self._grow(size)

    def _grow(self, k: int) -> None:
        while len(self._L) < k:
            s = len(self._L)
            self._L.append(probit_logit(self.psi + self.zeta * s))
        while len(self._h) <= k:
            c = len(self._h)  # clique size
            total = 0.0
            for j in range(c):
                total += (-1) ** (c - 1 - j) * math.comb(c - 1, j) * self._L[j]
            self._h.append(total)

    def h(self, k: int) -> float:
        if k >= len(self._h):
            self._grow(k)
        return self._h[k]

    def array(self, k: int) -> np.ndarray:
        if k >= len(self._h):
            self._grow(k)
        return np.asarray(self._h[: k + 1])

    def logit(self, counts: Sequence[int]) -> float:
        """Conditional log-odds from clique counts of the active neighbourhood.

        ``counts[k]`` is the number of k-cliques among the active neighbours,
        with ``counts[0] == 1``.
        """
        if len(counts) + 1 > len(self._h):
            self._grow(len(counts))
        h = self._h
        return sum(c * h[k + 1] for k, c in enumerate(counts))


def clique_counts(nodes: Iterable[int], adj: Sequence[set[int]]) -> list[int]:
    """``counts[k]`` = number of k-node cliques inside ``nodes``; ``counts[0] = 1``."""
    pool = sorted(nodes)
    if len(pool) <= 1:
        return [1] * (len(pool) + 1)
    S = set(pool)
    counts = [1, len(pool)]
    # quick exit for an edgeless node set
    if not any(adj[v] & S for v in pool):
        return counts

    def extend(size: int, cand: list[int]) -> None:
        for idx, w in enumerate(cand):
            if len(counts) <= size + 1:
                counts.append(0)
            counts[size + 1] += 1
            aw = adj[w]
            nxt = [x for x in cand[idx + 1:] if x in aw]
            if nxt:
                extend(size + 1, nxt)

    for idx, v in enumerate(pool):
        av = adj[v]
        cand = [w for w in pool[idx + 1:] if w in av]
        if cand:
            extend(1, cand)
    return counts


def enumerate_cliques(nodes: Iterable[int], adj: Sequence[set[int]]) -> list[tuple[int, ...]]:
    """All non-empty cliques inside ``nodes`` as sorted tuples."""
    pool = sorted(nodes)
    out: list[tuple[int, ...]] = []

    def extend(prefix: tuple[int, ...], cand: list[int]) -> None:
        for idx, w in enumerate(cand):
            clique = prefix + (w,)
            out.append(clique)
            aw = adj[w]
            nxt = [x for x in cand[idx + 1:] if x in aw]
            if nxt:
                extend(clique, nxt)

    extend((), pool)
    return out


# ---------------------------------------------------------------------------
# Conditionals
# ---------------------------------------------------------------------------

def active_count(i: int, y: Sequence[int], graph: Graph) -> int:
    return sum(1 for k in graph.adj[i] if y[k])


def full_conditional(i: int, y: Sequence[int], graph: Graph, params: MrfParams) -> float:
    """Probit specification ``Phi(psi + zeta * sum_{k ~ i} y_k)``."""
    return normal_cdf(params.psi + params.zeta * active_count(i, y, graph))


def joint_log_odds(i: int, y: Sequence[int], graph: Graph, pot: Potentials) -> float:
    adj = graph.adj
    active = [k for k in adj[i] if y[k]]
    if len(active) <= 1:
        return pot.logit((1, len(active)) if active else (1,))
    return pot.logit(clique_counts(active, adj))


def joint_conditional(i: int, y: Sequence[int], graph: Graph, params: MrfParams,
                      pot: Optional[Potentials] = None) -> float:
    """P(y_i = 1 | rest) under the clique-expansion joint."""
    pot = pot or Potentials(params)
    return float(special.expit(joint_log_odds(i, y, graph, pot)))


def gibbs_sweep(y: np.ndarray, graph: Graph, params: MrfParams,
                rng: np.random.Generator, pot: Optional[Potentials] = None,
                nodes: Optional[Iterable[int]] = None) -> np.ndarray:
    """One sequential single-site sweep (in place; the array is also returned)."""
    pot = pot or Potentials(params)
    order = range(graph.node_count) if nodes is None else nodes
    u = rng.random(graph.node_count)
    for i in order:
        y[i] = 1 if u[i] < special.expit(joint_log_odds(i, y, graph, pot)) else 0
    return y


# ---------------------------------------------------------------------------
# Negpotential and exact joint
# ---------------------------------------------------------------------------

def h_function(nodes: Sequence[int], graph: Graph, params: MrfParams) -> float:
    """Negpotential term for index set ``nodes`` at the all-ones configuration.

    Built by inclusion-exclusion from the probit conditional of the first node,
    with every node outside the set held at the zero reference. Zero for sets
    that are not cliques in the sense that no conditional depends on the
    missing links (e.g. a non-adjacent pair).
    """
    nodes = list(nodes)
    i, rest = nodes[0], nodes[1:]
    total = 0.0
    for r in range(len(rest) + 1):
        sign = (-1) ** (len(rest) - r)
        for sub in itertools.combinations(rest, r):
            s = sum(1 for k in sub if graph.has_edge(i, k))
            total += sign * probit_logit(params.psi + params.zeta * s)
    return total


def negpotential(y: Sequence[int], graph: Graph, params: MrfParams,
                 pot: Optional[Potentials] = None) -> float:
    """Q(y) = log p(y) - log p(0)."""
    pot = pot or Potentials(params)
    active = [v for v in range(graph.node_count) if y[v]]
    counts = clique_counts(active, graph.adj)
    return sum(c * pot.h(k) for k, c in enumerate(counts) if k >= 1)


class _ComponentModel:
    """Exact partition-function machinery for one connected component.

    An independent set ``I`` of the component is summed out analytically given
    the states of the remaining core ``S``; only the core is enumerated.
    """

    def __init__(self, comp: list[int], adj: Sequence[set[int]],
                 clamped_active: frozenset[int] = frozenset()):
        self.comp = comp
        cs = set(comp)
        indep: list[int] = []
        taken: set[int] = set()
        for v in sorted(comp, key=lambda v: (len(adj[v] & cs), v)):
            if v not in taken and not (adj[v] & set(indep)):
                indep.append(v)
                taken.add(v)
        self.indep = indep
        core = [v for v in comp if v not in taken]
        self.core = core
        bit = {v: 1 << b for b, v in enumerate(core)}
        iset = {v: t for t, v in enumerate(indep)}
        # each clique: (size, core mask, index of its independent-set node or -1,
        # clique counts among clamped-active common neighbours)
        self.cliques = []
        for cl in enumerate_cliques(comp, adj):
            mask = 0
            owner = -1
            for v in cl:
                if v in bit:
                    mask |= bit[v]
                else:
                    owner = iset[v]
            if clamped_active:
                common = set(clamped_active)
                for v in cl:
                    common &= adj[v]
                fc = clique_counts(common, adj)
            else:
                fc = [1]
            self.cliques.append((len(cl), mask, owner, fc))
        self.max_size = max((c[0] + len(c[3]) - 1 for c in self.cliques), default=1)

    def log_partition(self, pot: Potentials) -> float:
        h = pot.array(self.max_size + 1)
        nbits = len(self.core)
        n_states = 1 << nbits
        weights = []
        for size, mask, owner, fc in self.cliques:
            w = 0.0
            for k, c in enumerate(fc):
                w += c * h[size + k]
            weights.append(w)
        if nbits <= _SMALL_CORE_BITS:
            return self._log_partition_small(weights, n_states)
        acc = []
        step = 1 << min(nbits, _CHUNK_BITS)
        for start in range(0, n_states, step):
            states = np.arange(start, min(start + step, n_states), dtype=np.int64)
            base = np.zeros(states.size)
            indep = np.zeros((len(self.indep), states.size))
            for (size, mask, owner, _), w in zip(self.cliques, weights):
                if w == 0.0:
                    continue
                hit = (states & mask) == mask
                if owner < 0:
                    base += w * hit
                else:
                    indep[owner] += w * hit
            total = base + np.logaddexp(0.0, indep).sum(axis=0)
            acc.append(_logsumexp(total))
        return _logsumexp(np.array(acc))

    def _log_partition_small(self, weights: list[float], n_states: int) -> float:
        totals = []
        n_ind = len(self.indep)
        for state in range(n_states):
            base = 0.0
            ind = [0.0] * n_ind
            for (size, mask, owner, _), w in zip(self.cliques, weights):
                if state & mask == mask:
                    if owner < 0:
                        base += w
                    else:
                        ind[owner] += w
            for x in ind:
                base += x + math.log1p(math.exp(-x)) if x > 0 else math.log1p(math.exp(x))
            totals.append(base)
        top = max(totals)
        return top + math.log(sum(math.exp(t - top) for t in totals))


def _logsumexp(x: np.ndarray) -> float:
    top = float(x.max())
    if top == -math.inf:
        return top
    return top + math.log(float(np.exp(x - top).sum()))


def log_partition(graph: Graph, params: MrfParams, nodes: Optional[Iterable[int]] = None,
                  clamp: Optional[dict[int, int]] = None, guard: str = "component",
                  pot: Optional[Potentials] = None) -> float:
    """log sum_y exp(Q(y)) over the free nodes, clamped nodes held fixed.

    ``guard`` selects what the capacity limit applies to: the size of each
    free component (``"component"``) or only its enumerated core (``"core"``).
    """
    pot = pot or Potentials(params)
    clamp = clamp or {}
    pool = set(range(graph.node_count)) if nodes is None else set(nodes)
    adj = graph.adj
    on = frozenset(v for v, val in clamp.items() if val)
    free = pool - set(clamp)
    counts = clique_counts(on, adj)
    total = sum(c * pot.h(k) for k, c in enumerate(counts) if k >= 1)
    for comp in graph.components(free):
        if guard == "component":
            _check_capacity(len(comp))
        model = _ComponentModel(comp, adj, on)
        if guard == "core":
            _check_capacity(len(model.core))
        total += model.log_partition(pot)
    return total


def _check_capacity(size: int) -> None:
    if size > MAX_COMPONENT:
        raise CapacityError(f"component of {size} nodes exceeds limit {MAX_COMPONENT}")
    if size > WARN_COMPONENT:
        warnings.warn(f"exact enumeration over a {size}-node component", RuntimeWarning,
                      stacklevel=3)


def kc_log_joint(y: Sequence[int], graph: Graph, params: MrfParams,
                 pot: Optional[Potentials] = None) -> float:
    """Exact log p(y | graph, psi, zeta) under the clique-expansion joint."""
    pot = pot or Potentials(params)
    return negpotential(y, graph, params, pot) - log_partition(graph, params, pot=pot)


def brook_log_ratio(y_a: Sequence[int], y_b: Sequence[int], graph: Graph,
                    params: MrfParams, pot: Optional[Potentials] = None) -> float:
    """log p(y_a) - log p(y_b) by flipping coordinates of y_b to y_a one at a time."""
    if len(y_a) != len(y_b):
        raise ValueError("response vectors differ in length")
    pot = pot or Potentials(params)
    cur = list(y_b)
    total = 0.0
    for k in range(len(cur)):
        if cur[k] == y_a[k]:
            continue
        z = joint_log_odds(k, cur, graph, pot)
        # log p(y_a[k] | rest) - log p(y_b[k] | rest) for a binary site
        total += z if y_a[k] else -z
        cur[k] = y_a[k]
    return total


class StarModel:
    """Exact marginal of the centre node under the MRF on its induced star."""

    def __init__(self, center: int, graph: Graph):
        nbrs = sorted(graph.adj[center])
        self.center = center
        sub, order = graph.subgraph([center] + nbrs)
        c = order.index(center)
        free = [v for v in range(len(order)) if v != c]
        self.comps = []
        for comp in sub.components(free):
            m0 = _ComponentModel(comp, sub.adj)
            m1 = _ComponentModel(comp, sub.adj, frozenset([c]))
            _check_capacity(len(m0.core))
            self.comps.append((m0, m1))

    def log_prob_zero(self, pot: Potentials) -> float:
        z0 = 0.0
        z1 = pot.h(1)
        for m0, m1 in self.comps:
            z0 += m0.log_partition(pot)
            z1 += m1.log_partition(pot)
        return z0 - np.logaddexp(z0, z1)


def star_marginal_zero(i: int, graph: Graph, params: MrfParams) -> float:
    """P(y_i = 0) under the MRF restricted to the subgraph induced by i's star."""
    return math.exp(StarModel(i, graph).log_prob_zero(Potentials(params)))


# ---------------------------------------------------------------------------
# Priors on (psi, zeta)
# ---------------------------------------------------------------------------

def prior_log_density_zeta(zeta: float, eta1: float, eta2: float, delta: float) -> float:
    if not 0.0 < zeta < delta:
        return -math.inf
    return float(stats.beta.logpdf(zeta / delta, eta1, eta2)) - math.log(delta)


def prior_log_density_psi(psi: float, nu1: float, nu2: float, xi: float) -> float:
    if not -xi < psi < 0.0:
        return -math.inf
    return float(stats.beta.logpdf((psi + xi) / xi, nu1, nu2)) - math.log(xi)


def sample_zeta_prior(eta1: float, eta2: float, delta: float, rng: np.random.Generator,
                      size: Optional[int] = None):
    return delta * rng.beta(eta1, eta2, size=size)


def sample_psi_prior(nu1: float, nu2: float, xi: float, rng: np.random.Generator,
                     size: Optional[int] = None):
    return -xi + xi * rng.beta(nu1, nu2, size=size)
