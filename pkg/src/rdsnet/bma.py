"""Model averaging over augmentation complexities.

The mixing distribution over (N_AUG, E_intra, E_extra) is calibrated by
prior-predictive simulation: draw a network from the graph prior, run the
recruitment design on it, and read off how many unsampled neighbours and
unobserved edges the sample touches. Each chain is run at one drawn
complexity and the pooled Q_MC draws give the estimate and interval.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .design import RdsConfig, RdsData, RdsTrace, TraceExhausted, simulate_rds
from .diagnostics import ess
from .graph import ErdosRenyi, Graph, ProductBernoulli, sample_graph
from .mcmc import (ChainResult, ComplexitySpec, KernelConfig, Model, Priors, check_invariants,
                   init_state, run_chain)
from .mrf import MrfPrior

log = logging.getLogger(__name__)

__all__ = ["ComplexitySpec", "GraphPrior", "CalibrationDraw", "MixingDistribution",
           "FitConfig", "PosteriorSummary", "complexity_of", "calibrate_mixing", "fit",
           "write_fit_report"]


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class GraphPrior:
    """Beta(omega1, omega2) on the edge density plus the graph family.

    ``family="er"`` is Erdos-Renyi at the drawn density; ``"product"`` draws a
    product-Bernoulli graph whose mean density equals the drawn value.
    """

    omega1: float = 2.0
    omega2: float = 38.0
    family: str = "er"
    concentration: float = 10.0

    def __post_init__(self):
        if self.family not in ("er", "product"):
            raise ValueError("family must be 'er' or 'product'")
        if self.omega1 < 0 or self.omega2 <= 0:
            raise ValueError("Beta shapes must be positive")

    @classmethod
    def centred(cls, density: float, strength: float = 40.0, family: str = "er") -> "GraphPrior":
        """Beta prior with mean ``density`` and total concentration ``strength``."""
        return cls(density * strength, (1.0 - density) * strength, family)

    def draw_alpha(self, rng: np.random.Generator) -> float:
        if self.omega1 == 0:  # point mass at zero
            return 0.0
        return float(rng.beta(self.omega1, self.omega2))

    def model(self, alpha: float):
        if self.family == "er" or alpha <= 0.0:
            return ErdosRenyi(alpha)
        return ProductBernoulli.matching_density(alpha, self.concentration)


@dataclass(frozen=True)
class CalibrationDraw:
    spec: ComplexitySpec
    alpha: float


@dataclass
class MixingDistribution:
    draws: list[CalibrationDraw]
    retries: int = 0

    def frequencies(self) -> dict[ComplexitySpec, float]:
        c = Counter(d.spec for d in self.draws)
        total = len(self.draws)
        return {k: v / total for k, v in sorted(c.items(), key=lambda kv: astuple(kv[0]))}

    def sample(self, rng: np.random.Generator, size: int) -> list[CalibrationDraw]:
        idx = rng.integers(len(self.draws), size=size)
        return [self.draws[int(i)] for i in idx]

    def total_variation(self, other: "MixingDistribution") -> float:
        a, b = self.frequencies(), other.frequencies()
        return 0.5 * sum(abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in set(a) | set(b))


def astuple(spec: ComplexitySpec) -> tuple[int, int, int]:
    return (spec.n_aug, spec.e_intra, spec.e_extra)


def complexity_of(graph: Graph, trace: RdsTrace) -> ComplexitySpec:
    """Complexity that the sample's neighbourhood in ``graph`` implies."""
    order = trace.order()
    sampled = set(order)
    waves = trace.waves()
    tree = {frozenset(e) for e in trace.recruitment_edges()}
    touched = set()
    e_extra = 0
    e_intra = 0
    for v in order:
        for w in graph.adj[v]:
            if w not in sampled:
                touched.add(w)
                e_extra += 1
            elif v < w and waves[v] != waves[w] and frozenset((v, w)) not in tree:
                e_intra += 1
    return ComplexitySpec(len(touched), e_intra, e_extra)


def calibrate_mixing(prior: GraphPrior, rds: RdsConfig, N: int, D: int,
                     rng: np.random.Generator, max_retries: int = 100) -> MixingDistribution:
    """Prior-predictive distribution of the augmentation complexity.

    Draws whose recruitment stalls before reaching the sample size are redrawn;
    more than ``max_retries`` consecutive stalls raise :class:`CalibrationError`.
    """
    if D < 1:
        raise ValueError("D must be at least 1")
    draws = []
    retries = 0
    while len(draws) < D:
        stalls = 0
        while True:
            alpha = prior.draw_alpha(rng)
            if alpha == 0.0:
                g = Graph(N)
            else:
                g = sample_graph(prior.model(alpha), N, rng)
            try:
                trace = simulate_rds(g, rds, rng)
                break
            except TraceExhausted:
                if alpha == 0.0:
                    # an empty network cannot recruit; the only consistent atom
                    trace = None
                    break
                stalls += 1
                retries += 1
                if stalls > max_retries:
                    raise CalibrationError(
                        f"{stalls} consecutive prior draws could not reach n={rds.n}")
        spec = ComplexitySpec(0, 0, 0) if trace is None else complexity_of(g, trace)
        draws.append(CalibrationDraw(spec, alpha))
    if retries:
        log.info("calibration redrew %d stalled recruitments", retries)
    return MixingDistribution(draws, retries)


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FitConfig:
    population: int
    graph_prior: GraphPrior = field(default_factory=GraphPrior)
    mrf_prior: MrfPrior = field(default_factory=MrfPrior)
    kernel: KernelConfig = field(default_factory=KernelConfig)
    draws: int = 1000          # calibration draws D
    chains: int = 5            # complexity draws W
    burn_in: int = 3000
    samples: int = 500
    thin: int = 1
    level: float = 0.95
    keep_states: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.population < 1 or self.chains < 1 or self.samples < 1 or self.burn_in < 0:
            raise ValueError("population, chains and samples must be positive")
        if not 0.0 < self.level < 1.0:
            raise ValueError("level must lie in (0, 1)")


@dataclass
class ChainReport:
    spec: ComplexitySpec
    alpha: float
    requested: ComplexitySpec
    acceptance: dict[str, float]
    ess_q: float
    mean_q: float
    notes: list[str]
    seed: list[int]


@dataclass
class PosteriorSummary:
    estimate: float
    lower: float
    upper: float
    level: float
    samples: np.ndarray
    spec_weights: dict[ComplexitySpec, float]
    chains: list[ChainReport]
    results: list[ChainResult] = field(default_factory=list, repr=False)
    calibration_retries: int = 0

    @property
    def length(self) -> float:
        return self.upper - self.lower


def _run_one(args):
    model, draw, kernel, iterations, burn_in, thin, keep, seed = args
    rng = np.random.default_rng(seed)
    state, notes = init_state(model, draw.spec, draw.alpha, rng)
    if kernel.check_invariants:
        check_invariants(state)
    res = run_chain(state, kernel, iterations, burn_in, rng, thin=thin, keep_states=keep)
    res.notes = notes
    return res


def fit(data: RdsData, config: FitConfig, seed: Union[int, np.random.SeedSequence],
        specs: Optional[Sequence[CalibrationDraw]] = None) -> PosteriorSummary:
    """Model-averaged posterior of Q_MC for one observed sample.

    ``specs`` bypasses calibration and runs one chain per given draw.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    cal_ss, pick_ss, chain_root = ss.spawn(3)
    model = Model(data, Priors(config.mrf_prior, config.graph_prior.omega1,
                               config.graph_prior.omega2))
    retries = 0
    if specs is None:
        rds = RdsConfig(tuple(range(len(data.trace.seeds))), data.trace.m,
                        data.trace.sample_size)
        mixing = calibrate_mixing(config.graph_prior, rds, config.population, config.draws,
                                  np.random.default_rng(cal_ss))
        retries = mixing.retries
        specs = mixing.sample(np.random.default_rng(pick_ss), config.chains)
    specs = list(specs)
    chain_seeds = chain_root.spawn(len(specs))
    iterations = config.burn_in + config.samples * config.thin
    jobs = [(model, d, config.kernel, iterations, config.burn_in, config.thin,
             config.keep_states, s) for d, s in zip(specs, chain_seeds)]
    if config.threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    pooled = np.concatenate([r.q_mc for r in results])
    a = 1.0 - config.level
    lo, hi = np.quantile(pooled, [a / 2.0, 1.0 - a / 2.0])
    counts = Counter(r.spec for r in results)
    reports = [
        ChainReport(r.spec, r.alpha, d.spec, r.acceptance,
                    ess(r.q_mc).value if r.q_mc.size >= 10 else float(r.q_mc.size),
                    float(r.q_mc.mean()), r.notes, list(s.spawn_key))
        for r, d, s in zip(results, specs, chain_seeds)]
    return PosteriorSummary(
        float(pooled.mean()), float(lo), float(hi), config.level, pooled,
        {k: v / len(results) for k, v in counts.items()}, reports, results, retries)


def write_fit_report(summary: PosteriorSummary, path: Union[str, Path],
                     seed: Optional[int] = None, extra: Optional[dict] = None) -> None:
    def spec_key(s: ComplexitySpec) -> str:
        return f"{s.n_aug}/{s.e_intra}/{s.e_extra}"

    report = {
        "estimate": summary.estimate,
        "interval": [summary.lower, summary.upper],
        "level": summary.level,
        "pooled_samples": int(summary.samples.size),
        "spec_weights": {spec_key(k): v for k, v in
                         sorted(summary.spec_weights.items(), key=lambda kv: astuple(kv[0]))},
        "calibration_retries": summary.calibration_retries,
        "chains": [
            {**{k: v for k, v in asdict(c).items() if k not in ("spec", "requested")},
             "spec": spec_key(c.spec), "requested": spec_key(c.requested)}
            for c in summary.chains],
        "seed": seed,
    }
    if extra:
        report.update(extra)
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
