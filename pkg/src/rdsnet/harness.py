"""Simulation studies: regimes, error curves, misspecification and sensitivity runs.

Every stochastic step draws from a ``numpy.random.SeedSequence`` tree rooted at
the run's master seed, and replicate results are merged by index, so outputs
do not depend on the number of worker processes.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Sequence, Union

import numpy as np

from .baselines import SampleData, naive_estimate, vh_bootstrap_ci, vh_estimate
from .bma import FitConfig, GraphPrior, PosteriorSummary, fit
from .design import RdsConfig, RdsData, TraceExhausted, simulate_rds
from .fastgibbs import GraphArrays, gibbs
from .graph import ErdosRenyi, Graph, ProductBernoulli, SmallWorld, sample_graph
from .mcmc import KernelConfig
from .mrf import MrfParams, MrfPrior, Potentials, normal_cdf

log = logging.getLogger(__name__)

METHODS = ("bayes", "vh", "naive")


@dataclass(frozen=True)
class Regime:
    """One simulation scenario: truth network, design, MRF target and fit settings."""

    truth: str = "er"              # "er", "product" or "smallworld"
    density: float = 0.1           # er / product
    avg_degree: int = 20           # smallworld ring degree
    rewire: float = 0.1            # smallworld rewiring probability
    N: int = 200
    n: int = 50
    m: int = 3
    seeds: int = 1
    q_target: float = 0.2
    zeta: float = 0.1
    psi: Optional[float] = None    # calibrated to q_target when None
    replicates: int = 30
    fit_family: str = "er"
    prior_strength: float = 40.0
    gibbs_burn_in: int = 1000
    bootstrap: int = 1000
    bootstrap_scheme: str = "chain"
    level: float = 0.95
    fit: FitConfig = field(default_factory=lambda: FitConfig(population=1))
    max_redraws: int = 100

    def __post_init__(self):
        if self.truth not in ("er", "product", "smallworld"):
            raise ValueError(f"unknown truth model {self.truth!r}")
        if not 1 <= self.n <= self.N:
            raise ValueError("need 1 <= n <= N")
        if not 0.0 < self.nominal_density < 1.0:
            raise ValueError("density must lie in (0, 1)")
        if self.seeds > self.n:
            raise ValueError("more seeds than sample slots")

    @property
    def nominal_density(self) -> float:
        if self.truth == "smallworld":
            return self.avg_degree / (self.N - 1)
        return self.density

    def graph_model(self):
        if self.truth == "er":
            return ErdosRenyi(self.density)
        if self.truth == "product":
            return ProductBernoulli.matching_density(self.density)
        return SmallWorld(self.avg_degree, self.rewire)

    def fit_config(self, population: Optional[int] = None,
                   density: Optional[float] = None) -> FitConfig:
        prior = GraphPrior.centred(density if density is not None else self.nominal_density,
                                   self.prior_strength, self.fit_family)
        return dataclasses.replace(self.fit, population=population or self.N,
                                   graph_prior=prior, level=self.level)

    def to_dict(self) -> dict:
        return _to_jsonable(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, raw: dict) -> "Regime":
        raw = dict(raw)
        fit_raw = dict(raw.pop("fit", {}))
        if "kernel" in fit_raw:
            k = dict(fit_raw["kernel"])
            for key in ("psi_weights", "zeta_weights", "y_weights"):
                if key in k:
                    k[key] = tuple(k[key])
            if "schedule" in k:
                k["schedule"] = tuple((str(a), int(b)) for a, b in k["schedule"])
            fit_raw["kernel"] = KernelConfig(**k)
        if "mrf_prior" in fit_raw:
            fit_raw["mrf_prior"] = MrfPrior(**fit_raw["mrf_prior"])
        if "graph_prior" in fit_raw:
            fit_raw["graph_prior"] = GraphPrior(**fit_raw["graph_prior"])
        fit_raw.setdefault("population", 1)
        return cls(**raw, fit=FitConfig(**fit_raw))


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    return obj


def desk_fit(**overrides) -> FitConfig:
    """Fit settings used by the desk-scale regimes (paper chain lengths)."""
    base = FitConfig(population=1, draws=1000, chains=5, burn_in=3000, samples=500)
    return dataclasses.replace(base, **overrides)


# ---------------------------------------------------------------------------
# Truth generation
# ---------------------------------------------------------------------------

def sample_responses(graph: Graph, params: MrfParams, sweeps: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Draw Y on ``graph`` by Gibbs sampling from an independent start."""
    y = (rng.random(graph.node_count) < normal_cdf(params.psi)).astype(np.int8)
    return gibbs(y, GraphArrays(graph), Potentials(params), sweeps, rng)


def long_run_mean(regime: Regime, psi: float, seed: np.random.SeedSequence,
                  graphs: int = 10, burn: int = 300, keep: int = 700) -> float:
    """Mean of Y over graphs and Gibbs sweeps at (psi, regime.zeta).

    Reuses the same random streams for every ``psi`` so the estimate is a
    smooth function for bisection.
    """
    params = MrfParams(psi, regime.zeta)
    pot = Potentials(params)
    total = 0.0
    for child in seed.spawn(graphs):
        rng = np.random.default_rng(child)
        g = sample_graph(regime.graph_model(), regime.N, rng)
        arrays = GraphArrays(g)
        u0 = rng.random(regime.N)
        y = (u0 < normal_cdf(psi)).astype(np.int8)
        gibbs(y, arrays, pot, burn, rng)
        acc = 0.0
        for _ in range(keep):
            gibbs(y, arrays, pot, 1, rng)
            acc += y.mean()
        total += acc / keep
    return total / graphs


def calibrate_psi(regime: Regime, seed: np.random.SeedSequence, lo: float = -3.0,
                  hi: float = 0.0, tol: float = 1e-3, **kwargs) -> float:
    """Bisection on psi so that the long-run mean of Y hits ``regime.q_target``."""
    f_lo = long_run_mean(regime, lo + 1e-9, seed, **kwargs) - regime.q_target
    f_hi = long_run_mean(regime, hi - 1e-9, seed, **kwargs) - regime.q_target
    if f_lo > 0 or f_hi < 0:
        raise ValueError(f"target {regime.q_target} not bracketed by psi in ({lo}, {hi})")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if long_run_mean(regime, mid, seed, **kwargs) < regime.q_target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class SimulatedSample:
    data: RdsData
    graph: Graph
    y: np.ndarray
    q_emp: float
    redraws: int


def simulate_sample(regime: Regime, params: MrfParams, rng: np.random.Generator) -> SimulatedSample:
    """Population graph, responses and one recruitment sample from it."""
    redraws = 0
    while True:
        g = sample_graph(regime.graph_model(), regime.N, rng)
        y = sample_responses(g, params, regime.gibbs_burn_in, rng)
        seeds = tuple(int(s) for s in rng.choice(regime.N, size=regime.seeds, replace=False))
        try:
            trace = simulate_rds(g, RdsConfig(seeds, regime.m, regime.n), rng)
            break
        except TraceExhausted:
            redraws += 1
            if redraws > regime.max_redraws:
                raise RuntimeError("recruitment kept stalling; regime too sparse")
    order = trace.order()
    data = RdsData(trace, {v: int(y[v]) for v in order}, {v: g.degree(v) for v in order})
    return SimulatedSample(data, g, y, float(y.mean()), redraws)


# ---------------------------------------------------------------------------
# Regimes
# ---------------------------------------------------------------------------

ROW_COLUMNS = ("replicate", "status", "q_inf", "q_emp", "density", "redraws", "n_mc",
               "bayes_est", "bayes_lo", "bayes_hi", "vh_est", "vh_lo", "vh_hi",
               "naive_est", "error")

AGG_COLUMNS = ("method", "replicates", "failed", "bias_inf", "bias_emp", "cover_inf",
               "cover_emp", "length", "mse_inf", "mse_emp")


@dataclass
class RegimeResult:
    regime: Regime
    psi: float
    rows: list[dict]
    aggregates: list[dict]

    @property
    def failed(self) -> int:
        return sum(1 for r in self.rows if r["status"] != "ok")


def _replicate(args) -> dict:
    regime, params, q_inf, index, seed = args
    row = {c: "" for c in ROW_COLUMNS}
    row.update(replicate=index, status="ok", q_inf=q_inf)
    try:
        sim_ss, fit_ss, boot_ss = seed.spawn(3)
        rng = np.random.default_rng(sim_ss)
        sim = simulate_sample(regime, params, rng)
        summary = fit(sim.data, regime.fit_config(), fit_ss)
        sd = SampleData.from_rds(sim.data)
        lo, hi = vh_bootstrap_ci(sd, regime.bootstrap, regime.level,
                                 np.random.default_rng(boot_ss), regime.bootstrap_scheme)
        N = sim.graph.node_count
        row.update(
            q_emp=sim.q_emp, density=sim.graph.edge_count() / (N * (N - 1) / 2),
            redraws=sim.redraws,
            n_mc=float(np.mean([c.spec.n_aug for c in summary.chains])) + regime.n,
            bayes_est=summary.estimate, bayes_lo=summary.lower, bayes_hi=summary.upper,
            vh_est=vh_estimate(sd.y, sd.degree), vh_lo=lo, vh_hi=hi,
            naive_est=naive_estimate(sd.y))
    except Exception as exc:  # recorded and excluded, never dropped silently
        log.warning("replicate %d failed: %s", index, exc)
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    return row


def aggregate(rows: Sequence[dict]) -> list[dict]:
    """Bias (truth minus estimate), coverage, interval length and MSE per method."""
    ok = [r for r in rows if r["status"] == "ok"]
    failed = len(rows) - len(ok)
    out = []
    for method in METHODS:
        rec = {"method": method, "replicates": len(ok), "failed": failed}
        if ok:
            est = np.array([r[f"{method}_est"] for r in ok], dtype=float)
            qi = np.array([r["q_inf"] for r in ok], dtype=float)
            qe = np.array([r["q_emp"] for r in ok], dtype=float)
            rec.update(bias_inf=float(np.mean(qi - est)), bias_emp=float(np.mean(qe - est)),
                       mse_inf=float(np.mean((qi - est) ** 2)),
                       mse_emp=float(np.mean((qe - est) ** 2)))
            if method != "naive":
                lo = np.array([r[f"{method}_lo"] for r in ok], dtype=float)
                hi = np.array([r[f"{method}_hi"] for r in ok], dtype=float)
                rec.update(cover_inf=float(np.mean((lo <= qi) & (qi <= hi))),
                           cover_emp=float(np.mean((lo <= qe) & (qe <= hi))),
                           length=float(np.mean(hi - lo)))
        out.append({c: rec.get(c, "") for c in AGG_COLUMNS})
    return out


def _map(fn: Callable, jobs: list, threads: int) -> list:
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def run_regime(regime: Regime, seed: Union[int, np.random.SeedSequence],
               threads: int = 1) -> RegimeResult:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    cal_ss, rep_ss = ss.spawn(2)
    if regime.psi is None:
        psi, q_inf = calibrate_psi(regime, cal_ss), regime.q_target
    else:
        psi = regime.psi
        q_inf = long_run_mean(regime, psi, cal_ss)
    params = MrfParams(psi, regime.zeta)
    jobs = [(regime, params, q_inf, i, s)
            for i, s in enumerate(rep_ss.spawn(regime.replicates))]
    rows = _map(_replicate, jobs, threads)
    return RegimeResult(regime, psi, rows, aggregate(rows))


def run_mse_sweep(axis: str, grid: Sequence[float], base: Regime,
                  seed: Union[int, np.random.SeedSequence], threads: int = 1) -> list[dict]:
    """Mean and SD of the squared error (vs Q_inf) per method along one axis."""
    field_name = {"coupons": "m", "density": "density", "sample-fraction": "n"}.get(axis)
    if field_name is None:
        raise ValueError("axis must be coupons, density or sample-fraction")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rows = []
    for value, child in zip(grid, ss.spawn(len(grid))):
        if field_name == "m":
            regime = dataclasses.replace(base, m=int(value))
        elif field_name == "n":
            regime = dataclasses.replace(base, n=max(1, int(round(value * base.N))))
        else:
            regime = dataclasses.replace(base, density=float(value))
        res = run_regime(regime, child, threads)
        ok = [r for r in res.rows if r["status"] == "ok"]
        for method in METHODS:
            err = np.array([(r["q_inf"] - r[f"{method}_est"]) ** 2 for r in ok], dtype=float)
            rows.append({"axis": axis, "value": value, "method": method,
                         "mse_mean": float(err.mean()) if err.size else "",
                         "mse_sd": float(err.std(ddof=1)) if err.size > 1 else "",
                         "replicates": len(ok), "failed": res.failed})
    return rows


def run_misspec_study(grid: Sequence[tuple[int, float]], families: Sequence[str], base: Regime,
                      seed: Union[int, np.random.SeedSequence],
                      threads: int = 1) -> list[dict]:
    """Small-world truths fitted under each prior family in ``families``."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    out = []
    cells = [(deg, rw, fam) for deg, rw in grid for fam in families]
    for (deg, rw, fam), child in zip(cells, ss.spawn(len(cells))):
        regime = dataclasses.replace(base, truth="smallworld", avg_degree=int(deg),
                                     rewire=float(rw), fit_family=fam)
        res = run_regime(regime, child, threads)
        ok = [r for r in res.rows if r["status"] == "ok"]
        realized = float(np.mean([r["density"] for r in ok])) if ok else ""
        for agg in res.aggregates:
            if agg["method"] == "naive":
                continue
            out.append({"avg_degree": deg, "rewire": rw, "fit_family": fam,
                        "realized_density": realized, **agg})
    return out


SENS_COLUMNS = ("population", "density", "mean", "sd", "q025", "q50", "q975", "chains")


def run_sensitivity(data: RdsData, populations: Sequence[int], densities: Sequence[float],
                    base: Regime, seed: Union[int, np.random.SeedSequence]) -> list[dict]:
    """Posterior summaries of Q over a grid of population sizes and prior densities."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    cells = [(N, d) for N in populations for d in densities]
    out = []
    for (N, d), child in zip(cells, ss.spawn(len(cells))):
        summary = fit(data, base.fit_config(population=int(N), density=float(d)), child)
        s = summary.samples
        q025, q50, q975 = np.quantile(s, [0.025, 0.5, 0.975])
        out.append({"population": int(N), "density": float(d), "mean": float(s.mean()),
                    "sd": float(s.std(ddof=1)) if s.size > 1 else 0.0,
                    "q025": float(q025), "q50": float(q50), "q975": float(q975),
                    "chains": len(summary.chains)})
    return out


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def _fmt(v: Any) -> str:
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def write_rows(rows: Sequence[dict], path: Union[str, Path],
               columns: Optional[Sequence[str]] = None) -> None:
    columns = list(columns or (rows[0].keys() if rows else []))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in columns])


def write_manifest(path: Union[str, Path], command: str, seed: int, config: dict,
                   outputs: Sequence[str]) -> None:
    import scipy
    manifest = {
        "command": command,
        "seed": seed,
        "config": config,
        "outputs": sorted(outputs),
        "versions": {"python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__},
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def write_regime(result: RegimeResult, out_dir: Union[str, Path], prefix: str = "regime") -> list[str]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_rows(result.rows, out / f"{prefix}_replicates.csv", ROW_COLUMNS)
    agg = [{**a, "psi": result.psi} for a in result.aggregates]
    write_rows(agg, out / f"{prefix}_summary.csv", AGG_COLUMNS + ("psi",))
    return [f"{prefix}_replicates.csv", f"{prefix}_summary.csv"]
