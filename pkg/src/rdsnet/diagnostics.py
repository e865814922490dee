"""Chain diagnostics and posterior predictive checks."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .graph import Graph
from .mrf import MrfParams, Potentials, normal_cdf


@dataclass(frozen=True)
class EssResult:
    value: float
    kappa: float
    constant: bool = False

    def __float__(self) -> float:
        return self.value


def autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased autocovariances at lags 0..T-1 via FFT."""
    x = np.asarray(x, dtype=float)
    T = x.size
    c = x - x.mean()
    size = 1 << int(np.ceil(np.log2(2 * T)))
    f = np.fft.rfft(c, size)
    return np.fft.irfft(f * np.conj(f), size)[:T] / T


def ess(trace: Sequence[float]) -> EssResult:
    """Effective sample size T / kappa, kappa = 1 + 2 sum of autocorrelations.

    The autocorrelation sum is truncated with Geyer's initial positive
    sequence: lag pairs are summed while their total stays positive.
    """
    x = np.asarray(trace, dtype=float)
    T = x.size
    if T < 10:
        raise ValueError("need at least 10 draws")
    if not np.all(np.isfinite(x)):
        raise ValueError("trace contains non-finite values")
    gamma = autocovariance(x)
    if gamma[0] <= 1e-300 * max(1.0, float(np.abs(x).max()) ** 2):
        return EssResult(float(T), 1.0, constant=True)
    rho = gamma / gamma[0]
    total = 0.0
    for k in range(0, T - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0.0:
            break
        total += pair
    kappa = max(2.0 * float(total) - 1.0, 1.0 / T)
    return EssResult(min(T / kappa, float(T)), kappa)


def mc_variance(trace: Sequence[float]) -> float:
    """Monte Carlo variance of the trace mean: sum (h - mean)^2 / (T * ESS)."""
    x = np.asarray(trace, dtype=float)
    T = x.size
    dev = float(((x - x.mean()) ** 2).sum())
    if dev == 0.0:
        return 0.0
    return dev / (T * ess(x).value)


# ---------------------------------------------------------------------------
# Posterior predictive check
# ---------------------------------------------------------------------------

@dataclass
class PpcResult:
    observed: float
    replicates: np.ndarray
    tail_probability: float


def posterior_predictive_check(states: Sequence[tuple[MrfParams, np.ndarray, Graph]],
                               n_sampled: int, observed_mean: float, R: int,
                               rng: np.random.Generator, sweeps: int = 100) -> PpcResult:
    """Compare the sampled-node mean with its posterior predictive distribution.

    Each replicate picks a retained posterior state, regenerates the whole
    response vector on that state's graph by Gibbs sampling from an
    independent start, and records the mean over the first ``n_sampled``
    nodes (the sampled ones). The tail probability is two-sided.
    """
    from .fastgibbs import GraphArrays, gibbs

    if not states:
        raise ValueError("no retained posterior states")
    picks = rng.integers(len(states), size=R)
    arrays = {}
    reps = np.empty(R)
    for r, i in enumerate(picks):
        params, y0, graph = states[int(i)]
        i = int(i)
        if i not in arrays:
            arrays[i] = GraphArrays(graph)
        y = (rng.random(y0.size) < normal_cdf(params.psi)).astype(np.int8)
        gibbs(y, arrays[i], Potentials(params), sweeps, rng)
        reps[r] = y[:n_sampled].mean()
    upper = float(np.mean(reps >= observed_mean))
    lower = float(np.mean(reps <= observed_mean))
    return PpcResult(observed_mean, reps, min(1.0, 2.0 * min(upper, lower)))


def write_ppc_csv(result: PpcResult, path: Union[str, Path], bins: int = 20) -> None:
    """Histogram of replicate statistics with the observed value on every row."""
    lo = min(float(result.replicates.min()), result.observed)
    hi = max(float(result.replicates.max()), result.observed)
    if hi == lo:
        hi = lo + 1e-9
    counts, edges = np.histogram(result.replicates, bins=bins, range=(lo, hi))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", "count", "observed", "tail_probability"])
        for c, a, b in zip(counts, edges[:-1], edges[1:]):
            w.writerow([repr(float(a)), repr(float(b)), int(c), repr(result.observed),
                        repr(result.tail_probability)])
