"""Design-based comparators: sample proportion, Volz-Heckathorn, bootstrap intervals."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .design import RdsData


@dataclass(frozen=True)
class SampleData:
    """Per-node response, reported degree and recruiter position (-1 for seeds)."""

    y: np.ndarray
    degree: np.ndarray
    recruiter: np.ndarray

    def __post_init__(self):
        if not (self.y.size == self.degree.size == self.recruiter.size):
            raise ValueError("arrays must have equal length")

    @classmethod
    def from_rds(cls, data: RdsData) -> "SampleData":
        order = data.trace.order()
        pos = {v: i for i, v in enumerate(order)}
        rec = data.trace.recruiter_of()
        return cls(data.y().astype(float), data.degrees().astype(float),
                   np.array([pos[rec[v]] if rec[v] is not None else -1 for v in order]))


def naive_estimate(y: Sequence[float]) -> float:
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise ValueError("empty sample")
    return float(y.mean())


def vh_estimate(y: Sequence[float], degree: Sequence[float]) -> float:
    """Inverse-degree weighted ratio estimator sum(y/d) / sum(1/d)."""
    y = np.asarray(y, dtype=float)
    d = np.asarray(degree, dtype=float)
    if y.size == 0 or y.size != d.size:
        raise ValueError("need matching non-empty response and degree arrays")
    if np.any(d <= 0):
        raise ValueError("reported degrees must be positive")
    w = 1.0 / d
    return float((y * w).sum() / w.sum())


def vh_bootstrap_ci(data: SampleData, B: int, level: float, rng: np.random.Generator,
                    scheme: str = "chain") -> tuple[float, float]:
    """Percentile bootstrap interval for the VH estimator.

    ``"chain"`` regenerates recruitment chains as a Markov chain on response
    classes: each step draws uniformly among the sampled recruits of recruiters
    sharing the current node's class. ``"iid"`` resamples nodes with
    replacement.
    """
    if B < 100:
        raise ValueError("B must be at least 100")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    y, d = data.y, data.degree
    n = y.size
    if scheme == "iid":
        idx = rng.integers(n, size=(B, n))
    elif scheme == "chain":
        idx = _chain_resample(data, B, rng)
    else:
        raise ValueError("scheme must be 'chain' or 'iid'")
    w = 1.0 / d[idx]
    est = (y[idx] * w).sum(axis=1) / w.sum(axis=1)
    a = 1.0 - level
    lo, hi = np.quantile(est, [a / 2.0, 1.0 - a / 2.0])
    return float(np.clip(lo, 0.0, 1.0)), float(np.clip(hi, 0.0, 1.0))


def _chain_resample(data: SampleData, B: int, rng: np.random.Generator) -> np.ndarray:
    y = data.y
    n = y.size
    recruited = np.flatnonzero(data.recruiter >= 0)
    fallback = recruited if recruited.size else np.arange(n)
    classes = np.unique(y)
    pools = {}
    for c in classes:
        mask = y[data.recruiter[recruited]] == c if recruited.size else np.zeros(0, bool)
        pool = recruited[mask]
        pools[c] = pool if pool.size else fallback
    idx = np.empty((B, n), dtype=np.int64)
    idx[:, 0] = rng.integers(n, size=B)
    for t in range(1, n):
        prev = y[idx[:, t - 1]]
        for c in classes:
            sel = np.flatnonzero(prev == c)
            if sel.size:
                pool = pools[c]
                idx[sel, t] = pool[rng.integers(pool.size, size=sel.size)]
    return idx
