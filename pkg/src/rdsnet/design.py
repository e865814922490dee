"""Respondent-driven sampling: simulation, exact design likelihood, trace I/O.

Replay conventions (fixed here so that simulation and likelihood agree):

* nodes are processed in the order they entered the sample (seeds first, in
  the order given), which makes the waves non-decreasing;
* a processed node with ``d`` not-yet-sampled neighbours hands its coupons to
  all of them when ``d <= m`` and to a uniform ``m``-subset otherwise;
  recruits of one allocation enter the sample in increasing id order;
* sampling stops the moment ``n`` nodes are in. If the last allocation would
  overshoot, the observed recruits are the first ``n - count`` coupons
  returned, in uniformly random order, so they form a uniform subset of the
  available neighbours.

Under these rules every processed node ``u`` with ``j`` recorded recruits and
``d`` available neighbours contributes ``1 / C(d, j)``; a node that was not
the last one processed must also satisfy ``j == min(d, m)``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .graph import Graph

log = logging.getLogger(__name__)


class TraceExhausted(RuntimeError):
    """The recruitment process ran out of reachable nodes before reaching n."""

    def __init__(self, partial: "RdsTrace"):
        super().__init__(
            f"recruitment stopped at {partial.sample_size} of {partial.target} nodes")
        self.partial = partial


class TraceFormatError(ValueError):
    pass


@dataclass(frozen=True)
class RdsConfig:
    seeds: tuple[int, ...]
    m: int
    n: int

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if len(self.seeds) < 1:
            raise ValueError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seed ids must be distinct")
        if self.m < 1:
            raise ValueError("coupon count m must be positive")
        if self.n < len(self.seeds):
            raise ValueError("target sample size must be at least the number of seeds")


@dataclass(frozen=True)
class RecruitEvent:
    recruited: int
    recruiter: int
    wave: int
    available: int  # recruiter's not-yet-sampled neighbour count at allocation


@dataclass
class RdsTrace:
    seeds: tuple[int, ...]
    events: list[RecruitEvent]
    m: int
    target: int
    complete: bool = True

    @property
    def sample_size(self) -> int:
        return len(self.seeds) + len(self.events)

    def order(self) -> list[int]:
        """Sampled node ids in the order they entered the sample."""
        return list(self.seeds) + [e.recruited for e in self.events]

    def waves(self) -> dict[int, int]:
        w = {s: 0 for s in self.seeds}
        for e in self.events:
            w[e.recruited] = e.wave
        return w

    def recruiter_of(self) -> dict[int, Optional[int]]:
        r: dict[int, Optional[int]] = {s: None for s in self.seeds}
        for e in self.events:
            r[e.recruited] = e.recruiter
        return r

    def recruitment_edges(self) -> list[tuple[int, int]]:
        return [(e.recruiter, e.recruited) for e in self.events]

    def relabel(self, mapping: dict[int, int]) -> "RdsTrace":
        return RdsTrace(
            seeds=tuple(mapping[s] for s in self.seeds),
            events=[RecruitEvent(mapping[e.recruited], mapping[e.recruiter], e.wave,
                                 e.available) for e in self.events],
            m=self.m, target=self.target, complete=self.complete)

    def canonical(self) -> tuple["RdsTrace", dict[int, int]]:
        """Relabel sampled nodes to ``0..n-1`` in sample order."""
        mapping = {v: i for i, v in enumerate(self.order())}
        return self.relabel(mapping), mapping

    def validate(self, graph: Optional[Graph] = None) -> None:
        order = self.order()
        if len(set(order)) != len(order):
            raise TraceFormatError("recruited ids are not distinct")
        if self.complete and len(order) != self.target:
            raise TraceFormatError("complete trace must contain exactly n nodes")
        pos = {v: i for i, v in enumerate(order)}
        waves = self.waves()
        last = -1
        counts: dict[int, int] = {}
        for e in self.events:
            if e.recruiter not in pos or pos[e.recruiter] >= pos[e.recruited]:
                raise TraceFormatError(f"recruiter of {e.recruited} not sampled before it")
            if pos[e.recruiter] < last:
                raise TraceFormatError("recruiters are not processed in sample order")
            last = pos[e.recruiter]
            if e.wave != waves[e.recruiter] + 1:
                raise TraceFormatError(f"wave of {e.recruited} is not parent wave + 1")
            counts[e.recruiter] = counts.get(e.recruiter, 0) + 1
            if counts[e.recruiter] > self.m:
                raise TraceFormatError(f"node {e.recruiter} recruited more than m nodes")
            if graph is not None and not graph.has_edge(e.recruiter, e.recruited):
                raise TraceFormatError(
                    f"recruitment edge ({e.recruiter}, {e.recruited}) missing from graph")


def simulate_rds(graph: Graph, config: RdsConfig, rng: np.random.Generator) -> RdsTrace:
    """Run the coupon process on ``graph``; raises TraceExhausted on early stop."""
    N = graph.node_count
    for s in config.seeds:
        if not 0 <= s < N:
            raise ValueError(f"seed {s} not in graph")
    m, n = config.m, config.n
    order = list(config.seeds)
    sampled = set(order)
    wave = {s: 0 for s in order}
    events: list[RecruitEvent] = []
    head = 0
    while len(order) < n:
        if head >= len(order):
            raise TraceExhausted(RdsTrace(config.seeds, events, m, n, complete=False))
        u = order[head]
        head += 1
        avail = sorted(w for w in graph.adj[u] if w not in sampled)
        d = len(avail)
        if d == 0:
            continue
        if d <= m:
            chosen = avail
        else:
            chosen = sorted(int(x) for x in rng.choice(avail, size=m, replace=False))
        room = n - len(order)
        if len(chosen) > room:
            chosen = sorted(int(x) for x in rng.permutation(chosen)[:room])
        for w in chosen:
            sampled.add(w)
            order.append(w)
            wave[w] = wave[u] + 1
            events.append(RecruitEvent(w, u, wave[w], d))
    return RdsTrace(config.seeds, events, m, n, complete=True)


class ReplayIndex:
    """Per-node bookkeeping for replaying a trace against arbitrary graphs.

    ``pos[v]`` is the sample position of sampled node ``v``; ``rec_step[v]`` is
    the position of its recruiter (-1 for seeds). A sampled ``w`` counts as
    available to a processed ``u`` iff ``rec_step[w] >= pos[u]``; unsampled
    nodes are always available.
    """

    def __init__(self, trace: RdsTrace):
        self.trace = trace
        self.m = trace.m
        self.order = trace.order()
        self.pos = {v: i for i, v in enumerate(self.order)}
        self.rec_step = {s: -1 for s in trace.seeds}
        self.recruits: dict[int, list[int]] = {v: [] for v in self.order}
        for e in trace.events:
            self.rec_step[e.recruited] = self.pos[e.recruiter]
            self.recruits[e.recruiter].append(e.recruited)
        if trace.complete:
            last = self.pos[trace.events[-1].recruiter] if trace.events else -1
        else:
            last = len(self.order) - 1
        self.last_processed = last
        self.processed = self.order[: last + 1]
        self.truncatable = self.order[last] if (trace.complete and last >= 0) else None

    def is_sampled(self, v: int) -> bool:
        return v in self.pos

    def is_processed(self, v: int) -> bool:
        p = self.pos.get(v)
        return p is not None and p <= self.last_processed

    def saturated(self, v: int) -> bool:
        """Processed with fewer than m recruits and not the stopping node:
        its available count is pinned, so no further unsampled neighbours fit."""
        return (self.is_processed(v) and v != self.truncatable
                and len(self.recruits[v]) < self.m)

    def counts_against(self, u: int, w: int) -> bool:
        """Does neighbour ``w`` count as not-yet-sampled when ``u`` allocates?"""
        p = self.rec_step.get(w)
        return p is None or p >= self.pos[u]

    def available(self, u: int, graph: Graph) -> int:
        pu = self.pos[u]
        rs = self.rec_step
        c = 0
        for w in graph.adj[u]:
            p = rs.get(w)
            if p is None or p >= pu:
                c += 1
        return c

    def node_term(self, u: int, d: int) -> float:
        j = len(self.recruits[u])
        if u == self.truncatable:
            if j > min(d, self.m):
                return -math.inf
        elif j != min(d, self.m):
            return -math.inf
        return -log_comb(d, j)

    def log_likelihood(self, graph: Graph) -> float:
        total = 0.0
        for u in self.processed:
            total += self.node_term(u, self.available(u, graph))
            if total == -math.inf:
                return total
        return total


_LOG_COMB_CACHE: dict[tuple[int, int], float] = {}


def log_comb(d: int, j: int) -> float:
    key = (d, j)
    val = _LOG_COMB_CACHE.get(key)
    if val is None:
        if j < 0 or j > d:
            val = math.inf
        else:
            val = math.lgamma(d + 1) - math.lgamma(j + 1) - math.lgamma(d - j + 1)
        _LOG_COMB_CACHE[key] = val
    return val


def rds_log_likelihood(trace: RdsTrace, graph: Graph) -> float:
    """Exact log p(trace | graph); -inf when the trace is impossible on ``graph``."""
    for e in trace.events:
        if not (0 <= e.recruiter < graph.node_count and 0 <= e.recruited < graph.node_count) \
                or not graph.has_edge(e.recruiter, e.recruited):
            log.debug("recruitment edge (%d, %d) absent from graph", e.recruiter, e.recruited)
            return -math.inf
    idx = ReplayIndex(trace)
    value = idx.log_likelihood(graph)
    if value == -math.inf:
        log.debug("recruit counts incompatible with available degrees")
    return value


@dataclass(frozen=True)
class TraceSummary:
    n: int
    wave_sizes: tuple[int, ...]  # sizes of waves 1..N_W
    wave_count: int


def trace_summary(trace: RdsTrace) -> TraceSummary:
    sizes: dict[int, int] = {}
    for e in trace.events:
        sizes[e.wave] = sizes.get(e.wave, 0) + 1
    nw = max(sizes, default=0)
    return TraceSummary(trace.sample_size, tuple(sizes.get(i, 0) for i in range(1, nw + 1)), nw)


# ---------------------------------------------------------------------------
# Trace CSV (also the ingestion format for observed studies)
# ---------------------------------------------------------------------------

CSV_COLUMNS = ("recruited_id", "recruiter_id", "wave", "reported_degree", "response")


@dataclass
class RdsData:
    """An observed RDS sample: trace plus per-node responses and reported degrees."""

    trace: RdsTrace
    response: dict[int, int]
    reported_degree: dict[int, int] = field(default_factory=dict)

    def y(self) -> np.ndarray:
        return np.array([self.response[v] for v in self.trace.order()], dtype=np.int8)

    def degrees(self) -> np.ndarray:
        return np.array([self.reported_degree.get(v, 0) for v in self.trace.order()])


def write_trace_csv(data: RdsData, path: Union[str, Path]) -> None:
    rec = data.trace.recruiter_of()
    waves = data.trace.waves()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for v in data.trace.order():
            w.writerow([v, "SEED" if rec[v] is None else rec[v], waves[v],
                        data.reported_degree.get(v, ""), data.response[v]])


def read_trace_csv(path: Union[str, Path], m: int) -> RdsData:
    """Parse and validate a trace CSV; rows are re-ordered breadth-first from the seeds."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise TraceFormatError(f"missing columns: {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                rid = int(row["recruited_id"])
                src = row["recruiter_id"].strip()
                parent = None if src.upper() == "SEED" else int(src)
                wave = int(row["wave"])
                deg = row["reported_degree"].strip()
                resp = int(row["response"])
            except (TypeError, ValueError) as exc:
                raise TraceFormatError(f"line {lineno}: {exc}") from None
            if resp not in (0, 1):
                raise TraceFormatError(f"line {lineno}: response must be 0 or 1")
            rows.append((lineno, rid, parent, wave, int(deg) if deg else None, resp))
    if not rows:
        raise TraceFormatError("trace file has no rows")
    by_id = {}
    for r in rows:
        if r[1] in by_id:
            raise TraceFormatError(f"line {r[0]}: duplicate recruited_id {r[1]}")
        by_id[r[1]] = r
    children: dict[int, list[int]] = {r[1]: [] for r in rows}
    seeds = []
    for lineno, rid, parent, wave, _, _ in rows:
        if parent is None:
            if wave != 0:
                raise TraceFormatError(f"line {lineno}: seed must have wave 0")
            seeds.append(rid)
        else:
            if parent not in by_id:
                raise TraceFormatError(f"line {lineno}: unknown recruiter {parent}")
            children[parent].append(rid)
    order = list(seeds)
    events = []
    head = 0
    while head < len(order):
        u = order[head]
        head += 1
        kids = children[u]
        if len(kids) > m:
            raise TraceFormatError(f"line {by_id[u][0]}: node {u} recruited more than m={m}")
        for c in sorted(kids):
            lineno, _, _, wave, _, _ = by_id[c]
            if wave != by_id[u][3] + 1:
                raise TraceFormatError(f"line {lineno}: wave must be recruiter wave + 1")
            order.append(c)
            events.append(RecruitEvent(c, u, wave, -1))
    if len(order) != len(rows):
        raise TraceFormatError("some rows are not reachable from a seed (cycle or orphan)")
    trace = RdsTrace(tuple(seeds), events, m, len(order), complete=True)
    response = {r[1]: r[5] for r in rows}
    degree = {r[1]: r[4] for r in rows if r[4] is not None}
    return RdsData(trace, response, degree)


def observed_graph(trace: RdsTrace, extra_nodes: int = 0) -> Graph:
    """Graph of the recruitment edges on a canonical trace (sampled ids 0..n-1)."""
    n = trace.sample_size
    waves = trace.waves()
    g = Graph(n + extra_nodes, labels=[waves[i] for i in range(n)] + [None] * extra_nodes)
    for u, v in trace.recruitment_edges():
        g.add_edge(u, v)
    return g

