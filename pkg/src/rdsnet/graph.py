"""Undirected simple graphs and the random-graph models used as priors and truths.

Nodes are dense integers ``0..N-1``. Adjacency is kept as a list of sets so that
neighbour iteration is O(deg) and edge toggles are O(1); the MCMC edge moves
lean on both.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Union

import numpy as np
from scipy import stats


class ParameterDomainError(ValueError):
    """A model parameter lies outside its support."""


class UnsupportedDensityError(NotImplementedError):
    """The graph model is a generator only and has no tractable density."""


class Graph:
    """Simple undirected graph with per-node inclusion labels.

    ``labels[v]`` is the recruitment wave of a sampled node, or ``None`` for a
    node that was never sampled (augmented / population node).
    """

    __slots__ = ("adj", "labels")

    def __init__(self, node_count: int, edges: Iterable[tuple[int, int]] = (),
                 labels: Optional[list[Optional[int]]] = None):
        if node_count < 0:
            raise ValueError("node_count must be non-negative")
        self.adj: list[set[int]] = [set() for _ in range(node_count)]
        self.labels: list[Optional[int]] = (
            list(labels) if labels is not None else [None] * node_count)
        if len(self.labels) != node_count:
            raise ValueError("labels length must equal node_count")
        for u, v in edges:
            if self.has_edge(u, v):
                raise ValueError(f"duplicate edge ({u}, {v})")
            self.add_edge(u, v)

    @property
    def node_count(self) -> int:
        return len(self.adj)

    def __len__(self) -> int:
        return len(self.adj)

    def add_node(self, label: Optional[int] = None) -> int:
        self.adj.append(set())
        self.labels.append(label)
        return len(self.adj) - 1

    def add_edge(self, u: int, v: int) -> None:
        if u == v:
            raise ValueError(f"self-loop at node {u}")
        n = len(self.adj)
        if not (0 <= u < n and 0 <= v < n):
            raise IndexError(f"edge ({u}, {v}) out of range for {n} nodes")
        self.adj[u].add(v)
        self.adj[v].add(u)

    def remove_edge(self, u: int, v: int) -> None:
        self.adj[u].remove(v)
        self.adj[v].remove(u)

    def has_edge(self, u: int, v: int) -> bool:
        return v in self.adj[u]

    def neighbors(self, v: int) -> set[int]:
        return self.adj[v]

    def degree(self, v: int) -> int:
        return len(self.adj[v])

    def edges(self) -> Iterator[tuple[int, int]]:
        for u, nbrs in enumerate(self.adj):
            for v in nbrs:
                if u < v:
                    yield (u, v)

    def edge_count(self) -> int:
        return sum(len(s) for s in self.adj) // 2

    def copy(self) -> "Graph":
        g = Graph.__new__(Graph)
        g.adj = [set(s) for s in self.adj]
        g.labels = list(self.labels)
        return g

    def subgraph(self, nodes: Iterable[int]) -> tuple["Graph", list[int]]:
        """Induced subgraph; returns it with the original id of each new node."""
        order = sorted(set(nodes))
        index = {v: i for i, v in enumerate(order)}
        sub = Graph(len(order), labels=[self.labels[v] for v in order])
        for v in order:
            for w in self.adj[v]:
                if w in index and v < w:
                    sub.add_edge(index[v], index[w])
        return sub, order

    def components(self, nodes: Optional[Iterable[int]] = None) -> list[list[int]]:
        """Connected components (sorted node lists) of the graph induced on ``nodes``."""
        pool = set(range(len(self.adj))) if nodes is None else set(nodes)
        seen: set[int] = set()
        comps = []
        for start in sorted(pool):
            if start in seen:
                continue
            stack = [start]
            seen.add(start)
            comp = []
            while stack:
                v = stack.pop()
                comp.append(v)
                for w in self.adj[v]:
                    if w in pool and w not in seen:
                        seen.add(w)
                        stack.append(w)
            comps.append(sorted(comp))
        return comps

    def adjacency_matrix(self) -> np.ndarray:
        n = len(self.adj)
        a = np.zeros((n, n), dtype=np.int8)
        for u, v in self.edges():
            a[u, v] = a[v, u] = 1
        return a

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return self.adj == other.adj and self.labels == other.labels

    def __repr__(self) -> str:
        return f"Graph(N={self.node_count}, E={self.edge_count()})"


# ---------------------------------------------------------------------------
# Graph models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ErdosRenyi:
    alpha: float

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ParameterDomainError(f"edge probability {self.alpha} not in [0, 1]")


@dataclass(frozen=True)
class ProductBernoulli:
    """Node propensities ``phi_i ~ Beta(a1, a2)``; edge (i, k) ~ Bernoulli(phi_i * phi_k).

    ``phi`` may be fixed (e.g. to evaluate a density); otherwise it is drawn
    afresh by :func:`sample_graph`.
    """

    a1: float
    a2: float
    phi: Optional[tuple[float, ...]] = field(default=None, compare=False)

    def __post_init__(self):
        if self.a1 <= 0 or self.a2 <= 0:
            raise ParameterDomainError("Beta shape parameters must be positive")
        if self.phi is not None and any(not 0.0 <= p <= 1.0 for p in self.phi):
            raise ParameterDomainError("node propensities must lie in [0, 1]")

    @classmethod
    def matching_density(cls, density: float, concentration: float = 10.0) -> "ProductBernoulli":
        """Shapes with ``E[phi]**2 == density``, so the mean edge density matches ER."""
        mean = math.sqrt(density)
        return cls(mean * concentration, (1.0 - mean) * concentration)


@dataclass(frozen=True)
class SmallWorld:
    """Ring lattice with ``ring_degree`` neighbours per node, each edge rewired w.p. ``rewire``."""

    ring_degree: int
    rewire: float

    def __post_init__(self):
        if self.ring_degree <= 0 or self.ring_degree % 2:
            raise ParameterDomainError("ring degree must be an even positive integer")
        if not 0.0 <= self.rewire <= 1.0:
            raise ParameterDomainError("rewire probability must lie in [0, 1]")


GraphModel = Union[ErdosRenyi, ProductBernoulli, SmallWorld]


def sample_graph(model: GraphModel, N: int, rng: np.random.Generator) -> Graph:
    """Draw an N-node graph from ``model``."""
    if N < 1:
        raise ParameterDomainError("N must be at least 1")
    if isinstance(model, ErdosRenyi):
        iu, ju = np.triu_indices(N, k=1)
        keep = rng.random(iu.size) < model.alpha
        return Graph(N, zip(iu[keep].tolist(), ju[keep].tolist()))
    if isinstance(model, ProductBernoulli):
        phi = (np.asarray(model.phi, dtype=float) if model.phi is not None
               else rng.beta(model.a1, model.a2, size=N))
        if phi.size != N:
            raise ParameterDomainError("phi length must equal N")
        iu, ju = np.triu_indices(N, k=1)
        keep = rng.random(iu.size) < phi[iu] * phi[ju]
        return Graph(N, zip(iu[keep].tolist(), ju[keep].tolist()))
    if isinstance(model, SmallWorld):
        return _small_world(model, N, rng)
    raise TypeError(f"unknown graph model {model!r}")


def _small_world(model: SmallWorld, N: int, rng: np.random.Generator) -> Graph:
    half = model.ring_degree // 2
    if model.ring_degree >= N:
        raise ParameterDomainError("ring degree must be smaller than N")
    g = Graph(N)
    ring = []
    for i in range(N):
        for j in range(1, half + 1):
            ring.append((i, (i + j) % N))
            g.add_edge(i, (i + j) % N)
    for u, v in ring:
        if rng.random() >= model.rewire:
            continue
        if len(g.adj[u]) >= N - 1:
            continue  # no free target
        # redraw the far endpoint until it is neither u nor a current neighbour
        while True:
            w = int(rng.integers(N))
            if w != u and w not in g.adj[u]:
                break
        g.remove_edge(u, v)
        g.add_edge(u, w)
    return g


def graph_log_density(graph: Graph, model: GraphModel) -> float:
    """log p(graph | model) over the N(N-1)/2 node pairs."""
    N = graph.node_count
    if isinstance(model, ErdosRenyi):
        E = graph.edge_count()
        pairs = N * (N - 1) // 2
        return _xlogy(E, model.alpha) + _xlogy(pairs - E, 1.0 - model.alpha)
    if isinstance(model, ProductBernoulli):
        if model.phi is None:
            raise UnsupportedDensityError(
                "ProductBernoulli density needs fixed node propensities")
        phi = model.phi
        total = 0.0
        for i in range(N):
            for k in range(i + 1, N):
                p = phi[i] * phi[k]
                total += _xlogy(1, p) if graph.has_edge(i, k) else _xlogy(1, 1.0 - p)
        return total
    raise UnsupportedDensityError(f"{type(model).__name__} has no density")


def _xlogy(x: float, y: float) -> float:
    if x == 0:
        return 0.0
    if y <= 0.0:
        return -math.inf
    return x * math.log(y)


def sample_alpha_prior(w1: float, w2: float, rng: np.random.Generator) -> float:
    if w1 <= 0 or w2 <= 0:
        raise ParameterDomainError("Beta shapes must be positive")
    return float(rng.beta(w1, w2))


def alpha_log_prior(alpha: float, w1: float, w2: float) -> float:
    if not 0.0 < alpha < 1.0:
        return -math.inf
    return float(stats.beta.logpdf(alpha, w1, w2))


# ---------------------------------------------------------------------------
# Edge-list text format
# ---------------------------------------------------------------------------

def write_edge_list(graph: Graph, path: Union[str, Path]) -> None:
    lines = [f"N={graph.node_count}"]
    lines += [f"{u} {v}" for u, v in sorted(graph.edges())]
    Path(path).write_text("\n".join(lines) + "\n")


def read_edge_list(path: Union[str, Path]) -> Graph:
    """Read the ``N=<count>`` header followed by one ``u v`` pair per line."""
    text = Path(path).read_text().splitlines()
    rows = [(i + 1, ln.strip()) for i, ln in enumerate(text) if ln.strip()]
    if not rows or not rows[0][1].startswith("N="):
        raise ValueError("edge list must start with an 'N=<count>' header")
    N = int(rows[0][1][2:])
    g = Graph(N)
    for lineno, ln in rows[1:]:
        parts = ln.split()
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 'u v', got {ln!r}")
        u, v = int(parts[0]), int(parts[1])
        if u == v:
            raise ValueError(f"line {lineno}: self-loop at {u}")
        if not (0 <= u < N and 0 <= v < N):
            raise ValueError(f"line {lineno}: endpoint out of range")
        if g.has_edge(u, v):
            raise ValueError(f"line {lineno}: duplicate edge ({u}, {v})")
        g.add_edge(u, v)
    return g
