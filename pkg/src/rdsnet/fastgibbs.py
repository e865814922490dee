"""Compiled single-site Gibbs updates for the clique-expansion MRF.

The graph is passed as CSR neighbour arrays plus a dense boolean adjacency
matrix (used for the pairwise tests inside an active neighbourhood). Active
neighbourhoods of up to 63 nodes use 64-bit candidate masks; larger ones fall
back to a depth-first enumeration over index lists. Uniform variates are drawn
by the caller so results depend only on the numpy stream.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .graph import Graph
from .mrf import Potentials

MAX_ACTIVE = 63
_STACK = 1 << 14


class GraphArrays:
    """CSR + dense adjacency snapshot of a :class:`Graph`."""

    __slots__ = ("indptr", "indices", "dense", "max_degree")

    def __init__(self, graph: Graph):
        n = graph.node_count
        deg = np.fromiter((len(s) for s in graph.adj), dtype=np.int64, count=n)
        self.indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(deg, out=self.indptr[1:])
        self.indices = np.fromiter((w for s in graph.adj for w in sorted(s)),
                                   dtype=np.int64, count=int(self.indptr[-1]))
        self.dense = np.zeros((n, n), dtype=np.bool_)
        rows = np.repeat(np.arange(n), deg)
        self.dense[rows, self.indices] = True
        self.max_degree = int(deg.max()) if n else 0


def potential_array(pot: Potentials, arrays: GraphArrays) -> np.ndarray:
    return pot.array(arrays.max_degree + 2)


@njit(cache=True)
def _clique_sum_lists(act, a, dense, h):
    """Sum of h[size + 1] over non-empty cliques of ``act[:a]``, without bitmasks."""
    chosen = np.empty(a, dtype=np.int64)
    nxt = np.empty(a + 1, dtype=np.int64)
    z = 0.0
    depth = 0
    nxt[0] = 0
    while depth >= 0:
        c = nxt[depth]
        if c >= a:
            depth -= 1
            continue
        nxt[depth] = c + 1
        ok = True
        for q in range(depth):
            if not dense[act[chosen[q]], act[c]]:
                ok = False
                break
        if not ok:
            continue
        chosen[depth] = c
        z += h[depth + 2]
        depth += 1
        nxt[depth] = c + 1
    return z


@njit(cache=True)
def _log_odds(i, y, indptr, indices, dense, h, act, masks, stack_c, stack_s):
    """Sum of h over cliques formed by i and a clique of its active neighbours."""
    a = 0
    for p in range(indptr[i], indptr[i + 1]):
        j = indices[p]
        if y[j] != 0:
            act[a] = j
            a += 1
    z = h[1]
    if a == 0:
        return z
    if a > MAX_ACTIVE:
        return z + _clique_sum_lists(act, a, dense, h)
    one = np.uint64(1)
    for t in range(a):
        m = np.uint64(0)
        for u in range(t + 1, a):
            if dense[act[t], act[u]]:
                m |= one << np.uint64(u)
        masks[t] = m
    top = 0
    for t in range(a):
        stack_c[top] = masks[t]
        stack_s[top] = 1
        top += 1
        while top > 0:
            top -= 1
            cand = stack_c[top]
            size = stack_s[top]
            z += h[size + 1]
            if cand == np.uint64(0):
                continue
            for b in range(a):
                if (cand >> np.uint64(b)) & one:
                    stack_c[top] = cand & masks[b]
                    stack_s[top] = size + 1
                    top += 1
    return z


@njit(cache=True)
def _gibbs(y, free, indptr, indices, dense, h, uniforms, sweeps):
    act = np.empty(max(y.size, 64), dtype=np.int64)
    masks = np.empty(64, dtype=np.uint64)
    stack_c = np.empty(_STACK, dtype=np.uint64)
    stack_s = np.empty(_STACK, dtype=np.int64)
    n = y.size
    k = 0
    for _ in range(sweeps):
        for i in range(n):
            if not free[i]:
                continue
            z = _log_odds(i, y, indptr, indices, dense, h, act, masks, stack_c, stack_s)
            p = 1.0 / (1.0 + np.exp(-z))
            y[i] = 1 if uniforms[k] < p else 0
            k += 1


@njit(cache=True)
def _all_log_odds(y, nodes, indptr, indices, dense, h):
    act = np.empty(max(y.size, 64), dtype=np.int64)
    masks = np.empty(64, dtype=np.uint64)
    stack_c = np.empty(_STACK, dtype=np.uint64)
    stack_s = np.empty(_STACK, dtype=np.int64)
    out = np.empty(nodes.size)
    for t in range(nodes.size):
        out[t] = _log_odds(nodes[t], y, indptr, indices, dense, h, act, masks,
                           stack_c, stack_s)
    return out


def gibbs(y: np.ndarray, arrays: GraphArrays, pot: Potentials, sweeps: int,
          rng: np.random.Generator, free: np.ndarray | None = None) -> np.ndarray:
    """Run ``sweeps`` systematic-scan sweeps in place over the free nodes."""
    n = y.size
    if free is None:
        free = np.ones(n, dtype=np.bool_)
    uniforms = rng.random(sweeps * int(free.sum()))
    _gibbs(y, free, arrays.indptr, arrays.indices, arrays.dense,
           potential_array(pot, arrays), uniforms, sweeps)
    return y


def log_odds(y: np.ndarray, arrays: GraphArrays, pot: Potentials,
             nodes: np.ndarray | None = None) -> np.ndarray:
    """Joint-conditional log-odds of ``nodes`` (default: all) under the current ``y``."""
    if nodes is None:
        nodes = np.arange(y.size, dtype=np.int64)
    return _all_log_odds(y, np.asarray(nodes, dtype=np.int64), arrays.indptr, arrays.indices,
                         arrays.dense, potential_array(pot, arrays))
