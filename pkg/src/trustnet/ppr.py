"""Approximate personalized PageRank on the directed trust subgraph.

Forward push maintains an estimate vector p and a residual vector r with
the loop invariant  p_exact = p + sum_u r[u] * p_exact^(u).  A node is
pushed while its residual is at least epsilon times its out-degree, so
the returned scores carry a per-entry error bounded by the leftover
residual mass. Dangling users (no outgoing trust) return their walk mass
to the source, matching restart semantics.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DataError, NumericalError
from .graph import HeteroGraph, Role


@dataclass(frozen=True)
class TrustGraph:
    """CSR adjacency of directed user->user trust edges."""

    num_users: int
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray | None = None  # per-edge transition weights; None = uniform

    @classmethod
    def from_edges(cls, num_users: int, edges) -> "TrustGraph":
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        order = np.lexsort((edges[:, 1], edges[:, 0])) if edges.size else np.zeros(0, dtype=np.int64)
        edges = edges[order]
        indptr = np.concatenate(
            ([0], np.cumsum(np.bincount(edges[:, 0], minlength=num_users)))
        ).astype(np.int64)
        return cls(num_users, indptr, edges[:, 1].copy())

    @classmethod
    def from_hetero(cls, graph: HeteroGraph) -> "TrustGraph":
        return cls.from_edges(graph.num_users, graph.trust_edges)

    def out_degree(self, u: int) -> int:
        return int(self.indptr[u + 1] - self.indptr[u])

    def neighbors(self, u: int) -> np.ndarray:
        return self.indices[self.indptr[u] : self.indptr[u + 1]]

    def edge_weights(self, u: int) -> np.ndarray:
        if self.weights is None:
            d = self.out_degree(u)
            return np.full(d, 1.0 / d)
        return self.weights[self.indptr[u] : self.indptr[u + 1]]


def symmetric_trust_graph(num_users: int, edges) -> TrustGraph:
    """Trust graph with self-loops and symmetric-normalized edge weights.

    Transition weight of (i, j) is 1/sqrt(d_i d_j) where d is the
    self-looped total (in + out) trust degree; rows are generally
    substochastic, so pushed mass decays instead of being conserved.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    loops = np.arange(num_users, dtype=np.int64)
    all_edges = np.concatenate([edges, np.stack([loops, loops], axis=1)]) if edges.size else np.stack(
        [loops, loops], axis=1
    )
    deg = np.ones(num_users)
    if edges.size:
        deg += np.bincount(edges[:, 0], minlength=num_users)
        deg += np.bincount(edges[:, 1], minlength=num_users)
    order = np.lexsort((all_edges[:, 1], all_edges[:, 0]))
    all_edges = all_edges[order]
    indptr = np.concatenate(
        ([0], np.cumsum(np.bincount(all_edges[:, 0], minlength=num_users)))
    ).astype(np.int64)
    weights = 1.0 / np.sqrt(deg[all_edges[:, 0]] * deg[all_edges[:, 1]])
    return TrustGraph(num_users, indptr, all_edges[:, 1].copy(), weights)


@dataclass(frozen=True)
class PprRow:
    """Sparse approximate PPR scores of one source user."""

    source: int
    scores: dict[int, float]
    epsilon: float


def ppr_push(trust_graph: TrustGraph, source: int, lam: float, epsilon: float) -> PprRow:
    """One row of personalized PageRank via forward push.

    ``lam`` is the restart probability; a node is pushed while its
    residual is >= epsilon * max(out_degree, 1). When the source itself is
    dangling its whole mass provably lands on it, which the push absorbs
    in one step (score exactly 1).
    """
    if not 0.0 < lam < 1.0:
        raise DataError(f"restart probability must lie in (0, 1), got {lam}")
    if epsilon <= 0.0:
        raise DataError(f"push threshold must be positive, got {epsilon}")
    if not 0 <= source < trust_graph.num_users:
        raise DataError(f"source {source} out of range")

    p: dict[int, float] = {}
    r: dict[int, float] = {source: 1.0}
    queue: deque[int] = deque([source])
    queued = {source}
    while queue:
        u = queue.popleft()
        queued.discard(u)
        res = r.get(u, 0.0)
        deg = trust_graph.out_degree(u)
        if res < epsilon * max(deg, 1):
            continue
        if deg == 0:
            if u == source:
                # all remaining mass restarts here and never leaves
                p[u] = p.get(u, 0.0) + res
                r[u] = 0.0
                continue
            p[u] = p.get(u, 0.0) + lam * res
            r[u] = 0.0
            back = (1.0 - lam) * res
            r[source] = r.get(source, 0.0) + back
            sdeg = trust_graph.out_degree(source)
            if r[source] >= epsilon * max(sdeg, 1) and source not in queued:
                queue.append(source)
                queued.add(source)
            continue
        p[u] = p.get(u, 0.0) + lam * res
        r[u] = 0.0
        spread = (1.0 - lam) * res
        for v, w in zip(trust_graph.neighbors(u), trust_graph.edge_weights(u)):
            v = int(v)
            rv = r.get(v, 0.0) + spread * w
            r[v] = rv
            if rv >= epsilon * max(trust_graph.out_degree(v), 1) and v not in queued:
                queue.append(v)
                queued.add(v)
    return PprRow(source=source, scores=p, epsilon=epsilon)


def _transition_csr(tg: TrustGraph):
    n = tg.num_users
    if tg.weights is None:
        deg = np.diff(tg.indptr).astype(np.float64)
        data = np.repeat(np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0), deg.astype(np.int64))
    else:
        data = tg.weights
    return sp.csr_matrix((data, tg.indices, tg.indptr), shape=(n, n))


def ppr_push_batch(
    tg: TrustGraph, sources: np.ndarray, lam: float, epsilon: float
) -> np.ndarray:
    """Forward push for many sources at once (simultaneous residual sweeps).

    Each sweep pushes every node whose residual is >= epsilon * max(deg, 1),
    exactly the per-source rule, so the returned estimates satisfy the same
    termination condition. Sources must have at least one out-edge (the
    dangling-source case is trivial and handled by the caller).

    Returns a dense (len(sources), num_users) score matrix.
    """
    if not 0.0 < lam < 1.0:
        raise DataError(f"restart probability must lie in (0, 1), got {lam}")
    if epsilon <= 0.0:
        raise DataError(f"push threshold must be positive, got {epsilon}")
    sources = np.asarray(sources, dtype=np.int64)
    n = tg.num_users
    m = len(sources)
    w = _transition_csr(tg)
    deg = np.diff(tg.indptr).astype(np.int64)
    thresh = epsilon * np.maximum(deg, 1)
    dangling = np.flatnonzero(deg == 0)

    rows = np.arange(m)
    p = np.zeros((m, n))
    r = np.zeros((m, n))
    r[rows, sources] = 1.0
    for _ in range(100_000):
        active = r >= thresh[None, :]
        if not active.any():
            break
        ra = np.where(active, r, 0.0)
        p += lam * ra
        spread = (1.0 - lam) * (ra @ w)
        r = r - ra + spread
        if dangling.size:
            back = (1.0 - lam) * ra[:, dangling].sum(axis=1)
            r[rows, sources] += back
    else:
        raise NumericalError("personalized PageRank sweeps failed to converge")
    return p


def top_neighbors(row: PprRow, k: int) -> list[int]:
    """The k highest-scoring targets other than the source, ties to smaller id."""
    items = [(t, s) for t, s in row.scores.items() if t != row.source and s > 0.0]
    items.sort(key=lambda ts: (-ts[1], ts[0]))
    return [t for t, _ in items[:k]]


def topk_augment(
    graph: HeteroGraph,
    k: int,
    lam: float = 0.15,
    epsilon: float = 1e-6,
    transition: str = "walk",
    weighted: bool = False,
):
    """Augmented trust pairs: each user's top-k PPR neighbors.

    Users that reach fewer than k other users emit fewer pairs. With
    ``weighted=True`` returns (pairs, scores); otherwise just the pairs
    as an (m, 2) array. ``transition`` selects uniform out-edge walks
    ("walk") or symmetric-normalized transitions ("symmetric").
    """
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    if transition == "walk":
        tg = TrustGraph.from_hetero(graph)
    elif transition == "symmetric":
        tg = symmetric_trust_graph(graph.num_users, graph.trust_edges)
    else:
        raise DataError(f"unknown transition kind {transition!r}")
    deg = np.diff(tg.indptr)
    sources = np.flatnonzero(deg > 0)  # isolated sources keep all mass on themselves
    pairs: list[tuple[int, int]] = []
    scores: list[float] = []
    chunk = max(1, 4_000_000 // max(graph.num_users, 1))
    for start in range(0, len(sources), chunk):
        batch = sources[start : start + chunk]
        p = ppr_push_batch(tg, batch, lam, epsilon)
        for row_idx, source in enumerate(batch):
            s = p[row_idx].copy()
            s[source] = 0.0
            reachable = np.flatnonzero(s > 0.0)
            if reachable.size == 0:
                continue
            # descending score, ascending id on ties
            order = reachable[np.lexsort((reachable, -s[reachable]))][:k]
            for target in order:
                pairs.append((int(source), int(target)))
                scores.append(float(s[target]))
    pairs_arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if weighted:
        return pairs_arr, np.asarray(scores)
    return pairs_arr


def dense_ppr_row(trust_graph: TrustGraph, source: int, lam: float) -> np.ndarray:
    """Exact PPR row by dense linear solve; reference for the push scheme.

    Solves (I - (1-lam) W^T) p = lam e_source where W is the transition
    matrix (dangling rows redirect to the source).
    """
    n = trust_graph.num_users
    w = np.zeros((n, n))
    for u in range(n):
        deg = trust_graph.out_degree(u)
        if deg == 0:
            w[u, source] = 1.0
            continue
        for v, wt in zip(trust_graph.neighbors(u), trust_graph.edge_weights(u)):
            w[u, int(v)] += wt
    e = np.zeros(n)
    e[source] = lam
    return np.linalg.solve(np.eye(n) - (1.0 - lam) * w.T, e)
