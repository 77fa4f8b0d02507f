"""Hot loops: k-core peeling, masked top-k ranking and per-user hit metrics.

Every kernel has a numba version (``*_numba``) and a pure-numpy version
(``*_numpy``) with identical results. The public names dispatch on
``L3AE_DISABLE_NUMBA`` (see :mod:`l3ae._accel`).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ._accel import NUMBA_ENABLED, njit

# ---------------------------------------------------------------------------
# k-core peeling
# ---------------------------------------------------------------------------


def kcore_mask_numpy(users, items, n_users, n_items, k):
    """Alternating degree pruning until no user or item is below ``k``."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    alive = np.ones(users.shape[0], dtype=np.bool_)
    while True:
        udeg = np.bincount(users[alive], minlength=n_users)
        ideg = np.bincount(items[alive], minlength=n_items)
        keep = alive & (udeg[users] >= k) & (ideg[items] >= k)
        if np.array_equal(keep, alive):
            return alive
        alive = keep


@njit
def _kcore_peel(users, items, n_users, n_items, k, u_ptr, u_edges, i_ptr, i_edges):
    n_edges = users.shape[0]
    alive = np.ones(n_edges, dtype=np.bool_)
    udeg = np.zeros(n_users, dtype=np.int64)
    ideg = np.zeros(n_items, dtype=np.int64)
    for e in range(n_edges):
        udeg[users[e]] += 1
        ideg[items[e]] += 1
    # Nodes 0..n_users-1 are users, n_users.. are items.
    dead = np.zeros(n_users + n_items, dtype=np.bool_)
    stack = np.empty(n_users + n_items, dtype=np.int64)
    top = 0
    for u in range(n_users):
        if udeg[u] < k:
            dead[u] = True
            stack[top] = u
            top += 1
    for i in range(n_items):
        if ideg[i] < k:
            dead[n_users + i] = True
            stack[top] = n_users + i
            top += 1
    while top > 0:
        top -= 1
        node = stack[top]
        if node < n_users:
            for p in range(u_ptr[node], u_ptr[node + 1]):
                e = u_edges[p]
                if alive[e]:
                    alive[e] = False
                    it = items[e]
                    ideg[it] -= 1
                    if ideg[it] < k and not dead[n_users + it]:
                        dead[n_users + it] = True
                        stack[top] = n_users + it
                        top += 1
        else:
            it = node - n_users
            for p in range(i_ptr[it], i_ptr[it + 1]):
                e = i_edges[p]
                if alive[e]:
                    alive[e] = False
                    u = users[e]
                    udeg[u] -= 1
                    if udeg[u] < k and not dead[u]:
                        dead[u] = True
                        stack[top] = u
                        top += 1
    return alive


@njit
def _incidence(nodes, n_nodes):
    # Counting sort: ptr[v]..ptr[v+1] index the edges of node v.
    ptr = np.zeros(n_nodes + 1, dtype=np.int64)
    for e in range(nodes.shape[0]):
        ptr[nodes[e] + 1] += 1
    for v in range(n_nodes):
        ptr[v + 1] += ptr[v]
    fill = ptr[:-1].copy()
    edges = np.empty(nodes.shape[0], dtype=np.int64)
    for e in range(nodes.shape[0]):
        edges[fill[nodes[e]]] = e
        fill[nodes[e]] += 1
    return ptr, edges


def kcore_mask_numba(users, items, n_users, n_items, k):
    """Queue-based peeling; each edge is removed at most once."""
    users = np.ascontiguousarray(users, dtype=np.int64)
    items = np.ascontiguousarray(items, dtype=np.int64)
    u_ptr, u_edges = _incidence(users, int(n_users))
    i_ptr, i_edges = _incidence(items, int(n_items))
    return _kcore_peel(users, items, int(n_users), int(n_items), int(k),
                       u_ptr, u_edges, i_ptr, i_edges)


# ---------------------------------------------------------------------------
# Ranking
# ---------------------------------------------------------------------------


def topk_rows_numpy(scores, k):
    """Top-``k`` column indices per row; ties go to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    # Stable sort on negated scores keeps ascending index among ties;
    # -inf (masked) becomes +inf and sinks to the end.
    order = np.argsort(-scores, axis=1, kind="stable")
    return order[:, :k].astype(np.int64)


@njit
def _topk_rows(scores, k):
    n_rows, n = scores.shape
    out = np.empty((n_rows, k), dtype=np.int64)
    heap_s = np.empty(k, dtype=np.float64)
    heap_i = np.empty(k, dtype=np.int64)
    for r in range(n_rows):
        row = scores[r]
        # Min-heap of the current best k under the order
        # (score desc, index asc); the root is the worst kept entry.
        size = 0
        for j in range(n):
            s = row[j]
            if size < k:
                pos = size
                size += 1
                while pos > 0:
                    parent = (pos - 1) // 2
                    ps = heap_s[parent]
                    pi = heap_i[parent]
                    # parent is worse than (s, j)?
                    if ps < s or (ps == s and pi > j):
                        break
                    heap_s[pos] = ps
                    heap_i[pos] = pi
                    pos = parent
                heap_s[pos] = s
                heap_i[pos] = j
            else:
                rs = heap_s[0]
                # j always has a larger index than anything in the heap, so a tie loses.
                if not s > rs:
                    continue
                pos = 0
                while True:
                    child = 2 * pos + 1
                    if child >= size:
                        break
                    other = child + 1
                    if other < size:
                        cs = heap_s[child]
                        os_ = heap_s[other]
                        if os_ < cs or (os_ == cs and heap_i[other] > heap_i[child]):
                            child = other
                    cs = heap_s[child]
                    ci = heap_i[child]
                    if cs < s or (cs == s and ci > j):
                        heap_s[pos] = cs
                        heap_i[pos] = ci
                        pos = child
                    else:
                        break
                heap_s[pos] = s
                heap_i[pos] = j
        # Pop worst-first into the tail of the output row.
        for t in range(size - 1, -1, -1):
            out[r, t] = heap_i[0]
            last_s = heap_s[size - 1]
            last_i = heap_i[size - 1]
            size -= 1
            pos = 0
            while True:
                child = 2 * pos + 1
                if child >= size:
                    break
                other = child + 1
                if other < size:
                    cs = heap_s[child]
                    os_ = heap_s[other]
                    if os_ < cs or (os_ == cs and heap_i[other] > heap_i[child]):
                        child = other
                cs = heap_s[child]
                ci = heap_i[child]
                if cs < last_s or (cs == last_s and ci > last_i):
                    heap_s[pos] = cs
                    heap_i[pos] = ci
                    pos = child
                else:
                    break
            if size > 0:
                heap_s[pos] = last_s
                heap_i[pos] = last_i
    return out


def topk_rows_numba(scores, k):
    """Bounded-heap selection, O(n log k) per row."""
    return _topk_rows(np.ascontiguousarray(scores, dtype=np.float64), int(k))


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------


def score_rows_numpy(indptr, indices, data, weights, mask):
    """Dense ``X @ B`` for a CSR block; history entries set to ``-inf`` if ``mask``."""
    n_rows = indptr.shape[0] - 1
    x = sp.csr_matrix((data, indices, indptr), shape=(n_rows, weights.shape[0]))
    scores = np.asarray(x @ weights, dtype=np.float64)
    if mask:
        rows = np.repeat(np.arange(n_rows), np.diff(indptr))
        scores[rows, indices] = -np.inf
    return scores


@njit
def _score_rows(indptr, indices, data, weights, mask):
    n_rows = indptr.shape[0] - 1
    n = weights.shape[1]
    out = np.zeros((n_rows, n), dtype=np.float64)
    for r in range(n_rows):
        row = out[r]
        for p in range(indptr[r], indptr[r + 1]):
            w = weights[indices[p]]
            v = data[p]
            for j in range(n):
                row[j] += v * w[j]
        if mask:
            for p in range(indptr[r], indptr[r + 1]):
                row[indices[p]] = -np.inf
    return out


def score_rows_numba(indptr, indices, data, weights, mask):
    return _score_rows(np.ascontiguousarray(indptr, dtype=np.int64),
                       np.ascontiguousarray(indices, dtype=np.int64),
                       np.ascontiguousarray(data, dtype=np.float64),
                       np.ascontiguousarray(weights, dtype=np.float64), bool(mask))


# ---------------------------------------------------------------------------
# Hit counting against CSR ground truth
# ---------------------------------------------------------------------------


def hit_matrix_numpy(ranked, rel_ptr, rel_idx, n_items):
    """Boolean ``hits[r, p]``: is ``ranked[r, p]`` in row ``r``'s relevant set."""
    n_rows = ranked.shape[0]
    lengths = np.diff(rel_ptr)
    member = np.zeros((n_rows, n_items), dtype=np.bool_)
    member[np.repeat(np.arange(n_rows), lengths), rel_idx] = True
    return np.take_along_axis(member, ranked, axis=1)


@njit
def _hit_matrix(ranked, rel_ptr, rel_idx, n_items):
    n_rows, k = ranked.shape
    out = np.zeros((n_rows, k), dtype=np.bool_)
    flag = np.zeros(n_items, dtype=np.bool_)
    for r in range(n_rows):
        for p in range(rel_ptr[r], rel_ptr[r + 1]):
            flag[rel_idx[p]] = True
        for t in range(k):
            out[r, t] = flag[ranked[r, t]]
        for p in range(rel_ptr[r], rel_ptr[r + 1]):
            flag[rel_idx[p]] = False
    return out


def hit_matrix_numba(ranked, rel_ptr, rel_idx, n_items):
    return _hit_matrix(np.ascontiguousarray(ranked, dtype=np.int64),
                       np.ascontiguousarray(rel_ptr, dtype=np.int64),
                       np.ascontiguousarray(rel_idx, dtype=np.int64), int(n_items))


if NUMBA_ENABLED:
    kcore_mask = kcore_mask_numba
    score_rows = score_rows_numba
    topk_rows = topk_rows_numba
    hit_matrix = hit_matrix_numba
else:
    kcore_mask = kcore_mask_numpy
    score_rows = score_rows_numpy
    topk_rows = topk_rows_numpy
    hit_matrix = hit_matrix_numpy
