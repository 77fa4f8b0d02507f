"""Scoring, top-k ranking and Recall/NDCG with head/tail breakdowns."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from . import kernels
from .datasets import InteractionMatrix
from .errors import DataError, ParameterError
from .models import ItemWeightMatrix

DEFAULT_K = (10, 20)
HEAD_FRACTION = 0.2
SLICES = ("overall", "head", "tail")


@lru_cache(maxsize=None)
def _discounts(n: int) -> np.ndarray:
    """``1 / log2(p + 1)`` for positions p = 1..n."""
    return np.array([1.0 / math.log2(p + 1) for p in range(1, n + 1)])


def _csr(x) -> sp.csr_matrix:
    if isinstance(x, InteractionMatrix):
        return x.matrix
    return sp.csr_matrix(x)


def _weights(w) -> np.ndarray:
    return w.values if isinstance(w, ItemWeightMatrix) else np.asarray(w, dtype=np.float64)


def score_users(train, weights, user_batch: Sequence[int] | slice | None = None,
                mask=None) -> np.ndarray:
    """Rows ``X[u] @ B`` for ``user_batch``; masked items get ``-inf``.

    ``mask`` defaults to the training history itself; pass ``False`` to disable.
    """
    x = _csr(train)
    b = _weights(weights)
    if x.shape[1] != b.shape[0] or b.shape[0] != b.shape[1]:
        raise DataError(f"history has {x.shape[1]} items, weights are {b.shape}")
    if user_batch is None:
        user_batch = slice(None)
    xb = x[user_batch]
    if mask is None or mask is False:
        return kernels.score_rows(xb.indptr, xb.indices, xb.data, b, mask is None)
    scores = kernels.score_rows(xb.indptr, xb.indices, xb.data, b, False)
    coo = _csr(mask)[user_batch].tocoo()
    scores[coo.row, coo.col] = -np.inf
    return scores


def topk(scores, k: int) -> np.ndarray:
    """Indices of the ``k`` largest scores, ties by ascending index."""
    scores = np.asarray(scores, dtype=np.float64)
    single = scores.ndim == 1
    if single:
        scores = scores[None, :]
    if not 1 <= k <= scores.shape[1]:
        raise ParameterError(f"k={k} outside [1, {scores.shape[1]}]")
    out = kernels.topk_rows(scores, k)
    return out[0] if single else out


def recall_at_k(ranked: Sequence, relevant: Iterable, k: int) -> float:
    relevant = set(relevant)
    if not relevant:
        raise ParameterError("recall is undefined for an empty relevant set")
    hits = sum(1 for item in list(ranked)[:k] if item in relevant)
    return hits / len(relevant)


def ndcg_at_k(ranked: Sequence, relevant: Iterable, k: int) -> float:
    """Binary-gain NDCG with the ideal list truncated at ``min(k, |relevant|)``."""
    relevant = set(relevant)
    if not relevant:
        raise ParameterError("NDCG is undefined for an empty relevant set")
    disc = _discounts(max(k, 1))
    top = list(ranked)[:k]
    dcg = np.cumsum([disc[p] if item in relevant else 0.0 for p, item in enumerate(top)])
    idcg = np.cumsum(disc[:min(k, len(relevant))])
    return float(dcg[-1] / idcg[-1]) if len(top) else 0.0


def head_items(train, fraction: float = HEAD_FRACTION) -> np.ndarray:
    """Top ``ceil(fraction * n)`` items by training popularity, ties by index."""
    x = _csr(train)
    n = x.shape[1]
    pop = np.asarray(x.sum(axis=0)).ravel()
    order = np.lexsort((np.arange(n), -pop))
    return np.sort(order[:math.ceil(fraction * n)])


@dataclass
class EvalReport:
    k_values: tuple[int, ...]
    slices: dict = field(default_factory=dict)
    users_evaluated: int = 0
    users_skipped: int = 0
    cold_users: int = 0
    head_item_ids: tuple = ()
    meta: dict = field(default_factory=dict)

    @property
    def recall_at(self) -> dict[int, float]:
        return self.slices["overall"]["recall"]

    @property
    def ndcg_at(self) -> dict[int, float]:
        return self.slices["overall"]["ndcg"]

    def metric(self, name: str, k: int, slice_: str = "overall") -> float:
        return self.slices[slice_][name][k]

    def to_dict(self) -> dict:
        return {
            "meta": self.meta,
            "k_values": list(self.k_values),
            "users_evaluated": self.users_evaluated,
            "users_skipped": self.users_skipped,
            "cold_users": self.cold_users,
            "head_item_ids": list(self.head_item_ids),
            "slices": {s: {"users": v["users"],
                           "recall": {str(k): v["recall"][k] for k in self.k_values},
                           "ndcg": {str(k): v["ndcg"][k] for k in self.k_values}}
                       for s, v in self.slices.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def rows(self) -> list[tuple[str, str, int, float]]:
        return [(s, metric, k, self.slices[s][metric][k])
                for s in self.slices for metric in ("recall", "ndcg") for k in self.k_values]

    def to_tsv(self) -> str:
        lines = ["slice\tmetric\tk\tvalue"]
        lines += [f"{s}\t{m}\t{k}\t{v:.6f}" for s, m, k, v in self.rows()]
        return "\n".join(lines) + "\n"

    def save(self, out_dir, stem: str = "report") -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        pj, pt = out / f"{stem}.json", out / f"{stem}.tsv"
        pj.write_text(self.to_json(), encoding="utf-8")
        pt.write_text(self.to_tsv(), encoding="utf-8")
        return pj, pt


def evaluate(train, test, weights, k_values: Sequence[int] = DEFAULT_K, mask=None,
             batch_size: int = 2048, item_ids: Sequence[str] | None = None,
             meta: dict | None = None) -> EvalReport:
    """Average-over-all ranking evaluation of ``weights`` on ``test``.

    Each user's training history is the scoring input and is excluded from the
    candidates. Metrics are arithmetic means over users whose relevant set
    (restricted to the slice) is non-empty.
    """
    x, t = _csr(train), _csr(test)
    n = x.shape[1]
    if t.shape != x.shape:
        raise DataError(f"train {x.shape} and test {t.shape} differ in shape")
    if _weights(weights).shape != (n, n):
        raise DataError(f"weights {_weights(weights).shape} do not match {n} items")
    if isinstance(weights, ItemWeightMatrix) and isinstance(train, InteractionMatrix):
        if weights.item_ids and tuple(weights.item_ids) != tuple(train.item_ids):
            raise DataError("weight matrix item ids differ from the split's items")
    k_values = tuple(sorted({int(k) for k in k_values}))
    if not k_values or k_values[0] < 1 or k_values[-1] > n:
        raise ParameterError(f"k values must lie in [1, {n}], got {k_values}")
    kmax = k_values[-1]
    if item_ids is None and isinstance(train, InteractionMatrix):
        item_ids = train.item_ids

    head = head_items(x)
    in_head = np.zeros(n, dtype=bool)
    in_head[head] = True
    disc = _discounts(kmax)
    ideal = np.cumsum(disc)
    kidx = np.array(k_values) - 1

    per_user = {s: {"recall": [], "ndcg": []} for s in SLICES}
    history_len = np.diff(x.indptr)
    test_len = np.diff(t.indptr)
    skipped = cold = 0
    for start in range(0, x.shape[0], batch_size):
        users = np.arange(start, min(start + batch_size, x.shape[0]))
        users = users[test_len[users] > 0]
        skipped += int(min(batch_size, x.shape[0] - start) - users.size)
        if users.size == 0:
            continue
        cold += int(np.count_nonzero(history_len[users] == 0))
        scores = score_users(x, weights, users, mask=mask)
        ranked = kernels.topk_rows(scores, kmax)
        tb = t[users]
        hits = kernels.hit_matrix(ranked, tb.indptr, tb.indices, n)
        ranked_head = in_head[ranked]
        rel_head = np.asarray(tb @ in_head.astype(np.float64)).ravel().astype(np.int64)
        rel_all = np.diff(tb.indptr)
        for s, h, rel in (("overall", hits, rel_all),
                          ("head", hits & ranked_head, rel_head),
                          ("tail", hits & ~ranked_head, rel_all - rel_head)):
            keep = rel > 0
            if not keep.any():
                continue
            h, rel = h[keep], rel[keep]
            nhits = np.cumsum(h, axis=1)[:, kidx]
            dcg = np.cumsum(np.where(h, disc, 0.0), axis=1)[:, kidx]
            idcg = ideal[np.minimum(kidx[None, :], rel[:, None] - 1)]
            per_user[s]["recall"].append(nhits / rel[:, None])
            per_user[s]["ndcg"].append(dcg / idcg)

    slices = {}
    for s in SLICES:
        block = {"users": 0, "recall": {}, "ndcg": {}}
        for metric in ("recall", "ndcg"):
            vals = (np.concatenate(per_user[s][metric]) if per_user[s][metric]
                    else np.zeros((0, len(k_values))))
            block["users"] = vals.shape[0]
            for j, k in enumerate(k_values):
                block[metric][k] = math.fsum(vals[:, j]) / vals.shape[0] if vals.shape[0] else 0.0
        slices[s] = block
    head_ids = tuple(item_ids[i] for i in head) if item_ids else tuple(int(i) for i in head)
    return EvalReport(k_values, slices, slices["overall"]["users"], skipped, cold, head_ids,
                      dict(meta or {}))


def head_tail_slices(train, test, weights, k_values: Sequence[int] = DEFAULT_K, **kw) -> dict:
    """Just the ``{overall, head, tail}`` metric blocks of :func:`evaluate`."""
    return evaluate(train, test, weights, k_values, **kw).slices
