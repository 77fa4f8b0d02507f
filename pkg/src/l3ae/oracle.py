"""Brute-force references for the closed forms and the ranking metrics.

Nothing here reuses the closed-form shortcuts: the KKT solver works column by
column with a general LU solve, the gradient oracle iterates, and the metric
oracle sorts the whole score vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SolverError
from .models import Hyperparams

MAX_USERS = 50
MAX_ITEMS = 15


@dataclass
class OracleInstance:
    x: np.ndarray
    f: np.ndarray
    hyperparams: Hyperparams
    seed: int
    tags: np.ndarray = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.x.shape[1]


def make_instance(seed: int, m: int = 40, n: int = 12, d: int = 6,
                  density: float = 0.3) -> OracleInstance:
    """Random binary X, Gaussian F and tag matrix with random hyperparameters."""
    if not (1 <= m <= MAX_USERS and 1 <= n <= MAX_ITEMS):
        raise ValueError(f"oracle instances are limited to m<={MAX_USERS}, n<={MAX_ITEMS}")
    rng = np.random.default_rng(seed)
    x = (rng.random((m, n)) < density).astype(np.float64)
    f = rng.standard_normal((d, n))
    tags = (rng.random((8, n)) < 0.3).astype(np.float64)
    hp = Hyperparams(
        lambda_=float(rng.choice([0.5, 1.0, 5.0, 10.0])),
        lambda_x=float(rng.choice([0.5, 1.0, 5.0])),
        lambda_t=float(rng.choice([0.5, 1.0, 5.0])),
        lambda_f=float(rng.choice([0.1, 1.0, 5.0])),
        lambda_kd=float(rng.choice([1.0, 10.0, 20.0])),
        alpha=float(rng.choice([0.1, 1.0, 3.0])),
        beta=float(rng.choice([0.2, 0.4, 0.6, 0.8])),
    )
    return OracleInstance(x, f, hp, seed, tags)


def kkt_solve(gram: np.ndarray, ridge: float, target: np.ndarray | None = None) -> np.ndarray:
    """Zero-diagonal ridge minimiser from its first-order conditions.

    For each column j, with free rows F = {i != j}:
    ``(G + ridge I)[F, F] b_j = target[F, j]`` and ``b_j[j] = 0``.
    ``target`` is ``G`` for plain EASE and ``G + lambda_kd S`` with distillation.
    """
    g = np.asarray(gram, dtype=np.float64)
    n = g.shape[0]
    target = g if target is None else np.asarray(target, dtype=np.float64)
    a = g + ridge * np.eye(n)
    b = np.zeros((n, n))
    for j in range(n):
        free = np.r_[0:j, j + 1:n]
        if free.size == 0:
            continue
        try:
            b[free, j] = np.linalg.solve(a[np.ix_(free, free)], target[free, j])
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"singular KKT subsystem for column {j}") from exc
    return b


def _objective(g, b, lambda_x, lambda_kd, s):
    r = np.eye(g.shape[0]) - b
    val = np.sum(r * (g @ r)) + lambda_x * np.sum(b * b)
    if lambda_kd:
        val += lambda_kd * np.sum((b - s) ** 2)
    return float(val)


def projected_gradient(gram: np.ndarray, lambda_x: float, lambda_kd: float = 0.0,
                       s: np.ndarray | None = None, steps: int = 10_000,
                       learning_rate: float | None = None, history: list | None = None,
                       tol: float = 1e-13) -> np.ndarray:
    """Gradient descent on the constrained objective, re-zeroing the diagonal.

    Minimises ``tr((I-B)^T G (I-B)) + lambda_x ||B||^2 + lambda_kd ||B - S||^2``
    starting from zero. A step that raises the objective is rejected and the
    step size halved; the tenth halving raises :class:`SolverError`.
    """
    g = np.asarray(gram, dtype=np.float64)
    n = g.shape[0]
    s = np.zeros((n, n)) if s is None else np.asarray(s, dtype=np.float64)
    eye = np.eye(n)
    diag = np.diag_indices(n)
    if learning_rate is None:
        lipschitz = 2.0 * (np.linalg.norm(g, 2) + lambda_x + lambda_kd)
        learning_rate = 1.0 / lipschitz
    lr = learning_rate
    b = np.zeros((n, n))
    f = _objective(g, b, lambda_x, lambda_kd, s)
    if history is not None:
        history.append(f)
    halvings = 0
    for _ in range(int(steps)):
        grad = 2.0 * (g @ (b - eye) + lambda_x * b + lambda_kd * (b - s))
        grad[diag] = 0.0
        if np.abs(grad).max() <= tol * (1.0 + np.abs(g).max()):
            break
        while True:
            cand = b - lr * grad
            cand[diag] = 0.0
            f_new = _objective(g, cand, lambda_x, lambda_kd, s)
            # Allow rounding noise near the optimum.
            if f_new <= f + 1e-13 * (1.0 + abs(f)):
                break
            halvings += 1
            if halvings >= 10:
                raise SolverError("projected gradient diverged after 10 step halvings")
            lr *= 0.5
        b, f = cand, f_new
        if history is not None:
            history.append(f)
    return b


def exhaustive_rank_metrics(scores, relevant, k: int):
    """Recall@k and NDCG@k by full sort; ``None`` when ``relevant`` is empty."""
    relevant = set(int(i) for i in relevant)
    if not relevant:
        return None
    scores = [float(v) for v in scores]
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    top = order[:k]
    hits = [i in relevant for i in top]
    recall = sum(hits) / len(relevant)
    dcg = 0.0
    for pos, hit in enumerate(hits, start=1):
        if hit:
            dcg += 1.0 / math.log2(pos + 1)
    idcg = 0.0
    for pos in range(1, min(k, len(relevant)) + 1):
        idcg += 1.0 / math.log2(pos + 1)
    return recall, dcg / idcg


# ---------------------------------------------------------------------------
# Audit suite
# ---------------------------------------------------------------------------


@dataclass
class AuditResult:
    check: str
    cases: int
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def closed_form_errors(inst: OracleInstance) -> dict[str, float]:
    """Max-norm gap between each closed form and its KKT reference."""
    from . import models

    hp = inst.hyperparams
    x, f, tags = inst.x, inst.f, inst.tags
    gx, gf, gt = x.T @ x, f.T @ f, tags.T @ tags
    out = {}
    out["ease"] = np.abs(models.fit_ease(x, hp.lambda_).values - kkt_solve(gx, hp.lambda_)).max()
    col = models.fit_collective(x, f, hp.alpha, hp.lambda_).values
    out["collective"] = np.abs(col - kkt_solve(gx + hp.alpha * gf, hp.lambda_)).max()
    add = models.fit_additive(x, tags, hp.lambda_x, hp.lambda_t, hp.beta).values
    add_ref = hp.beta * kkt_solve(gx, hp.lambda_x) + (1 - hp.beta) * kkt_solve(gt, hp.lambda_t)
    out["additive"] = np.abs(add - add_ref).max()
    s_ref = kkt_solve(gf, hp.lambda_f)
    s = models.fit_semantic_ease(f, hp.lambda_f).values
    out["semantic"] = np.abs(s - s_ref).max()
    b = models.fit_l3ae(x, s, hp.lambda_x, hp.lambda_kd).values
    b_ref = kkt_solve(gx, hp.lambda_x + hp.lambda_kd, gx + hp.lambda_kd * s)
    out["l3ae"] = np.abs(b - b_ref).max()
    return out


def run_audit(n_instances: int = 20, seed: int = 0, metric_cases: int = 1000,
              gradient_steps: int = 10_000) -> list[AuditResult]:
    from . import eval as ev

    worst: dict[str, float] = {}
    pg_err = 0.0
    for t in range(n_instances):
        inst = make_instance(seed + t)
        for name, err in closed_form_errors(inst).items():
            worst[name] = max(worst.get(name, 0.0), float(err))
        hp = inst.hyperparams
        gx = inst.x.T @ inst.x
        s = kkt_solve(inst.f.T @ inst.f, hp.lambda_f)
        ref = kkt_solve(gx, hp.lambda_x + hp.lambda_kd, gx + hp.lambda_kd * s)
        pg = projected_gradient(gx, hp.lambda_x, hp.lambda_kd, s, steps=gradient_steps)
        pg_err = max(pg_err, float(np.abs(pg - ref).max()))

    results = [AuditResult(f"closed form vs KKT: {name}", n_instances, worst[name], 1e-6)
               for name in ("ease", "collective", "additive", "semantic", "l3ae")]
    results.append(AuditResult("projected gradient vs KKT: l3ae", n_instances, pg_err, 1e-4))

    rng = np.random.default_rng(seed)
    metric_err = 0.0
    for _ in range(metric_cases):
        n = int(rng.integers(1, 51))
        k = int(rng.integers(1, n + 1))
        scores = rng.integers(0, 6, size=n).astype(np.float64)
        scores[rng.random(n) < 0.2] = -np.inf
        relevant = np.flatnonzero(rng.random(n) < 0.3)
        ref = exhaustive_rank_metrics(scores, relevant, k)
        if ref is None:
            continue
        ranked = ev.topk(scores, k)
        got = (ev.recall_at_k(ranked, relevant, k), ev.ndcg_at_k(ranked, relevant, k))
        metric_err = max(metric_err, abs(got[0] - ref[0]), abs(got[1] - ref[1]))
    # Exact agreement demanded: any difference fails.
    results.append(AuditResult("ranking metrics vs exhaustive sort", metric_cases,
                               metric_err, np.nextafter(0.0, 1.0)))
    return results


def format_audit(results: list[AuditResult]) -> str:
    lines = ["check\tcases\tmax_error\ttolerance\tstatus"]
    for r in results:
        tol = "exact" if r.tolerance <= np.nextafter(0.0, 1.0) else f"{r.tolerance:.0e}"
        lines.append(f"{r.check}\t{r.cases}\t{r.max_error:.3e}\t{tol}\t"
                     f"{'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
