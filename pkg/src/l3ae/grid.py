"""Validation-driven hyperparameter search for every model."""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import linalg, models
from .datasets import FeatureMatrix, SplitBundle
from .errors import ParameterError
from .eval import evaluate
from .linalg import DEFAULT_MEMORY_CAP
from .models import Hyperparams, ItemWeightMatrix

LAMBDA_GRID = (0.1, 0.5, 1.0, 5.0, 10.0, 50.0, 100.0, 500.0, 1000.0)
LAMBDA_KD_GRID = tuple(float(v) for v in (*range(10, 101, 10), *range(150, 301, 50)))
ALPHA_GRID = (0.1, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0)
BETA_GRID = (0.2, 0.4, 0.6, 0.8)

DEFAULT_GRIDS = {
    "lambda": LAMBDA_GRID,
    "lambda_x": LAMBDA_GRID,
    "lambda_t": LAMBDA_GRID,
    "lambda_f": LAMBDA_GRID,
    "lambda_kd": LAMBDA_KD_GRID,
    "alpha": ALPHA_GRID,
    "beta": BETA_GRID,
}

SELECTION_K = 20


@dataclass
class GridResult:
    model: str
    table: list[tuple[dict, float]]
    best: dict
    best_score: float
    metric: str = f"recall@{SELECTION_K}"
    notes: dict = field(default_factory=dict)

    def to_tsv(self) -> str:
        keys = sorted({k for params, _ in self.table for k in params})
        lines = ["\t".join(keys + [self.metric])]
        for params, score in self.table:
            lines.append("\t".join([f"{params[k]:g}" if k in params else "" for k in keys]
                                   + [f"{score:.6f}"]))
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {"model": self.model, "metric": self.metric, "best": self.best,
                "best_score": self.best_score, "points": len(self.table), **self.notes}


def budget_pairs(lambda_star: float, lambda_kd_grid: Sequence[float]) -> list[tuple[float, float]]:
    """``(lambda_kd, lambda_x)`` with ``lambda_kd + lambda_x = lambda_star`` and ``lambda_x > 0``."""
    return [(float(kd), float(lambda_star - kd)) for kd in lambda_kd_grid if lambda_star - kd > 0]


def _grids(overrides: Mapping[str, Sequence[float]] | None) -> dict:
    g = dict(DEFAULT_GRIDS)
    for k, v in (overrides or {}).items():
        if k not in g:
            raise ParameterError(f"unknown grid {k!r}")
        g[k] = tuple(float(x) for x in v)
        if not g[k]:
            raise ParameterError(f"grid {k!r} is empty")
    return g


class _Scorer:
    def __init__(self, split: SplitBundle, k: int, workers: int):
        self.split, self.k, self.workers = split, k, workers

    def __call__(self, b: np.ndarray) -> float:
        rep = evaluate(self.split.train, self.split.validation, b, (self.k,))
        return rep.metric("recall", self.k)

    def many(self, points: Sequence, fit: Callable[[object], np.ndarray]) -> list[float]:
        def run(p):
            return self(fit(p))
        if self.workers > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                return list(pool.map(run, points))  # map keeps grid order
        return [run(p) for p in points]


def _argmax(table: list[tuple[dict, float]], key=None) -> tuple[dict, float]:
    if not table:
        raise ParameterError("grid is empty")
    if key is None:
        best = max(range(len(table)), key=lambda j: (table[j][1], -j))
    else:
        best = min(range(len(table)), key=lambda j: (-table[j][1], key(table[j][0]), j))
    return table[best]


def search_ease(split: SplitBundle, lambdas: Sequence[float], scorer: _Scorer,
                memory_cap=DEFAULT_MEMORY_CAP) -> list[tuple[dict, float]]:
    g = linalg.gram(split.train.matrix, memory_cap)
    scores = scorer.many(lambdas, lambda lam: models.ease_from_gram(g, lam, memory_cap))
    return [({"lambda": float(lam)}, s) for lam, s in zip(lambdas, scores)]


def grid_search(model: str, split: SplitBundle, features: FeatureMatrix | None = None,
                tags: FeatureMatrix | None = None, grids: Mapping | None = None,
                k: int = SELECTION_K, workers: int = 1,
                memory_cap=DEFAULT_MEMORY_CAP) -> GridResult:
    """Score every grid point on validation Recall@k and return the argmax.

    ``l3ae`` first picks ``lambda*`` for plain EASE, then sweeps ``lambda_f`` and
    the ``lambda_kd`` budget pairs ``lambda_x = lambda* - lambda_kd``; ties go to
    the smallest ``lambda_kd``. Other ties go to the earliest grid point.
    """
    if model not in models.MODEL_NAMES:
        raise ParameterError(f"unknown model {model!r}")
    g = _grids(grids)
    scorer = _Scorer(split, k, workers)
    x = split.train
    notes = {}

    def need(src, what):
        if src is None:
            raise ParameterError(f"model {model!r} needs {what}")
        return src

    if model == "ease":
        table = search_ease(split, g["lambda"], scorer, memory_cap)
        best, score = _argmax(table)
    elif model == "cosine":
        w = models.cosine_similarity_matrix(need(features, "embeddings"))
        table = [({}, scorer(w.values))]
        best, score = table[0]
    elif model == "llm-ease":
        f = need(features, "embeddings")
        gf = linalg.gram(f.values, memory_cap)
        pts = g["lambda_f"]
        scores = scorer.many(pts, lambda lf: models.ease_from_gram(gf, lf, memory_cap))
        table = [({"lambda_f": float(p)}, s) for p, s in zip(pts, scores)]
        best, score = _argmax(table)
    elif model in ("cease", "llm-cease"):
        src = need(tags, "a tag file") if model == "cease" else need(features, "embeddings")
        gx = linalg.gram(x.matrix, memory_cap)
        gs = linalg.gram(src.values, memory_cap)
        pts = list(itertools.product(g["alpha"], g["lambda"]))
        scores = scorer.many(pts, lambda p: models.ease_from_gram(gx + gs.scaled(p[0]), p[1],
                                                                  memory_cap))
        table = [({"alpha": float(a), "lambda": float(lam)}, s) for (a, lam), s in zip(pts, scores)]
        best, score = _argmax(table)
    elif model in ("add-ease", "llm-add-ease"):
        src = need(tags, "a tag file") if model == "add-ease" else need(features, "embeddings")
        src_key = "lambda_t" if model == "add-ease" else "lambda_f"
        gx = linalg.gram(x.matrix, memory_cap)
        gs = linalg.gram(src.values, memory_cap)
        cs = {lam: ItemWeightMatrix(models.ease_from_gram(gx, lam, memory_cap))
              for lam in g["lambda_x"]}
        ds = {lam: ItemWeightMatrix(models.ease_from_gram(gs, lam, memory_cap))
              for lam in g[src_key]}
        pts = list(itertools.product(g["beta"], g["lambda_x"], g[src_key]))
        scores = scorer.many(pts, lambda p: models.blend(cs[p[1]], ds[p[2]], p[0]))
        table = [({"beta": float(b), "lambda_x": float(lx), src_key: float(ls)}, s)
                 for (b, lx, ls), s in zip(pts, scores)]
        best, score = _argmax(table)
    else:
        f = need(features, "embeddings")
        ease_table = search_ease(split, g["lambda"], scorer, memory_cap)
        ease_best, ease_score = _argmax(ease_table)
        lam_star = ease_best["lambda"]
        pairs = budget_pairs(lam_star, g["lambda_kd"])
        if not pairs:
            raise ParameterError(f"no lambda_kd in {g['lambda_kd']} leaves lambda_x > 0 "
                                 f"under lambda* = {lam_star:g}")
        notes = {"lambda_star": lam_star, "ease_validation_score": ease_score}
        gf = linalg.gram(f.values, memory_cap)
        p = linalg.ridge_inverse(linalg.gram(x.matrix, memory_cap), lam_star, memory_cap).p
        table = []
        for lf in g["lambda_f"]:
            s = models.ease_from_gram(gf, lf, memory_cap)
            ps = p @ s
            scores = scorer.many(pairs, lambda pr: models.l3ae_from_inverse(p, s, pr[0], ps))
            table += [({"lambda_f": float(lf), "lambda_kd": kd, "lambda_x": lx}, sc)
                      for (kd, lx), sc in zip(pairs, scores)]
        best, score = _argmax(table, key=lambda d: (d["lambda_kd"], d["lambda_f"]))
    return GridResult(model, table, dict(best), float(score), notes=notes)


def hyperparams_of(best: Mapping[str, float]) -> Hyperparams:
    return Hyperparams.from_dict(dict(best))
