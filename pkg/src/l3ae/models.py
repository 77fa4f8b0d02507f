"""Closed-form item-to-item linear autoencoders.

All fits return an :class:`ItemWeightMatrix` whose ``values`` ``B`` score a
user history row ``x`` as ``x @ B``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import linalg
from .datasets import FeatureMatrix, InteractionMatrix
from .errors import DataError, ParameterError
from .linalg import DEFAULT_MEMORY_CAP

MODEL_NAMES = ("ease", "cease", "add-ease", "llm-ease", "cosine", "l3ae",
               "llm-cease", "llm-add-ease")


@dataclass
class Hyperparams:
    lambda_: float | None = None
    lambda_x: float | None = None
    lambda_t: float | None = None
    lambda_f: float | None = None
    lambda_kd: float | None = None
    alpha: float | None = None
    beta: float | None = None

    def as_dict(self) -> dict:
        """Set values only, keyed without the trailing underscore."""
        return {k.rstrip("_"): v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        kw = {}
        for k, v in d.items():
            name = "lambda_" if k == "lambda" else k
            if name not in cls.__dataclass_fields__:
                raise ParameterError(f"unknown hyperparameter {k!r}")
            kw[name] = None if v is None else float(v)
        return cls(**kw)


@dataclass(frozen=True)
class ItemWeightMatrix:
    values: np.ndarray
    item_ids: tuple[str, ...] = ()
    model: str = ""
    hyperparams: dict = field(default_factory=dict)
    zero_diag: bool = True

    @property
    def n(self) -> int:
        return self.values.shape[0]


def _positive(name: str, value) -> float:
    if value is None or not float(value) > 0:
        raise ParameterError(f"{name} must be > 0, got {value}")
    return float(value)


def _matrix_of(source):
    """Raw (sparse or dense) rows x items matrix plus its item ids."""
    if isinstance(source, InteractionMatrix):
        return source.matrix, source.item_ids
    if isinstance(source, FeatureMatrix):
        return source.values, source.item_ids
    if sp.issparse(source):
        return source, ()
    return np.asarray(source, dtype=np.float64), ()


def _check_aligned(ids_a, ids_b, n_a, n_b):
    if n_a != n_b:
        raise DataError(f"item count mismatch: {n_a} vs {n_b}")
    if ids_a and ids_b and tuple(ids_a) != tuple(ids_b):
        raise DataError("feature columns are not aligned with the interaction items")


def ease_from_gram(g, lam: float, memory_cap=DEFAULT_MEMORY_CAP) -> np.ndarray:
    ws = linalg.ridge_inverse(g, lam, memory_cap)
    return linalg.zero_diag_finish(ws.p)


def fit_ease(x, lam: float, memory_cap=DEFAULT_MEMORY_CAP) -> ItemWeightMatrix:
    """``B = I - P diagMat(1 / diag(P))`` with ``P = (X^T X + lam I)^{-1}``."""
    lam = _positive("lambda", lam)
    m, ids = _matrix_of(x)
    b = ease_from_gram(linalg.gram(m, memory_cap), lam, memory_cap)
    return ItemWeightMatrix(b, ids, "ease", {"lambda": lam})


def fit_collective(x, features, alpha: float, lam: float,
                   memory_cap=DEFAULT_MEMORY_CAP) -> ItemWeightMatrix:
    """EASE on the stacked design ``[X; sqrt(alpha) M]`` via ``X^T X + alpha M^T M``."""
    lam = _positive("lambda", lam)
    alpha = float(alpha)
    if not alpha >= 0:
        raise ParameterError(f"alpha must be >= 0, got {alpha}")
    mx, ids_x = _matrix_of(x)
    mf, ids_f = _matrix_of(features)
    _check_aligned(ids_x, ids_f, mx.shape[1], mf.shape[1])
    g = linalg.gram(mx, memory_cap)
    if alpha > 0:
        g = g + linalg.gram(mf, memory_cap).scaled(alpha)
    b = ease_from_gram(g, lam, memory_cap)
    return ItemWeightMatrix(b, ids_x or ids_f, "cease", {"alpha": alpha, "lambda": lam})


def blend(c: ItemWeightMatrix, d: ItemWeightMatrix, beta: float) -> np.ndarray:
    """``beta * C + (1 - beta) * D``; the endpoints return a parent unchanged."""
    if beta == 1.0:
        return c.values.copy()
    if beta == 0.0:
        return d.values.copy()
    return beta * c.values + (1.0 - beta) * d.values


def fit_additive(x, features, lambda_x: float, lambda_t: float, beta: float,
                 memory_cap=DEFAULT_MEMORY_CAP) -> ItemWeightMatrix:
    """Blend of separate EASE fits on interactions (C) and features (D)."""
    beta = float(beta)
    if not 0.0 <= beta <= 1.0:
        raise ParameterError(f"beta must lie in [0, 1], got {beta}")
    mx, ids_x = _matrix_of(x)
    mf, ids_f = _matrix_of(features)
    _check_aligned(ids_x, ids_f, mx.shape[1], mf.shape[1])
    c = fit_ease(mx, lambda_x, memory_cap)
    d = fit_ease(mf, lambda_t, memory_cap)
    return ItemWeightMatrix(blend(c, d, beta), ids_x or ids_f, "add-ease",
                            {"beta": beta, "lambda_t": float(lambda_t),
                             "lambda_x": float(lambda_x)})


def fit_semantic_ease(features, lambda_f: float, memory_cap=DEFAULT_MEMORY_CAP) -> ItemWeightMatrix:
    """Semantic correlation matrix S: EASE fitted on the d x n embedding matrix."""
    lambda_f = _positive("lambda_f", lambda_f)
    if isinstance(features, FeatureMatrix) and features.kind != "semantic":
        raise DataError("semantic EASE expects semantic embeddings, got a tag matrix")
    mf, ids = _matrix_of(features)
    b = ease_from_gram(linalg.gram(mf, memory_cap), lambda_f, memory_cap)
    return ItemWeightMatrix(b, ids, "llm-ease", {"lambda_f": lambda_f})


def fit_l3ae(x, s, lambda_x: float, lambda_kd: float,
             memory_cap=DEFAULT_MEMORY_CAP) -> ItemWeightMatrix:
    """Interaction EASE pulled towards a semantic matrix ``S`` by ``lambda_kd ||B - S||^2``.

    ``B = I + lambda_kd P S - P diagMat(mu)``, ``P = (X^T X + (lambda_kd + lambda_x) I)^{-1}``,
    ``mu = (1 + lambda_kd diag(P S)) / diag(P)``.
    """
    lambda_x = _positive("lambda_x", lambda_x)
    lambda_kd = float(lambda_kd)
    if not lambda_kd >= 0:
        raise ParameterError(f"lambda_kd must be >= 0, got {lambda_kd}")
    mx, ids_x = _matrix_of(x)
    s_ids = s.item_ids if isinstance(s, ItemWeightMatrix) else ()
    s_values = s.values if isinstance(s, ItemWeightMatrix) else np.asarray(s, dtype=np.float64)
    n = mx.shape[1]
    if s_values.shape != (n, n):
        raise DataError(f"S has shape {s_values.shape}, expected ({n}, {n})")
    _check_aligned(ids_x, s_ids, n, s_values.shape[0])
    if np.any(np.diag(s_values) != 0):
        raise DataError("S must have an exactly zero diagonal")

    ws = linalg.ridge_inverse(linalg.gram(mx, memory_cap), lambda_kd + lambda_x, memory_cap)
    b = l3ae_from_inverse(ws.p, s_values, lambda_kd)
    return ItemWeightMatrix(b, ids_x or s_ids, "l3ae",
                            {"lambda_kd": lambda_kd, "lambda_x": lambda_x})


def l3ae_from_inverse(p: np.ndarray, s: np.ndarray, lambda_kd: float,
                      ps: np.ndarray | None = None) -> np.ndarray:
    """Distilled weights given ``P = (X^T X + (lambda_kd + lambda_x) I)^{-1}``.

    Sweeps that hold ``lambda_kd + lambda_x`` fixed can reuse one ``P`` (and
    one ``P @ S`` per ``S``).
    """
    d = np.diag(p).copy()
    if np.any(~(d > 0)):
        raise linalg.SolverError("non-positive diagonal in inverse")
    if lambda_kd > 0:
        if ps is None:
            ps = p @ s
        scale = 1.0 + lambda_kd * np.diag(ps)
        b = (p / -d) * scale
        b += lambda_kd * ps
    else:
        # Same arithmetic as plain EASE so the reduction is bitwise exact.
        b = p / -d
    b[np.diag_indices_from(b)] = 0.0
    return b


def lagrange_multipliers(p: np.ndarray, s: np.ndarray | None = None,
                         lambda_kd: float = 0.0) -> np.ndarray:
    """``mu`` of the zero-diagonal constraint in the ``I - P diagMat(mu)`` form."""
    num = np.ones(p.shape[0])
    if s is not None and lambda_kd:
        num = num + lambda_kd * np.einsum("ij,ji->i", p, s)
    return num / np.diag(p)


def cosine_similarity_matrix(features) -> ItemWeightMatrix:
    """Pairwise cosine between item columns, diagonal set to zero."""
    mf, ids = _matrix_of(features)
    if sp.issparse(mf):
        mf = mf.toarray()
    norms = np.linalg.norm(mf, axis=0)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        names = [ids[j] for j in zero[:20]] if ids else zero[:20].tolist()
        raise DataError(f"zero-norm item columns: {names}")
    u = mf / norms
    w = u.T @ u
    w[np.diag_indices_from(w)] = 0.0
    return ItemWeightMatrix(w, ids, "cosine", {})


# ---------------------------------------------------------------------------
# Export / import
# ---------------------------------------------------------------------------


def save_weights(w: ItemWeightMatrix, path, header_path=None) -> Path:
    """Row-major little-endian float32 payload plus a JSON header."""
    path = Path(path)
    header_path = path.with_name(path.name + ".json") if header_path is None else Path(header_path)
    path.write_bytes(np.ascontiguousarray(w.values, dtype="<f4").tobytes())
    header = {"n": w.n, "dtype": "f32", "model": w.model,
              "hyperparams": w.hyperparams, "item_ids": list(w.item_ids)}
    header_path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_weights(path, header_path=None) -> ItemWeightMatrix:
    path = Path(path)
    header_path = path.with_name(path.name + ".json") if header_path is None else Path(header_path)
    header = json.loads(header_path.read_text(encoding="utf-8"))
    n = int(header["n"])
    dtype = {"f32": "<f4", "f64": "<f8"}.get(header.get("dtype"))
    if dtype is None:
        raise DataError(f"{header_path}: unknown dtype {header.get('dtype')!r}")
    raw = path.read_bytes()
    if len(raw) != n * n * np.dtype(dtype).itemsize:
        raise DataError(f"{path}: payload is {len(raw)} bytes, expected n={n} squared")
    values = np.frombuffer(raw, dtype=dtype).reshape(n, n).astype(np.float64)
    return ItemWeightMatrix(values, tuple(header.get("item_ids", ())), header.get("model", ""),
                            header.get("hyperparams", {}))


def fit_model(name: str, train, hp: Hyperparams, features: FeatureMatrix | None = None,
              tags: FeatureMatrix | None = None, semantic: ItemWeightMatrix | None = None,
              memory_cap=DEFAULT_MEMORY_CAP) -> ItemWeightMatrix:
    """Dispatch a model name to its closed form.

    ``llm-*`` variants take the semantic matrix where the tag variants take tags.
    ``l3ae`` reuses ``semantic`` (a fitted S) when given, otherwise fits it first.
    """
    if name not in MODEL_NAMES:
        raise ParameterError(f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}")

    def need(src, what):
        if src is None:
            raise ParameterError(f"model {name!r} needs {what}")
        return src

    if name == "ease":
        w = fit_ease(train, hp.lambda_, memory_cap)
    elif name in ("cease", "llm-cease"):
        src = need(tags, "a tag file") if name == "cease" else need(features, "embeddings")
        w = fit_collective(train, src, hp.alpha, hp.lambda_, memory_cap)
    elif name in ("add-ease", "llm-add-ease"):
        if name == "add-ease":
            src, lam_src = need(tags, "a tag file"), hp.lambda_t
        else:
            src = need(features, "embeddings")
            lam_src = hp.lambda_f if hp.lambda_f is not None else hp.lambda_t
        w = fit_additive(train, src, hp.lambda_x, lam_src, hp.beta, memory_cap)
    elif name == "llm-ease":
        w = fit_semantic_ease(need(features, "embeddings"), hp.lambda_f, memory_cap)
    elif name == "cosine":
        w = cosine_similarity_matrix(need(features, "embeddings"))
    else:
        if semantic is None:
            semantic = fit_semantic_ease(need(features, "embeddings or a fitted S"),
                                         hp.lambda_f, memory_cap)
        w = fit_l3ae(train, semantic, hp.lambda_x, hp.lambda_kd, memory_cap)
        params = dict(w.hyperparams)
        params.update(semantic.hyperparams)
        return ItemWeightMatrix(w.values, w.item_ids, name, params)
    return ItemWeightMatrix(w.values, w.item_ids, name, w.hyperparams)


def stationarity_residual(g: np.ndarray, b: np.ndarray, lambda_x: float,
                          lambda_kd: float = 0.0, s: np.ndarray | None = None) -> float:
    """Max off-diagonal first-order residual, relative to ``1 + max|G|``."""
    r = g @ (b - np.eye(b.shape[0])) + lambda_x * b
    if lambda_kd:
        r += lambda_kd * (b - s)
    r[np.diag_indices_from(r)] = 0.0
    return float(np.abs(r).max() / (1.0 + np.abs(g).max()))


def objective(x: np.ndarray, b: np.ndarray, lambda_x: float, lambda_kd: float = 0.0,
              s: np.ndarray | None = None) -> float:
    """``||X - XB||^2 + lambda_x ||B||^2 + lambda_kd ||B - S||^2``."""
    x = x.toarray() if sp.issparse(x) else np.asarray(x, dtype=np.float64)
    val = np.sum((x - x @ b) ** 2) + lambda_x * np.sum(b ** 2)
    if lambda_kd:
        val += lambda_kd * np.sum((b - s) ** 2)
    return float(val)

