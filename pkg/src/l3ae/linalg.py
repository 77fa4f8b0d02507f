"""Dense symmetric linear algebra shared by every closed-form solve."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import DataError, ParameterError, SolverError

DEFAULT_MEMORY_CAP = 16 * 2**30  # bytes
# Dense n x n float64 buffers alive at once during a solve.
_SOLVE_BUFFERS = 3


@dataclass(frozen=True)
class GramMatrix:
    """``M^T M`` for an r x n source matrix."""

    values: np.ndarray
    source_rank_hint: int

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def __add__(self, other: "GramMatrix") -> "GramMatrix":
        if not isinstance(other, GramMatrix):
            return NotImplemented
        if other.n != self.n:
            raise DataError(f"Gram size mismatch: {self.n} vs {other.n}")
        return GramMatrix(self.values + other.values,
                          self.source_rank_hint + other.source_rank_hint)

    def scaled(self, weight: float) -> "GramMatrix":
        return GramMatrix(weight * self.values, self.source_rank_hint)


@dataclass(frozen=True)
class ClosedFormWorkspace:
    """Regularised Gram inverse plus the Lagrange multipliers of the solve."""

    p: np.ndarray
    lambda_total: float
    mu: np.ndarray | None = None


def check_memory(n: int, memory_cap: float | None = DEFAULT_MEMORY_CAP) -> None:
    """Refuse solves whose dense working set would exceed ``memory_cap`` bytes."""
    if memory_cap is None:
        return
    need = _SOLVE_BUFFERS * n * n * 8
    if need > memory_cap:
        raise SolverError(
            f"n={n} items needs ~{need / 2**30:.2f} GiB for {_SOLVE_BUFFERS} dense "
            f"float64 n x n matrices, above the memory cap of {memory_cap / 2**30:.2f} GiB"
        )


def gram(m, memory_cap: float | None = DEFAULT_MEMORY_CAP) -> GramMatrix:
    """Return ``M^T M`` for a dense or scipy-sparse ``M`` with exact symmetry."""
    if sp.issparse(m):
        m = m.tocsr().astype(np.float64)
        if not np.all(np.isfinite(m.data)):
            raise DataError("matrix contains non-finite entries")
        rows, n = m.shape
    else:
        m = np.asarray(m, dtype=np.float64)
        if m.ndim == 1:
            m = m[:, None]
        if m.ndim != 2:
            raise DataError(f"expected a 2-D matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise DataError("matrix contains non-finite entries")
        rows, n = m.shape
    if n < 1:
        raise DataError("matrix has no columns")
    check_memory(n, memory_cap)

    g = m.T @ m
    if sp.issparse(g):
        g = g.toarray()
    g = np.asarray(g, dtype=np.float64)
    # Mirror the upper triangle so the result is bitwise symmetric.
    iu = np.triu_indices(n, 1)
    g[(iu[1], iu[0])] = g[iu]
    return GramMatrix(g, int(rows))


def _as_array(g) -> np.ndarray:
    return g.values if isinstance(g, GramMatrix) else np.asarray(g, dtype=np.float64)


def ridge_inverse(g, lambda_total: float,
                  memory_cap: float | None = DEFAULT_MEMORY_CAP) -> ClosedFormWorkspace:
    """Compute ``(G + lambda I)^{-1}`` through a Cholesky factorisation."""
    lambda_total = float(lambda_total)
    if not lambda_total > 0:
        raise ParameterError(f"ridge weight must be > 0, got {lambda_total}")
    a = np.array(_as_array(g), dtype=np.float64, copy=True)
    n = a.shape[0]
    check_memory(n, memory_cap)
    a[np.diag_indices(n)] += lambda_total

    try:
        c, lower = scipy.linalg.cho_factor(a, lower=False, check_finite=False)
    except np.linalg.LinAlgError as exc:
        # Report the smallest pivot of the offending matrix for diagnosis.
        pivots = np.linalg.eigvalsh(a)
        raise SolverError(
            f"Cholesky factorisation failed ({exc}); smallest pivot/eigenvalue "
            f"{pivots.min():.3e}"
        ) from exc
    del a
    p = scipy.linalg.cho_solve((c, lower), np.eye(n), check_finite=False)
    del c
    # Symmetrise: cho_solve leaves O(eps) asymmetry.
    p += p.T
    p *= 0.5
    return ClosedFormWorkspace(p=p, lambda_total=lambda_total)


def zero_diag_finish(p) -> np.ndarray:
    """``I - P diagMat(1 / diag(P))`` with the diagonal written as exact zero."""
    p = p.p if isinstance(p, ClosedFormWorkspace) else np.asarray(p, dtype=np.float64)
    d = np.diag(p).copy()
    if np.any(~(d > 0)):
        bad = np.flatnonzero(~(d > 0))[:10].tolist()
        raise SolverError(f"non-positive diagonal in inverse at indices {bad}")
    b = p / -d
    b[np.diag_indices_from(b)] = 0.0
    return b


def spectrum(m) -> np.ndarray:
    """Singular values of ``m`` divided by the largest one, in descending order."""
    if sp.issparse(m):
        m = m.toarray()
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise DataError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    s = scipy.linalg.svdvals(m)
    top = s[0] if s.size else 0.0
    if not top > 0:
        raise DataError("spectrum of an all-zero matrix is undefined")
    out = np.clip(s / top, 0.0, 1.0)
    out[0] = 1.0
    return out
