"""Dense symmetric positive-definite kernel.

Index sets are tuples of 1-based, strictly increasing coordinates. All
``inv(A) @ x`` products go through a Cholesky solve; no inverse is formed.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .errors import EmptyIndexSet, NotPositiveDefinite

IndexSet = tuple[int, ...]

PIVOT_RTOL = 1e-14


def as_matrix(m) -> np.ndarray:
    a = np.array(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NotPositiveDefinite(f"expected a square matrix, got shape {a.shape}")
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(a).max())):
        raise NotPositiveDefinite("matrix is not symmetric")
    return 0.5 * (a + a.T)


def index_set(indices: Iterable[int], d: int) -> IndexSet:
    """Validate and normalise a 1-based index set against dimension ``d``."""
    out = tuple(sorted(int(i) for i in indices))
    if len(set(out)) != len(out):
        raise ValueError(f"duplicate indices in {out}")
    if out and (out[0] < 1 or out[-1] > d):
        raise ValueError(f"indices {out} outside 1..{d}")
    return out


def complement(indices: Sequence[int], d: int) -> IndexSet:
    s = set(indices)
    return tuple(i for i in range(1, d + 1) if i not in s)


def zb(indices: Sequence[int]) -> np.ndarray:
    """0-based integer array for numpy indexing."""
    return np.asarray(indices, dtype=int) - 1


def sub(m: np.ndarray, rows: Sequence[int], cols: Sequence[int] | None = None) -> np.ndarray:
    """Submatrix keeping the 1-based ``rows`` and ``cols``."""
    cols = rows if cols is None else cols
    return m[np.ix_(zb(rows), zb(cols))]


def cholesky(m) -> np.ndarray:
    """Lower Cholesky factor ``L`` with ``L @ L.T == m``.

    Raises
    ------
    NotPositiveDefinite
        If any squared pivot is at or below ``dim * 1e-14 * max(diag(m))``.
    """
    a = as_matrix(m)
    d = a.shape[0]
    threshold = d * PIVOT_RTOL * max(float(np.max(np.diag(a))), 0.0)
    try:
        factor = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("matrix is not positive definite") from exc
    pivots = np.diag(factor) ** 2
    if not np.all(np.isfinite(pivots)) or np.min(pivots) <= threshold:
        raise NotPositiveDefinite(
            f"matrix is numerically singular (smallest pivot {np.min(pivots):.3e})"
        )
    return factor


def cho_solve(factor: np.ndarray, v) -> np.ndarray:
    y = solve_triangular(factor, np.asarray(v, dtype=float), lower=True)
    return solve_triangular(factor.T, y, lower=False)


def solve_spd(m, v) -> np.ndarray:
    return cho_solve(cholesky(m), v)


def quadratic_form(m, x) -> float:
    """``x^T m^{-1} x`` via one triangular solve."""
    factor = cholesky(m)
    y = solve_triangular(factor, np.asarray(x, dtype=float), lower=True)
    return float(y @ y)


def log_det(m) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(cholesky(m)))))


def conditional_given_zero(m, indices: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Mean map and covariance of ``X_J | X_I = 0`` where ``J`` complements ``I``.

    Returns ``(Sigma_JI Sigma_II^{-1}, Sigma_JJ - Sigma_JI Sigma_II^{-1} Sigma_IJ)``.
    The conditional mean given ``X_I = x_I`` is ``cross_map @ x_I``.
    """
    a = as_matrix(m)
    d = a.shape[0]
    I = index_set(indices, d)
    if not I:
        raise EmptyIndexSet("conditioning set is empty")
    J = complement(I, d)
    if not J:
        raise EmptyIndexSet("conditioning set has an empty complement")
    factor = cholesky(sub(a, I))
    s_ji = sub(a, J, I)
    cross_map = cho_solve(factor, s_ji.T).T
    cond_cov = sub(a, J) - cross_map @ s_ji.T
    cond_cov = 0.5 * (cond_cov + cond_cov.T)
    cholesky(cond_cov)
    return cross_map, cond_cov


def correlation_from_gram(rng: np.random.Generator, d: int, rank_extra: int = 2) -> np.ndarray:
    """Random PD correlation matrix from a normalised Gram matrix."""
    g = rng.standard_normal((d, d + rank_extra))
    s = g @ g.T
    scale = 1.0 / np.sqrt(np.diag(s))
    corr = s * np.outer(scale, scale)
    np.fill_diagonal(corr, 1.0)
    return corr


def equicorrelated(d: int, rho: float) -> np.ndarray:
    m = np.full((d, d), float(rho))
    np.fill_diagonal(m, 1.0)
    return m


def trivariate(s12: float, s13: float, s23: float) -> np.ndarray:
    return np.array([[1.0, s12, s13], [s12, 1.0, s23], [s13, s23, 1.0]])
