"""Solver for ``min x^T Sigma^{-1} x  subject to  x >= c``.

The solution ``c_tilde`` is the dominating point of the Gaussian tail event
``{X > c u}``. It is characterised by a unique non-empty index set ``I`` with

    (Sigma_II)^{-1} c_I > 0   and   Sigma_JI (Sigma_II)^{-1} c_I >= c_J,

``J`` the complement of ``I``. Enumerating subsets against these two
conditions is exact; for larger dimensions an active-set iteration on the
dual (a non-negative least-squares problem in ``nu = Sigma^{-1} c_tilde``) is
used instead.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AmbiguousActiveSet,
    DimensionMismatch,
    EnumerationOverflow,
    NoPositiveComponent,
)
from .linalg import (
    IndexSet,
    as_matrix,
    cho_solve,
    cholesky,
    complement,
    solve_spd,
    sub,
    zb,
)

ENUMERATION_MAX_DIM = 12
MAX_DIM = 30
L_TOL = 1e-9
STRICT_TOL = 1e-12


@dataclass(frozen=True)
class QpSolution:
    c: np.ndarray
    c_tilde: np.ndarray
    I: IndexSet
    L: IndexSet
    min_value: float
    h: dict[int, float] = field(default_factory=dict)
    method: str = "enumeration"

    @property
    def d(self) -> int:
        return len(self.c)

    @property
    def m(self) -> int:
        return len(self.I)

    @property
    def N(self) -> IndexSet:
        """``L \\ I``: coordinates that only contribute a constant factor."""
        return tuple(i for i in self.L if i not in self.I)

    @property
    def K(self) -> IndexSet:
        """Complement of ``L``: coordinates that drop out asymptotically."""
        return complement(self.L, self.d)

    def regime_of(self, index: int) -> str:
        if index in self.I:
            return "InI"
        if index in self.L:
            return "InLMinusI"
        return "InLComplement"

    def as_dict(self) -> dict:
        return {
            "c_tilde": [float(x) for x in self.c_tilde],
            "I": list(self.I),
            "L": list(self.L),
            "min_value": float(self.min_value),
            "h": {str(k): float(v) for k, v in self.h.items()},
            "method": self.method,
        }


def _check_c(c) -> np.ndarray:
    c = np.asarray(c, dtype=float).ravel()
    if not np.any(c > 0):
        raise NoPositiveComponent("c must have at least one strictly positive component")
    return c


def converse_conditions(sigma, c, subset, strict_tol: float = 0.0) -> bool:
    """True if ``subset`` satisfies both converse conditions.

    ``strict_tol`` > 0 demands a margin on the strict inequality and allows the
    same slack on the weak one.
    """
    sigma = as_matrix(sigma)
    c = np.asarray(c, dtype=float)
    d = len(c)
    S = tuple(subset)
    w = cho_solve(cholesky(sub(sigma, S)), c[zb(S)])
    if not np.all(w > strict_tol):
        return False
    J = complement(S, d)
    if not J:
        return True
    rest = sub(sigma, J, S) @ w
    return bool(np.all(rest >= c[zb(J)] - strict_tol))


def qualifying_subsets(sigma, c, strict_tol: float = 0.0) -> list[IndexSet]:
    """All non-empty subsets meeting the converse conditions (2^d - 1 checks)."""
    sigma = as_matrix(sigma)
    c = _check_c(c)
    d = len(c)
    found = []
    for size in range(1, d + 1):
        for S in itertools.combinations(range(1, d + 1), size):
            if converse_conditions(sigma, c, S, strict_tol):
                found.append(S)
    return found


def _enumerate(sigma: np.ndarray, c: np.ndarray) -> IndexSet:
    scale = max(1.0, float(np.max(np.abs(c))))
    # the tolerant test settles floating-point ties at region boundaries
    candidates = qualifying_subsets(sigma, c, STRICT_TOL * scale)
    if len(candidates) != 1:
        candidates = qualifying_subsets(sigma, c, 0.0)
    if len(candidates) != 1:
        raise AmbiguousActiveSet(
            f"{len(candidates)} index sets satisfy the optimality conditions: {candidates}"
        )
    return candidates[0]


def _active_set(sigma: np.ndarray, c: np.ndarray, max_iter: int | None = None) -> IndexSet:
    """Lawson-Hanson iteration on ``min 1/2 nu^T Sigma nu - c^T nu, nu >= 0``.

    At the optimum ``c_tilde = Sigma nu`` and ``I = {i : nu_i > 0}``.
    """
    d = len(c)
    scale = max(1.0, float(np.max(np.abs(c))))
    tol = 1e-13 * scale * d
    if np.all(solve_spd(sigma, c) > 0):
        return tuple(range(1, d + 1))
    max_iter = max_iter or 30 * d
    nu = np.zeros(d)
    passive = np.zeros(d, dtype=bool)
    for _ in range(max_iter):
        slack = c - sigma @ nu
        slack[passive] = -np.inf
        j = int(np.argmax(slack))
        if passive.all() or slack[j] <= tol:
            return tuple(int(i) + 1 for i in np.flatnonzero(passive))
        passive[j] = True
        for _ in range(max_iter):
            idx = np.flatnonzero(passive)
            z = np.zeros(d)
            z[idx] = solve_spd(sigma[np.ix_(idx, idx)], c[idx])
            if np.all(z[idx] > 0):
                nu = z
                break
            bad = idx[z[idx] <= 0]
            alpha = np.min(nu[bad] / (nu[bad] - z[bad]))
            nu = nu + alpha * (z - nu)
            passive &= nu > tol
            nu[~passive] = 0.0
        else:
            break
    raise EnumerationOverflow(f"active-set iteration did not converge for d={d}")


def build_solution(sigma, c, I: IndexSet, l_tol: float = L_TOL, method: str = "given") -> QpSolution:
    """Assemble ``c_tilde``, ``L``, the minimum and the ``h_i`` from an index set."""
    sigma = as_matrix(sigma)
    c = np.asarray(c, dtype=float)
    d = len(c)
    w = cho_solve(cholesky(sub(sigma, I)), c[zb(I)])
    c_tilde = c.copy()
    J = complement(I, d)
    if J:
        c_tilde[zb(J)] = sub(sigma, J, I) @ w
    close = np.abs(c_tilde - c) <= l_tol * np.maximum(1.0, np.abs(c))
    L = tuple(sorted(set(I) | {int(i) + 1 for i in np.flatnonzero(close)}))
    return QpSolution(
        c=c,
        c_tilde=c_tilde,
        I=tuple(I),
        L=L,
        min_value=float(c[zb(I)] @ w),
        h={i: float(wi) for i, wi in zip(I, w)},
        method=method,
    )


def solve_pi(sigma, c, *, l_tol: float = L_TOL, method: str = "auto") -> QpSolution:
    """Unique solution of the orthant-constrained quadratic program.

    Parameters
    ----------
    sigma : array_like, shape (d, d)
        Positive-definite covariance.
    c : array_like, shape (d,)
        Lower bounds; at least one entry must be positive.
    l_tol : float
        Relative tolerance deciding ``i in L`` from ``|c_tilde_i - c_i|``.
    method : {"auto", "enumeration", "active-set"}
        ``auto`` enumerates up to d=12 and iterates above.
    """
    sigma = as_matrix(sigma)
    c = _check_c(c)
    d = len(c)
    if sigma.shape[0] != d:
        raise DimensionMismatch(f"sigma is {sigma.shape[0]}x{sigma.shape[0]} but c has length {d}")
    cholesky(sigma)
    if method == "auto":
        method = "enumeration" if d <= ENUMERATION_MAX_DIM else "active-set"
    if method == "enumeration":
        if d > MAX_DIM:
            raise EnumerationOverflow(f"d={d} exceeds the enumeration cap")
        I = _enumerate(sigma, c)
    elif method == "active-set":
        I = _active_set(sigma, c)
    else:
        raise ValueError(f"unknown method {method!r}")
    return build_solution(sigma, c, I, l_tol, method)


def savage_condition(sigma, c) -> bool:
    """``Sigma^{-1} c > 0`` componentwise; equivalent to ``I`` being everything."""
    return bool(np.all(solve_spd(sigma, c) > 0))


def trivariate_savage_margin(sigma) -> float:
    """``1 + 2 min(s12, s13, s23) - s12 - s13 - s23`` for ``c = (1, 1, 1)``."""
    s = as_matrix(sigma)
    off = (s[0, 1], s[0, 2], s[1, 2])
    return 1.0 + 2.0 * min(off) - sum(off)


@dataclass(frozen=True)
class KktReport:
    max_residual: float
    identity_residual: float
    structure_residual: float
    feasibility_violation: float
    n_index_sets: int
    c_form_failures: int

    @property
    def passed(self) -> bool:
        return self.max_residual < 1e-9


def verify_kkt(
    sigma,
    c,
    sol: QpSolution,
    *,
    n_vectors: int = 8,
    max_index_sets: int = 256,
    seed: int = 0,
    F_sets=None,
) -> KktReport:
    """Residuals of the optimality structure of ``sol``.

    Checks, for random ``x`` and index sets ``F`` containing ``I``, that
    ``x^T Sigma^{-1} c_tilde == x_F^T (Sigma_FF)^{-1} c_tilde_F``; that
    ``c_tilde_I == c_I`` and ``c_tilde_J == Sigma_JI (Sigma_II)^{-1} c_I``; and
    feasibility ``c_tilde >= c``. ``c_form_failures`` counts the ``F`` for
    which the identity fails when ``c_F`` replaces ``c_tilde_F`` on the right.
    """
    sigma = as_matrix(sigma)
    c = np.asarray(c, dtype=float)
    ct = np.asarray(sol.c_tilde, dtype=float)
    d = len(c)
    rng = np.random.default_rng(seed)
    scale = max(1.0, float(np.max(np.abs(ct))))

    J = complement(sol.I, d)
    w = cho_solve(cholesky(sub(sigma, sol.I)), c[zb(sol.I)])
    structure = float(np.max(np.abs(ct[zb(sol.I)] - c[zb(sol.I)])))
    if J:
        structure = max(structure, float(np.max(np.abs(ct[zb(J)] - sub(sigma, J, sol.I) @ w))))
    structure = max(structure, max(0.0, -float(np.min(w))))
    feas = float(max(0.0, np.max(c - ct)))

    if F_sets is None:
        n_extra = len(J)
        if 2**n_extra <= max_index_sets:
            extras = itertools.chain.from_iterable(
                itertools.combinations(J, k) for k in range(n_extra + 1)
            )
            F_sets = [tuple(sorted(sol.I + e)) for e in extras]
        else:
            F_sets = [sol.I, tuple(range(1, d + 1))]
            for _ in range(max_index_sets - 2):
                pick = tuple(j for j in J if rng.random() < 0.5)
                F_sets.append(tuple(sorted(sol.I + pick)))

    xs = rng.standard_normal((n_vectors, d))
    lhs = xs @ solve_spd(sigma, ct)
    identity = 0.0
    c_fail = 0
    for F in F_sets:
        factor = cholesky(sub(sigma, F))
        rhs = xs[:, zb(F)] @ cho_solve(factor, ct[zb(F)])
        identity = max(identity, float(np.max(np.abs(lhs - rhs))) / scale)
        rhs_c = xs[:, zb(F)] @ cho_solve(factor, c[zb(F)])
        if np.max(np.abs(lhs - rhs_c)) / scale > 1e-9:
            c_fail += 1
    return KktReport(
        max_residual=max(identity, structure, feas),
        identity_residual=identity,
        structure_residual=structure,
        feasibility_violation=feas,
        n_index_sets=len(F_sets),
        c_form_failures=c_fail,
    )
