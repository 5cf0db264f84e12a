"""Asymptotic approximations of MME, MES and MCTE for Gaussian risks.

Conventions: ``X`` is a centred Gaussian vector with correlation ``sigma``;

* ``E(c, u) = E[(X_1 - c_1 u - mu)_+ | X_{-1} > c_{-1} u]``  (mean excess),
* ``S(c, u) = E[X_1 | X_{-1} > c_{-1} u]``                  (expected shortfall),
* ``M(c, u) = E[X_1 | X > c u]``                            (tail expectation).

The risk-level forms in terms of ``p`` are reduced to these by
:func:`standardize_query` with ``u = Phi^{-1}(p)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DimensionMismatch, DomainError, NotPositiveDefinite, RegimeMismatch
from .linalg import as_matrix, cho_solve, cholesky, sub, zb
from .qp import L_TOL, QpSolution, solve_pi, trivariate_savage_margin
from .tail import (
    LOG_2PI,
    LimitLaw,
    expected_positive_part,
    limit_law,
    limit_law_moments,
    mvn_tail_asymptotic,
    std_cdf,
    std_quantile,
)

REGIME_TOL = 1e-9

CASE_I = "CaseI"
CASE_II = "CaseII"
CASE_III = "CaseIII"
CASE_IV_BOUNDARY = "CaseIVBoundary"
CASE_IV_INTERIOR = "CaseIVInterior"
BIVARIATE_TAGS = (CASE_I, CASE_II, CASE_III, CASE_IV_BOUNDARY, CASE_IV_INTERIOR)

IN_I = "InI"
IN_L_MINUS_I = "InLMinusI"
IN_L_COMPLEMENT = "InLComplement"
MULTIVARIATE_TAGS = (IN_I, IN_L_MINUS_I, IN_L_COMPLEMENT)

VANISHING = "VanishingSuperExp"
FINITE = "FiniteLimit"
LINEAR = "LinearGrowth"
CENTERED = "CenteredLimit"


@dataclass(frozen=True)
class CovSpec:
    """Means, standard deviations and correlation of ``Z``."""

    mu: np.ndarray
    sd: np.ndarray
    corr: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        sd = np.atleast_1d(np.asarray(self.sd, dtype=float))
        corr = as_matrix(self.corr)
        d = corr.shape[0]
        if mu.shape != (d,) or sd.shape != (d,):
            raise DimensionMismatch(f"mu {mu.shape}, sd {sd.shape} and corr {corr.shape} disagree")
        if np.any(sd <= 0):
            raise DomainError("standard deviations must be positive")
        if not np.allclose(np.diag(corr), 1.0, atol=1e-12):
            raise NotPositiveDefinite("correlation matrix must have unit diagonal")
        cholesky(corr)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sd", sd)
        object.__setattr__(self, "corr", corr)

    @property
    def d(self) -> int:
        return len(self.sd)

    @classmethod
    def bivariate(cls, sd1: float, sd2: float, rho: float, mu1: float = 0.0, mu2: float = 0.0) -> "CovSpec":
        return cls([mu1, mu2], [sd1, sd2], [[1.0, rho], [rho, 1.0]])

    def var_at_risk(self, p: float) -> np.ndarray:
        return self.mu + self.sd * std_quantile(p)


@dataclass(frozen=True)
class BivariateRegime:
    tag: str
    rho: float
    beta: float
    eta: float
    c_ratio: float
    h1: float | None = None
    h2: float | None = None


@dataclass(frozen=True)
class ApproxResult:
    value: float
    log_value: float
    regime: str
    asymptotic_type: str
    form: dict = field(default_factory=dict)
    se: float = 0.0
    qp: QpSolution | None = None

    @property
    def stochastic(self) -> bool:
        return self.se > 0


def _log_or_nan(x: float) -> float:
    return math.log(x) if x > 0 else math.nan


def standardize_query(spec: CovSpec, a) -> tuple[np.ndarray, float]:
    """Reduce the level-``p`` MME to ``E(c, u)`` on the correlation scale.

    With ``A_p = sum_i a_i VaR_{i+1}(p)`` one has ``E(p) = sd_1 E(c, u_p)``
    where ``c = (sum_i a_i sd_{i+1} / sd_1, 1, ..., 1)`` and the returned
    shift is ``(sum_i a_i mu_{i+1} - mu_1) / sd_1``.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if a.shape != (spec.d - 1,):
        raise DimensionMismatch(f"expected {spec.d - 1} weights, got {a.shape[0]}")
    c = np.ones(spec.d)
    c[0] = float(a @ spec.sd[1:]) / spec.sd[0]
    mu_shift = (float(a @ spec.mu[1:]) - spec.mu[0]) / spec.sd[0]
    return c, mu_shift


# --------------------------------------------------------------------------
# bivariate


def bivariate_regime(spec: CovSpec, tol: float = REGIME_TOL) -> BivariateRegime:
    if spec.d != 2:
        raise DimensionMismatch(f"bivariate regime needs d=2, got d={spec.d}")
    s1, s2 = spec.sd
    rho = float(spec.corr[0, 1])
    beta = (spec.mu[1] - spec.mu[0]) / s1
    eta = beta / math.sqrt(1.0 - rho * rho)
    gap2 = (s2 - rho * s1) / s2
    gap1 = (s1 - rho * s2) / s1
    if abs(gap2) <= tol:
        tag = CASE_II
    elif gap2 < 0:
        tag = CASE_III
    elif abs(gap1) <= tol:
        tag = CASE_IV_BOUNDARY
    elif gap1 < 0:
        tag = CASE_IV_INTERIOR
    else:
        tag = CASE_I
    return _regime(spec, tag, rho, beta, eta)


def _regime(spec, tag, rho, beta, eta) -> BivariateRegime:
    s1, s2 = spec.sd
    h1 = h2 = None
    if tag == CASE_I:
        h1 = (s2 - rho * s1) / (s1 * (1.0 - rho * rho))
        h2 = (s1 - rho * s2) / (s1 * (1.0 - rho * rho))
    return BivariateRegime(tag, rho, float(beta), float(eta), float(s2 / s1), h1, h2)


def _bivariate_log_density(x: float, y: float, rho: float) -> float:
    q = 1.0 - rho * rho
    return -(x * x - 2.0 * rho * x * y + y * y) / (2.0 * q) - LOG_2PI - 0.5 * math.log(q)


def mme_bivariate(
    spec: CovSpec,
    p: float | None = None,
    *,
    u: float | None = None,
    tol: float = REGIME_TOL,
    force_regime: str | None = None,
) -> ApproxResult:
    """Asymptotic MME ``E[(Z_1 - VaR_2(p))_+ | Z_2 > VaR_2(p)]`` as ``p -> 1``.

    The level may be given as ``u = Phi^{-1}(p)`` instead of ``p``, which
    avoids rounding ``p`` to 1 far in the tail.
    """
    regime = bivariate_regime(spec, tol)
    if force_regime is not None:
        if force_regime not in BIVARIATE_TAGS:
            raise RegimeMismatch(f"unknown bivariate regime {force_regime!r}")
        regime = _regime(spec, force_regime, regime.rho, regime.beta, regime.eta)
    if (p is None) == (u is None):
        raise DomainError("give exactly one of p and u")
    if u is None:
        u = std_quantile(p)
    s1, s2 = map(float, spec.sd)
    rho, beta, eta, c = regime.rho, regime.beta, regime.eta, regime.c_ratio
    tag = regime.tag

    if tag == CASE_I:
        h1, h2 = regime.h1, regime.h2
        if h1 <= 0 or h2 <= 0:
            raise RegimeMismatch(f"CaseI needs h1, h2 > 0, got {h1:.3g}, {h2:.3g}")
        if u <= 0:
            raise DomainError("the CaseI form needs p > 1/2")
        log_pref = math.log(s1) - 2 * math.log(h1) - math.log(h2) + 0.5 * LOG_2PI
        log_value = (log_pref - 2 * math.log(u) + 0.5 * u * u
                     + _bivariate_log_density(c * u + beta, u, rho))
        return ApproxResult(math.exp(log_value), log_value, tag, VANISHING,
                            {"h1": h1, "h2": h2, "power_of_u": -2, "u": u})
    if tag == CASE_II:
        value = s1 * expected_positive_part(math.sqrt(1.0 - rho * rho), beta)
        return ApproxResult(value, math.log(value), tag, FINITE, {"eta": eta})
    if tag == CASE_III:
        value = (rho * s1 - s2) * u
        return ApproxResult(value, _log_or_nan(value), tag, LINEAR, {"slope": rho * s1 - s2, "u": u})

    if u <= 0:
        raise DomainError("the CaseIV form needs p > 1/2")
    factor = float(std_cdf(eta * rho)) if tag == CASE_IV_BOUNDARY else 1.0
    log_value = (math.log(s1) + 2.0 * math.log(s1 / s2) - math.log(u) - 0.5 * beta * beta
                 + math.log(factor) - beta * c * u - 0.5 * (c * c - 1.0) * u * u)
    return ApproxResult(math.exp(log_value), log_value, tag, VANISHING,
                        {"orthant_factor": factor, "power_of_u": -1, "u": u})


def mme_bivariate_iv_unscaled(spec: CovSpec, p: float, boundary: bool) -> float:
    """Alternative CaseIV expression with power ``+1`` of ``u`` and no ``(sd1/sd2)^2``.

    Kept for comparison only: it disagrees with exact quadrature by orders of
    magnitude. :func:`mme_bivariate` holds the form in use.
    """
    u = std_quantile(p)
    s1, s2 = map(float, spec.sd)
    rho = float(spec.corr[0, 1])
    beta = (spec.mu[1] - spec.mu[0]) / s1
    eta = beta / math.sqrt(1.0 - rho * rho)
    factor = float(std_cdf(eta * rho)) if boundary else 1.0
    return (s1 * math.exp(-0.5 * beta * beta) * factor * u * math.exp(-beta * s2 / s1 * u)
            * math.exp(-(s2 * s2 - s1 * s1) / (2 * s1 * s1) * u * u))


def mes_bivariate(spec: CovSpec, p: float) -> float:
    """``mu_1 + sd_1 rho u_p``; the MES minus this tends to zero."""
    if spec.d != 2:
        raise DimensionMismatch(f"bivariate MES needs d=2, got d={spec.d}")
    return float(spec.mu[0] + spec.sd[0] * spec.corr[0, 1] * std_quantile(p))


# --------------------------------------------------------------------------
# multivariate


def _check_query(sigma, c, u):
    sigma = as_matrix(sigma)
    c = np.asarray(c, dtype=float)
    if sigma.shape[0] != len(c):
        raise DimensionMismatch(f"sigma is {sigma.shape[0]}-dimensional, c has {len(c)} entries")
    if len(c) < 2:
        raise DimensionMismatch("conditioning needs d >= 2")
    if not u > 0:
        raise DomainError(f"u must be positive, got {u}")
    return sigma, c


def mme_multivariate(
    sigma, c, mu: float, u: float, *, l_tol: float = L_TOL, seed: int = 0
) -> ApproxResult:
    """Asymptotic ``E(c, u)``, dispatched on where index 1 falls for the QP."""
    sigma, c = _check_query(sigma, c, u)
    if not np.any(c[1:] > 0):
        raise DomainError("c_{-1} needs a positive component for a tail conditioning event")
    sol = solve_pi(sigma, c, l_tol=l_tol)
    regime = sol.regime_of(1)

    if regime == IN_I:
        h1 = sol.h[1]
        shift = np.zeros(len(c))
        shift[0] = mu
        num = mvn_tail_asymptotic(sigma, c, u, shift, qp=sol, seed=seed)
        den = mvn_tail_asymptotic(sigma[1:, 1:], c[1:], u, l_tol=l_tol, seed=seed)
        log_value = -math.log(u * h1) + num.log_value - den.log_value
        return ApproxResult(
            math.exp(log_value), log_value, regime, VANISHING,
            {"h1": h1, "numerator_log": num.log_value, "denominator_log": den.log_value,
             "power_of_u": -1 - num.m + den.m},
            se=0.0, qp=sol,
        )
    if regime == IN_L_MINUS_I:
        n_star = tuple(i for i in sol.N if i != 1)
        law = limit_law(sigma, 1, sol.I, n_star)
        mom = limit_law_moments(law, mu, seed=seed)
        return ApproxResult(
            mom.mean_pos_part, _log_or_nan(mom.mean_pos_part), regime, FINITE,
            {"n_star": list(n_star), "I": list(sol.I)}, se=mom.se_mean_pos_part, qp=sol,
        )
    slope = float(sol.c_tilde[0] - c[0])
    value = u * slope
    return ApproxResult(value, _log_or_nan(value), regime, LINEAR, {"slope": slope}, qp=sol)


class MesLimit(NamedTuple):
    c1: float
    mean_y: float
    law: LimitLaw
    se: float = 0.0


def mes_multivariate(sigma, c_minus1, *, l_tol: float = L_TOL, seed: int = 0) -> MesLimit:
    """Centering slope and limit for ``S(c, u) - c_1 u -> E[Y]``.

    ``c_1 = Sigma_{1,I} (Sigma_II)^{-1} c_I`` with ``I`` read off the QP of the
    conditioning block ``X_{-1}``; ``Y`` is ``X_1 | X_I = 0``, restricted to
    ``X_{N*} > 0`` when that QP has ``L`` strictly larger than ``I``.
    """
    sigma = as_matrix(sigma)
    b = np.asarray(c_minus1, dtype=float)
    if sigma.shape[0] != len(b) + 1:
        raise DimensionMismatch(f"sigma is {sigma.shape[0]}-dimensional, c_-1 has {len(b)} entries")
    sol_b = solve_pi(sigma[1:, 1:], b, l_tol=l_tol)
    I = tuple(i + 1 for i in sol_b.I)
    n_star = tuple(i + 1 for i in sol_b.N)
    c_full = np.concatenate([[0.0], b])
    w = cho_solve(cholesky(sub(sigma, I)), c_full[zb(I)])
    c1 = float((sub(sigma, (1,), I) @ w)[0])
    law = limit_law(sigma, 1, I, n_star)
    mom = limit_law_moments(law, 0.0, seed=seed)
    return MesLimit(c1, float(mom.mean_y), law, float(mom.se_mean_y))


def mcte(sigma, c, u: float, *, l_tol: float = L_TOL, seed: int = 0) -> ApproxResult:
    """Asymptotic ``M(c, u) = E[X_1 | X > c u]``."""
    sigma, c = _check_query(sigma, c, u)
    sol = solve_pi(sigma, c, l_tol=l_tol)
    regime = sol.regime_of(1)

    if regime == IN_L_COMPLEMENT:
        c1t = float(sol.c_tilde[0])
        law = limit_law(sigma, 1, sol.I, sol.N)
        mom = limit_law_moments(law, 0.0, seed=seed)
        value = c1t * u + mom.mean_y
        return ApproxResult(value, _log_or_nan(value), regime, CENTERED,
                            {"slope": c1t, "constant": float(mom.mean_y)},
                            se=mom.se_mean_y, qp=sol)
    if regime == IN_L_MINUS_I:
        n_star = tuple(i for i in sol.N if i != 1)
        law = limit_law(sigma, 1, sol.I, n_star)
        mom = limit_law_moments(law, 0.0, seed=seed)
        # limit of P(X > cu) / P(X_{-1} > c_{-1} u) from the two tail prefactors
        full = mvn_tail_asymptotic(sigma, c, u, qp=sol, seed=seed)
        part = mvn_tail_asymptotic(sigma[1:, 1:], c[1:], u, l_tol=l_tol, seed=seed)
        ratio = math.exp(full.log_value - part.log_value)
        constant = mom.mean_pos_part / ratio
        value = float(c[0]) * u + constant
        return ApproxResult(value, _log_or_nan(value), regime, CENTERED,
                            {"slope": float(c[0]), "constant": constant, "tail_ratio": ratio},
                            se=mom.se_mean_pos_part / ratio, qp=sol)
    h1 = sol.h[1]
    value = float(c[0]) * u + 1.0 / (u * h1)
    return ApproxResult(value, _log_or_nan(value), regime, CENTERED,
                        {"slope": float(c[0]), "h1": h1, "correction": 1.0 / (u * h1)}, qp=sol)


def trivariate_case_i(sigma, mu: float, u: float, *, log: bool = False) -> float:
    """Closed-form trivariate ``E(c, u)`` for ``c = (1, 1, 1)`` when ``Sigma^{-1} c > 0``.

    Written directly in terms of ``det(Sigma)`` and ``c^T Sigma^{-1} e_i``,
    independently of the general tail machinery. ``log=True`` returns the
    logarithm, which stays finite where the value underflows.
    """
    s = as_matrix(sigma)
    if s.shape != (3, 3):
        raise DimensionMismatch("trivariate form needs a 3x3 matrix")
    if trivariate_savage_margin(s) <= 0:
        raise RegimeMismatch("Savage condition fails; the closed form does not apply")
    if not u > 0:
        raise DomainError(f"u must be positive, got {u}")
    s23 = s[1, 2]
    ones = np.ones(3)
    g = np.linalg.solve(s, ones)
    a = ones * u
    a[0] += mu
    quad = float(a @ np.linalg.solve(s, a))
    log_value = (0.5 * math.log(1.0 - s23) - 1.5 * math.log(1.0 + s23)
                 - 0.5 * (LOG_2PI + math.log(np.linalg.det(s)))
                 - 2.0 * math.log(g[0]) - math.log(g[1]) - math.log(g[2])
                 - 2.0 * math.log(u) - 0.5 * quad + u * u / (1.0 + s23))
    return log_value if log else math.exp(log_value)
