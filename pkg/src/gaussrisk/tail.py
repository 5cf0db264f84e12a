"""Normal special functions, Gaussian tail asymptotics and limiting laws."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate, special
from scipy.stats import qmc

from .errors import DomainError, OverlappingSets
from .linalg import (
    IndexSet,
    as_matrix,
    cho_solve,
    cholesky,
    index_set,
    log_det,
    quadratic_form,
    sub,
    zb,
)
from .qp import L_TOL, QpSolution, solve_pi

LOG_2PI = math.log(2.0 * math.pi)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

ORTHANT_SE_TARGET = 1e-4
LIMIT_SE_TARGET = 1e-3


def std_pdf(x):
    return np.exp(-0.5 * np.square(x)) * INV_SQRT_2PI


def std_cdf(x):
    return special.ndtr(x)


def std_sf(x):
    """``1 - Phi(x)`` without cancellation."""
    return special.ndtr(-np.asarray(x, dtype=float))


def log_std_sf(x):
    return special.log_ndtr(-np.asarray(x, dtype=float))


def std_quantile(p):
    """``Phi^{-1}(p)`` with one Newton correction; ``p`` must lie in (0, 1)."""
    p_arr = np.asarray(p, dtype=float)
    if np.any(~((p_arr > 0.0) & (p_arr < 1.0))):
        raise DomainError(f"quantile level must lie in (0, 1), got {p}")
    x = special.ndtri(p_arr)
    # Newton on whichever tail carries the precision
    upper = p_arr > 0.5
    resid = np.where(upper, std_sf(x) - (1.0 - p_arr), std_cdf(x) - p_arr)
    resid = np.where(upper, -resid, resid)
    x = x - resid / std_pdf(x)
    return float(x) if np.ndim(x) == 0 else x


def mills_survival(u: float) -> float:
    """Mill's-ratio equivalent ``phi(u) / u`` of ``1 - Phi(u)``."""
    if not u > 0:
        raise DomainError(f"Mill's ratio needs u > 0, got {u}")
    return float(std_pdf(u) / u)


def expected_positive_part(a: float, b: float) -> float:
    """``E[(a X - b)_+]`` for standard normal ``X`` and ``a > 0``."""
    if not a > 0:
        raise DomainError(f"scale must be positive, got {a}")
    z = b / a
    return float(a * std_pdf(z) - b * std_sf(z))


# --------------------------------------------------------------------------
# orthant probabilities


def _bivariate_upper(cov: np.ndarray, lower: np.ndarray) -> float:
    s1, s2 = math.sqrt(cov[0, 0]), math.sqrt(cov[1, 1])
    r = cov[0, 1] / (s1 * s2)
    a, b = lower[0] / s1, lower[1] / s2
    if a == 0.0 and b == 0.0:
        return 0.25 + math.asin(r) / (2.0 * math.pi)
    q = math.sqrt(1.0 - r * r)

    def integrand(z):
        return float(std_pdf(z) * std_sf((b - r * z) / q))

    val, _ = integrate.quad(integrand, a, np.inf, epsabs=1e-14, epsrel=1e-12, limit=200)
    return val


def _sov_batch(factor: np.ndarray, upper: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Separation-of-variables integrand for ``P(W < upper)``, ``W = factor @ Z``."""
    k = factor.shape[0]
    n = w.shape[0]
    y = np.zeros((n, k))
    e = np.full(n, std_cdf(upper[0] / factor[0, 0]))
    f = e.copy()
    tiny = np.finfo(float).tiny
    for i in range(1, k):
        y[:, i - 1] = special.ndtri(np.clip(w[:, i - 1] * e, tiny, 1.0 - 1e-16))
        e = std_cdf((upper[i] - y[:, :i] @ factor[i, :i]) / factor[i, i])
        f *= e
    return f


def gaussian_orthant(
    cov,
    lower=None,
    *,
    seed: int = 0,
    se_target: float = ORTHANT_SE_TARGET,
    replicates: int = 16,
) -> tuple[float, float]:
    """``P(Z > lower)`` for centred ``Z ~ N(0, cov)`` with its standard error.

    Dimensions up to two are deterministic; above that a randomised Sobol
    rule over the separation-of-variables transform is refined until the
    replicate standard error drops below ``se_target``.
    """
    cov = as_matrix(cov)
    k = cov.shape[0]
    lower = np.zeros(k) if lower is None else np.asarray(lower, dtype=float)
    if k == 0:
        return 1.0, 0.0
    if k == 1:
        return float(std_sf(lower[0] / math.sqrt(cov[0, 0]))), 0.0
    if k == 2:
        return _bivariate_upper(cov, lower), 0.0
    factor = cholesky(cov)
    upper = -lower
    log2n = 10
    while True:
        estimates = np.empty(replicates)
        for r in range(replicates):
            engine = qmc.Sobol(k - 1, scramble=True, seed=np.random.default_rng([seed, r]))
            w = engine.random_base2(log2n)
            estimates[r] = _sov_batch(factor, upper, w).mean()
        est = float(estimates.mean())
        se = float(estimates.std(ddof=1) / math.sqrt(replicates))
        if se <= se_target or log2n >= 18:
            return min(max(est, 0.0), 1.0), se
        log2n += 2


def orthant_conditional(
    sigma,
    I: Sequence[int],
    N: Sequence[int],
    x=None,
    *,
    seed: int = 0,
    with_se: bool = False,
):
    """``P(X_N > x_N | X_I = x_I)``; ``x`` defaults to zero.

    Returns 1 when ``N`` is empty. With ``with_se`` a ``(value, se)`` pair.
    """
    sigma = as_matrix(sigma)
    d = sigma.shape[0]
    I = index_set(I, d)
    N = index_set(N, d)
    if set(I) & set(N):
        raise OverlappingSets(f"I={I} and N={N} overlap")
    x = np.zeros(d) if x is None else np.asarray(x, dtype=float)
    if not N:
        return (1.0, 0.0) if with_se else 1.0
    cov_n = sub(sigma, N)
    mean_n = np.zeros(len(N))
    if I:
        factor = cholesky(sub(sigma, I))
        cross = cho_solve(factor, sub(sigma, I, N)).T
        cov_n = cov_n - cross @ sub(sigma, I, N)
        mean_n = cross @ x[zb(I)]
    value, se = gaussian_orthant(cov_n, x[zb(N)] - mean_n, seed=seed)
    return (value, se) if with_se else value


# --------------------------------------------------------------------------
# tail asymptotics


@dataclass(frozen=True)
class TailApprox:
    value: float
    log_value: float
    m: int
    prefactor: float
    density_arg: np.ndarray
    I: IndexSet
    N: IndexSet
    log_density: float
    orthant: float
    orthant_se: float = 0.0


def gaussian_log_density(cov, x) -> float:
    cov = as_matrix(cov)
    x = np.asarray(x, dtype=float)
    if not len(x):
        return 0.0
    return -0.5 * quadratic_form(cov, x) - 0.5 * (len(x) * LOG_2PI + log_det(cov))


def mvn_tail_asymptotic(
    sigma,
    c,
    u: float,
    shift=None,
    *,
    qp: QpSolution | None = None,
    l_tol: float = L_TOL,
    seed: int = 0,
) -> TailApprox:
    """Exact asymptotic equivalent of ``P(X > c u + shift)`` as ``u`` grows.

    The value is ``(prod h_i)^{-1} u^{-m} phi_{Sigma_II}((c u + shift)_I)``
    times ``P(X_N > shift_N | X_I = shift_I)`` with ``N = L \\ I``; all
    products are formed in log space.
    """
    if not u > 0:
        raise DomainError(f"u must be positive, got {u}")
    sigma = as_matrix(sigma)
    c = np.asarray(c, dtype=float)
    d = len(c)
    shift = np.zeros(d) if shift is None else np.asarray(shift, dtype=float)
    sol = qp if qp is not None else solve_pi(sigma, c, l_tol=l_tol)
    I = sol.I
    arg = (c * u + shift)[zb(I)]
    log_dens = gaussian_log_density(sub(sigma, I), arg)
    orth, orth_se = orthant_conditional(sigma, I, sol.N, shift, seed=seed, with_se=True)
    log_h = float(np.sum(np.log([sol.h[i] for i in I])))
    log_pref = -log_h + math.log(orth)
    log_value = log_pref - len(I) * math.log(u) + log_dens
    return TailApprox(
        value=math.exp(log_value),
        log_value=log_value,
        m=len(I),
        prefactor=math.exp(log_pref),
        density_arg=arg,
        I=I,
        N=sol.N,
        log_density=log_dens,
        orthant=orth,
        orthant_se=orth_se,
    )


# --------------------------------------------------------------------------
# limiting laws


@dataclass(frozen=True)
class LimitLaw:
    """Law of ``X_target | X_I = 0`` further restricted to ``X_Nstar > 0``.

    ``cond_cov`` is the covariance of ``(X_target, X_Nstar)`` given
    ``X_I = 0``; the target is its first coordinate.
    """

    target: int
    I: IndexSet
    n_star: IndexSet
    cond_cov: np.ndarray

    @property
    def cond_std(self) -> float:
        return math.sqrt(self.cond_cov[0, 0])

    def survival(self, x: float, *, seed: int = 0) -> float:
        """Survival function of the law at ``x``."""
        k = len(self.n_star)
        lower = np.zeros(k + 1)
        lower[0] = x
        num, _ = gaussian_orthant(self.cond_cov, lower, seed=seed)
        den, _ = gaussian_orthant(self.cond_cov[1:, 1:], seed=seed) if k else (1.0, 0.0)
        return num / den


def limit_law(sigma, target: int, I: Sequence[int], n_star: Sequence[int] = ()) -> LimitLaw:
    sigma = as_matrix(sigma)
    d = sigma.shape[0]
    I = index_set(I, d)
    n_star = index_set(n_star, d)
    if target in I or target in n_star or set(I) & set(n_star):
        raise OverlappingSets(f"target {target}, I={I}, N*={n_star} must be disjoint")
    keep = (target,) + n_star
    cov = sub(sigma, keep)
    if I:
        cross = cho_solve(cholesky(sub(sigma, I)), sub(sigma, I, keep))
        cov = cov - sub(sigma, keep, I) @ cross
    cov = 0.5 * (cov + cov.T)
    cholesky(cov)
    return LimitLaw(target=target, I=I, n_star=n_star, cond_cov=cov)


@dataclass(frozen=True)
class LimitMoments:
    mean_y: float
    mean_pos_part: float
    prob_positive: float
    se_mean_y: float = 0.0
    se_mean_pos_part: float = 0.0
    n: int = 0

    @property
    def stochastic(self) -> bool:
        return self.n > 0

    def __iter__(self):
        return iter((self.mean_y, self.mean_pos_part))


def _positive_part_one_restriction(cov: np.ndarray, mu: float) -> float:
    """``E[(Y - mu)_+ 1{W > 0}]`` for centred bivariate ``(Y, W)``."""
    sy = math.sqrt(cov[0, 0])
    sw = math.sqrt(cov[1, 1])
    r = cov[0, 1] / (sy * sw)
    q = math.sqrt(1.0 - r * r)

    def integrand(z):
        # Y = sy z, P(W > 0 | Y = sy z) = Phi(r z / q)
        return (sy * z - mu) * std_pdf(z) * std_cdf(r * z / q)

    val, _ = integrate.quad(integrand, mu / sy, np.inf, epsabs=1e-13, epsrel=1e-11, limit=200)
    return float(val)


def limit_law_moments(
    law: LimitLaw,
    mu: float = 0.0,
    *,
    seed: int = 0,
    se_target: float = LIMIT_SE_TARGET,
    max_samples: int = 1 << 25,
) -> LimitMoments:
    """``E[Y]``, ``E[(Y - mu)_+]`` and ``P(Y > 0)`` of a limiting law.

    Deterministic without orthant restriction or with a single restricting
    coordinate; otherwise a seeded Monte-Carlo ratio estimate refined until
    both standard errors are below ``se_target``.
    """
    k = len(law.n_star)
    cov = law.cond_cov
    s = law.cond_std
    if k == 0:
        return LimitMoments(0.0, expected_positive_part(s, mu), 0.5)
    if k == 1:
        sw = math.sqrt(cov[1, 1])
        mean_y = cov[0, 1] / sw * math.sqrt(2.0 / math.pi)
        pos = 2.0 * _positive_part_one_restriction(cov, mu)
        p_pos = _bivariate_upper(cov, np.zeros(2)) / 0.5
        return LimitMoments(mean_y, pos, p_pos)

    p_pos = law.survival(0.0, seed=seed)
    factor = cholesky(cov)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0x4C4C])))
    chunk = 1 << 18
    sums = np.zeros(5)
    n = 0
    while True:
        z = rng.standard_normal((chunk, k + 1)) @ factor.T
        keep = np.all(z[:, 1:] > 0.0, axis=1)
        y = z[:, 0] * keep
        pos = np.maximum(z[:, 0] - mu, 0.0) * keep
        a = keep.astype(float)
        sums += [y.sum(), pos.sum(), a.sum(), (y * y).sum(), (pos * pos).sum()]
        n += chunk
        mean_a = sums[2] / n
        mean_y = sums[0] / sums[2]
        mean_pos = sums[1] / sums[2]
        # delta method for a ratio of means with shared indicator denominator
        var_y = (sums[3] / n - 2 * mean_y * sums[0] / n + mean_y**2 * mean_a) / mean_a**2
        var_pos = (sums[4] / n - 2 * mean_pos * sums[1] / n + mean_pos**2 * mean_a) / mean_a**2
        se_y = math.sqrt(max(var_y, 0.0) / n)
        se_pos = math.sqrt(max(var_pos, 0.0) / n)
        if max(se_y, se_pos) <= se_target or n >= max_samples:
            return LimitMoments(float(mean_y), float(mean_pos), float(p_pos), se_y, se_pos, n)
