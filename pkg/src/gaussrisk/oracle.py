"""Monte-Carlo ground truth for tail probabilities and conditional risk measures.

Samples are drawn in fixed-size chunks; chunk ``k`` of stream ``s`` under seed
``seed`` always uses the Philox generator keyed by ``SeedSequence([seed, s,
k])``. Per-chunk sufficient statistics are reduced by a fixed pairwise tree,
so results do not depend on how many worker threads evaluated the chunks.

Importance sampling shifts the Gaussian mean to the dominating point of the
event (the solution of the orthant quadratic program scaled by ``u``) and
reweights by the exact likelihood ratio, evaluated in log space.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DimensionMismatch, RegimeMismatch, TooFewAcceptedSamples
from .linalg import as_matrix, cho_solve, cholesky
from .qp import solve_pi
from .tail import std_quantile

CHUNK = 1 << 16
DEFAULT_N = 1_000_000
MIN_ACCEPTED = 100
THREADS_ENV = "GAUSSRISK_THREADS"

PLAIN = "plain"
IS = "is"


@dataclass(frozen=True)
class RngStream:
    seed: int = 0
    stream: int = 0

    def chunk_generator(self, chunk: int) -> np.random.Generator:
        ss = np.random.SeedSequence([int(self.seed) & 0xFFFFFFFFFFFFFFFF, self.stream, chunk])
        return np.random.Generator(np.random.Philox(ss))

    def sub(self, offset: int) -> "RngStream":
        return RngStream(self.seed, self.stream * 16 + offset + 1)


@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float
    n: int
    seed: int
    method: str
    accepted_fraction: float
    stream: int = 0

    def __post_init__(self):
        if self.n <= 0 or self.stderr < 0:
            raise ValueError("invalid estimate")


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _tree_sum(parts: list[np.ndarray]) -> np.ndarray:
    while len(parts) > 1:
        nxt = [parts[i] + parts[i + 1] for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


def _chunk_sizes(n: int) -> list[int]:
    full, rest = divmod(int(n), CHUNK)
    return [CHUNK] * full + ([rest] if rest else [])


def _map_chunks(n: int, stream: RngStream, fn: Callable[[np.random.Generator, int], object]) -> list:
    sizes = _chunk_sizes(n)
    jobs = [(stream.chunk_generator(k), size) for k, size in enumerate(sizes)]
    workers = min(worker_count(), len(jobs))
    if workers <= 1:
        return [fn(g, m) for g, m in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))


class _Sampler:
    """Draws ``N(shift, sigma)`` rows with likelihood ratios to ``N(0, sigma)``.

    The ratios are returned divided by ``exp(log_scale)``, their typical size,
    so that sums of squares do not underflow far in the tail.
    """

    def __init__(self, sigma, shift=None):
        self.sigma = as_matrix(sigma)
        self.factor = cholesky(self.sigma)
        d = self.sigma.shape[0]
        self.shift = np.zeros(d) if shift is None else np.asarray(shift, dtype=float)
        self.tilt = cho_solve(self.factor, self.shift)
        self.log_scale = -0.5 * float(self.shift @ self.tilt)

    def draw(self, gen: np.random.Generator, m: int) -> tuple[np.ndarray, np.ndarray]:
        z = gen.standard_normal((m, self.factor.shape[0]))
        x = self.shift + z @ self.factor.T
        if not np.any(self.shift):
            return x, np.ones(m)
        return x, np.exp(-(z @ self.factor.T) @ self.tilt)


def _stats(sampler: _Sampler, fn) -> Callable[[np.random.Generator, int], np.ndarray]:
    """Per-chunk sums of ``w g``, ``w a``, their squares and cross product, and hits."""

    def run(gen, m):
        x, w = sampler.draw(gen, m)
        g, a = fn(x)
        wg = w * g
        wa = w * a
        return np.array(
            [wg.sum(), wa.sum(), (wg * wg).sum(), (wa * wa).sum(), (wg * wa).sum(),
             np.count_nonzero(a), m],
            dtype=float,
        )

    return run


def _collect(n, stream, sampler, fn) -> np.ndarray:
    return _tree_sum(_map_chunks(n, stream, _stats(sampler, fn)))


def _check_accepted(s: np.ndarray, method: str) -> None:
    if method == PLAIN and s[5] < MIN_ACCEPTED:
        raise TooFewAcceptedSamples(
            f"only {int(s[5])} conditioning events in {int(s[6])} plain samples; use importance sampling"
        )


def _mean(s: np.ndarray, col: int = 0, log_scale: float = 0.0) -> tuple[float, float]:
    """Mean and standard error of ``w g`` (``col=0``) or ``w a`` (``col=1``)."""
    n = s[6]
    mean = s[col] / n
    var = max(s[col + 2] / n - mean * mean, 0.0) * n / max(n - 1.0, 1.0)
    scale = math.exp(log_scale)
    return float(mean * scale), math.sqrt(var / n) * scale


def _ratio(s: np.ndarray) -> tuple[float, float]:
    """Ratio of means on shared samples with delta-method standard error."""
    n = s[6]
    if s[1] <= 0:
        raise TooFewAcceptedSamples("no sample fell in the conditioning event")
    r = s[0] / s[1]
    resid2 = (s[2] - 2.0 * r * s[4] + r * r * s[3]) / n
    se = math.sqrt(max(resid2, 0.0) / n) / (s[1] / n)
    return float(r), float(se)


def _independent_ratio(num: np.ndarray, den: np.ndarray, log_scale: float = 0.0) -> tuple[float, float]:
    """Ratio of means from independent runs; ``log_scale`` is that of num over den."""
    mn, sn = _mean(num, 0, log_scale)
    md, sd = _mean(den, 1)
    if md <= 0:
        raise TooFewAcceptedSamples("no sample fell in the conditioning event")
    r = mn / md
    return float(r), float(math.hypot(sn / md, mn * sd / md**2))


def _check_method(method: str) -> str:
    if method not in (PLAIN, IS):
        raise ValueError(f"method must be 'plain' or 'is', got {method!r}")
    return method


def _dominating_point(sigma: np.ndarray, c: np.ndarray, u: float) -> np.ndarray:
    return solve_pi(sigma, c).c_tilde * u


def _conditioning_point(sigma: np.ndarray, b: np.ndarray, u: float) -> np.ndarray:
    """Dominating point of ``{X_{-1} > b u}`` with ``X_1`` left free."""
    tail = sigma[1:, 1:]
    bt = solve_pi(tail, b).c_tilde * u
    return sigma[:, 1:] @ cho_solve(cholesky(tail), bt)


# --------------------------------------------------------------------------
# public estimators


def sample_mvn(spec, n: int, stream: RngStream = RngStream()) -> np.ndarray:
    """``n`` rows of ``Z ~ N(mu, diag(sd) corr diag(sd))``."""
    sampler = _Sampler(spec.corr)
    blocks = _map_chunks(n, stream, lambda g, m: sampler.draw(g, m)[0])
    return spec.mu + spec.sd * np.concatenate(blocks, axis=0)


def estimate_survival(
    sigma, c, u: float, n: int = DEFAULT_N, stream: RngStream = RngStream(), method: str = IS
) -> McEstimate:
    """``P(X > c u)`` for centred ``X ~ N(0, sigma)``."""
    sigma = as_matrix(sigma)
    c = np.asarray(c, dtype=float)
    _check_method(method)
    shift = _dominating_point(sigma, c, u) if method == IS else None
    thresh = c * u

    def fn(x):
        a = np.all(x > thresh, axis=1).astype(float)
        return a, a

    sampler = _Sampler(sigma, shift)
    s = _collect(n, stream, sampler, fn)
    _check_accepted(s, method)
    mean, se = _mean(s, log_scale=sampler.log_scale)
    return McEstimate(mean, se, int(s[6]), stream.seed, method, s[5] / s[6], stream.stream)


def estimate_conditional_mme(
    sigma, c, mu: float, u: float, n: int = DEFAULT_N,
    stream: RngStream = RngStream(), method: str = IS,
) -> McEstimate:
    """``E[(X_1 - c_1 u - mu)_+ | X_{-1} > c_{-1} u]`` for standardised ``X``.

    Under importance sampling numerator and denominator are estimated on
    independent substreams, each tilted to its own dominating point.
    """
    sigma = as_matrix(sigma)
    c = np.asarray(c, dtype=float)
    _check_method(method)
    if len(c) < 2:
        raise DimensionMismatch("conditioning needs d >= 2")
    thresh = c * u
    level = thresh[0] + mu

    def num_fn(x):
        a = np.all(x[:, 1:] > thresh[1:], axis=1).astype(float)
        return np.maximum(x[:, 0] - level, 0.0) * a, a

    if method == PLAIN:
        s = _collect(n, stream, _Sampler(sigma), num_fn)
        _check_accepted(s, method)
        r, se = _ratio(s)
        return McEstimate(r, se, int(s[6]), stream.seed, method, s[5] / s[6], stream.stream)

    c_num = c.copy()
    c_num[0] = level / u
    num_shift = _dominating_point(sigma, c_num, u)
    den_shift = _conditioning_point(sigma, c[1:], u)
    num_sampler = _Sampler(sigma, num_shift)
    den_sampler = _Sampler(sigma, den_shift)
    s_num = _collect(n, stream.sub(0), num_sampler, num_fn)
    s_den = _collect(n, stream.sub(1), den_sampler, num_fn)
    r, se = _independent_ratio(s_num, s_den, num_sampler.log_scale - den_sampler.log_scale)
    return McEstimate(r, se, int(s_num[6] + s_den[6]), stream.seed, method,
                      s_den[5] / s_den[6], stream.stream)


def estimate_conditional_mes(
    sigma, b, u: float, n: int = DEFAULT_N, stream: RngStream = RngStream(), method: str = IS
) -> McEstimate:
    """``E[X_1 | X_{-1} > b u]`` for standardised ``X``."""
    sigma = as_matrix(sigma)
    b = np.asarray(b, dtype=float)
    _check_method(method)
    thresh = b * u
    shift = _conditioning_point(sigma, b, u) if method == IS else None
    centre = shift[0] if shift is not None else 0.0

    def fn(x):
        a = np.all(x[:, 1:] > thresh, axis=1).astype(float)
        return (x[:, 0] - centre) * a, a

    s = _collect(n, stream, _Sampler(sigma, shift), fn)
    _check_accepted(s, method)
    r, se = _ratio(s)
    return McEstimate(r + centre, se, int(s[6]), stream.seed, method, s[5] / s[6], stream.stream)


def estimate_mme(
    spec, a, p: float, n: int = DEFAULT_N, stream: RngStream = RngStream(), method: str = IS
) -> McEstimate:
    """Marginal mean excess ``E[(Z_1 - A_p)_+ | Z_i > VaR_i(p), i >= 2]``."""
    from .approx import standardize_query

    c, mu_shift = standardize_query(spec, a)
    u = std_quantile(p)
    est = estimate_conditional_mme(spec.corr, c, mu_shift, u, n, stream, method)
    s1 = float(spec.sd[0])
    return McEstimate(s1 * est.mean, s1 * est.stderr, est.n, est.seed, est.method,
                      est.accepted_fraction, est.stream)


def estimate_mes(
    spec, p: float, n: int = DEFAULT_N, stream: RngStream = RngStream(), method: str = IS
) -> McEstimate:
    """Marginal expected shortfall ``E[Z_1 | Z_i > VaR_i(p), i >= 2]``."""
    u = std_quantile(p)
    est = estimate_conditional_mes(spec.corr, np.ones(spec.d - 1), u, n, stream, method)
    s1, m1 = float(spec.sd[0]), float(spec.mu[0])
    return McEstimate(m1 + s1 * est.mean, s1 * est.stderr, est.n, est.seed, est.method,
                      est.accepted_fraction, est.stream)


def estimate_mcte(
    sigma, c, u: float, n: int = DEFAULT_N, stream: RngStream = RngStream(), method: str = IS
) -> McEstimate:
    """``E[X_1 | X > c u]``; importance sampling is required from ``u >= 4``."""
    sigma = as_matrix(sigma)
    c = np.asarray(c, dtype=float)
    _check_method(method)
    if method == PLAIN and u >= 4:
        raise TooFewAcceptedSamples("plain sampling is not supported for u >= 4; use importance sampling")
    shift = _dominating_point(sigma, c, u) if method == IS else None
    centre = shift[0] if shift is not None else 0.0
    thresh = c * u

    def fn(x):
        a = np.all(x > thresh, axis=1).astype(float)
        return (x[:, 0] - centre) * a, a

    s = _collect(n, stream, _Sampler(sigma, shift), fn)
    _check_accepted(s, method)
    r, se = _ratio(s)
    return McEstimate(r + centre, se, int(s[6]), stream.seed, method, s[5] / s[6], stream.stream)


@dataclass(frozen=True)
class ExpLimitCheck:
    empirical_mean: float
    ks_distance: float
    rate: float
    n_accepted: int

    def __iter__(self):
        return iter((self.empirical_mean, self.ks_distance))


def exp_limit_check(
    sigma, c, u: float, n: int = DEFAULT_N, stream: RngStream = RngStream()
) -> ExpLimitCheck:
    """Weighted law of ``u (X_1 - c_1 u)`` given ``X > c u`` against Exp(rate ``h_1``).

    Returns the importance-weighted mean and the Kolmogorov-Smirnov distance
    between the weighted empirical distribution and the exponential limit.
    """
    sigma = as_matrix(sigma)
    c = np.asarray(c, dtype=float)
    sol = solve_pi(sigma, c)
    if 1 not in sol.I:
        raise RegimeMismatch(f"index 1 is not in I={sol.I}; the exponential limit does not apply")
    rate = sol.h[1]
    sampler = _Sampler(sigma, sol.c_tilde * u)
    thresh = c * u

    def fn(gen, m):
        x, w = sampler.draw(gen, m)
        keep = np.all(x > thresh, axis=1)
        return u * (x[keep, 0] - thresh[0]), w[keep]

    parts = _map_chunks(n, stream, fn)
    v = np.concatenate([p[0] for p in parts])
    w = np.concatenate([p[1] for p in parts])
    if len(v) < MIN_ACCEPTED:
        raise TooFewAcceptedSamples(f"only {len(v)} samples in the event")
    order = np.argsort(v, kind="stable")
    v, w = v[order], w[order]
    cw = np.cumsum(w)
    total = cw[-1]
    emp_hi = cw / total
    emp_lo = np.concatenate([[0.0], emp_hi[:-1]])
    model = -np.expm1(-rate * v)
    ks = float(max(np.max(emp_hi - model), np.max(model - emp_lo)))
    mean = float(np.sum(w * v) / total)
    return ExpLimitCheck(mean, ks, rate, len(v))
