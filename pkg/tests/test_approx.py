import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, special

from gaussrisk.approx import (
    CASE_I,
    CASE_II,
    CASE_III,
    CASE_IV_BOUNDARY,
    CASE_IV_INTERIOR,
    CovSpec,
    bivariate_regime,
    mcte,
    mes_bivariate,
    mes_multivariate,
    mme_bivariate,
    mme_bivariate_iv_unscaled,
    mme_multivariate,
    standardize_query,
    trivariate_case_i,
)
from gaussrisk.errors import DimensionMismatch, DomainError, NotPositiveDefinite, RegimeMismatch
from gaussrisk.linalg import equicorrelated, trivariate
from gaussrisk.tail import expected_positive_part, limit_law, limit_law_moments, std_pdf, std_quantile


def exact_bivariate_mme(spec, p):
    """``E[(Z_1 - VaR_2(p))_+ | Z_2 > VaR_2(p)]`` by 1-d quadrature over ``Z_2``."""
    m1, m2 = spec.mu
    s1, s2 = spec.sd
    r = spec.corr[0, 1]
    u = std_quantile(p)
    level = m2 + s2 * u

    def f(z):
        mean = m1 + s1 * r * z
        return expected_positive_part(s1 * math.sqrt(1 - r * r), level - mean) * std_pdf(z)

    num, _ = integrate.quad(f, u, u + 40, epsabs=0, epsrel=1e-12, limit=400)
    return num / special.ndtr(-u)


def test_standardize_query_examples():
    c, shift = standardize_query(CovSpec.bivariate(1, 1, 0.3), [1.0])
    assert np.allclose(c, [1, 1]) and shift == 0
    c, shift = standardize_query(CovSpec.bivariate(2, 3, 0.3, 0.5, 1.5), [1.0])
    assert c[0] == pytest.approx(1.5) and shift == pytest.approx(0.5)
    spec = CovSpec([0, 0, 0], [2, 1, 1], equicorrelated(3, 0.2))
    c, shift = standardize_query(spec, [0.5, 0.5])
    assert np.allclose(c, [0.5, 1, 1]) and shift == 0
    with pytest.raises(DimensionMismatch):
        standardize_query(spec, [1.0])


def test_covspec_validation():
    with pytest.raises(DomainError):
        CovSpec([0, 0], [1, -1], np.eye(2))
    with pytest.raises(NotPositiveDefinite):
        CovSpec([0, 0], [1, 1], [[1, 1], [1, 1]])
    with pytest.raises(DimensionMismatch):
        CovSpec([0], [1, 1], np.eye(2))


@pytest.mark.parametrize(
    "sd2, tag", [(1.0, CASE_I), (0.5, CASE_II), (0.2, CASE_III), (2.0, CASE_IV_BOUNDARY),
                 (2.5, CASE_IV_INTERIOR)],
)
def test_bivariate_regimes(sd2, tag):
    reg = bivariate_regime(CovSpec.bivariate(1.0, sd2, 0.5))
    assert reg.tag == tag
    assert (reg.h1 is not None) == (tag == CASE_I)


def test_case_i_h_values():
    reg = bivariate_regime(CovSpec.bivariate(1, 1, 0.5))
    assert reg.h1 == pytest.approx(2 / 3) and reg.h2 == pytest.approx(2 / 3)


@given(st.floats(0.05, 5.0), st.floats(0.05, 5.0), st.floats(-0.95, 0.95))
def test_regime_exhaustive_and_consistent(s1, s2, rho):
    reg = bivariate_regime(CovSpec.bivariate(s1, s2, rho))
    if reg.tag == CASE_I:
        assert s2 > rho * s1 and s1 > rho * s2 and reg.h1 > 0 and reg.h2 > 0
    elif reg.tag == CASE_III:
        assert s2 < rho * s1
    elif reg.tag == CASE_IV_INTERIOR:
        assert s1 < rho * s2


def test_case_ii_constant():
    spec = CovSpec.bivariate(1.0, 0.5, 0.5)
    for p in (0.9, 0.9999, 1 - 1e-10):
        r = mme_bivariate(spec, p)
        assert r.value == pytest.approx(math.sqrt(0.75) / math.sqrt(2 * math.pi), rel=1e-14)
        assert r.asymptotic_type == "FiniteLimit"


def test_case_ii_approaches_exact_slowly():
    spec = CovSpec.bivariate(1.0, 0.5, 0.5)
    gaps = [exact_bivariate_mme(spec, 1 - 10.0**-k) / mme_bivariate(spec, 0.5).value - 1
            for k in (4, 8, 12)]
    assert all(g > 0 for g in gaps) and np.all(np.diff(gaps) < 0)


def test_case_iii_linear():
    spec = CovSpec.bivariate(1.0, 0.2, 0.5)
    for p in (0.99, 1 - 1e-8):
        assert mme_bivariate(spec, p).value == pytest.approx(0.3 * std_quantile(p), rel=1e-14)
    ratios = [mme_bivariate(spec, p).value / exact_bivariate_mme(spec, p)
              for p in (1 - 1e-2, 1 - 1e-4, 1 - 1e-8, 1 - 1e-12)]
    assert np.all(np.diff(ratios) > 0) and 0.95 < ratios[-1] < 1.0


@pytest.mark.parametrize("sd2, rho, mu2", [(1.0, 0.5, 0.0), (0.7, 0.2, 0.3), (1.3, -0.4, -0.2)])
def test_case_i_converges_to_exact(sd2, rho, mu2):
    spec = CovSpec.bivariate(1.0, sd2, rho, 0.0, mu2)
    ratios = [mme_bivariate(spec, 1 - 10.0**-k).value / exact_bivariate_mme(spec, 1 - 10.0**-k)
              for k in (4, 8, 12, 16)]
    assert np.all(np.diff(np.abs(np.log(ratios))) < 0)
    assert abs(ratios[-1] - 1) < 0.35


@pytest.mark.parametrize("sd2, boundary", [(2.0, True), (2.5, False)])
def test_case_iv_against_exact(sd2, boundary):
    spec = CovSpec.bivariate(1.0, sd2, 0.5, 0.0, 0.3)
    for k in (8, 12):
        p = 1 - 10.0**-k
        exact = exact_bivariate_mme(spec, p)
        assert mme_bivariate(spec, p).value / exact == pytest.approx(1.0, abs=0.07)
        # without the (sd1/sd2)^2 / u^2 scale the expression is far off
        assert mme_bivariate_iv_unscaled(spec, p, boundary) / exact > 50


def test_case_i_and_iv_decreasing():
    for sd2 in (1.0, 2.5):
        spec = CovSpec.bivariate(1.0, sd2, 0.5)
        values = [mme_bivariate(spec, u=u).log_value for u in np.linspace(4, 10, 13)]
        assert np.all(np.diff(values) < 0)


def test_force_regime_and_level_arguments():
    spec = CovSpec.bivariate(1.0, 0.5, 0.5)
    assert mme_bivariate(spec, force_regime=CASE_III, u=4.0).value == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(RegimeMismatch):
        mme_bivariate(spec, 0.99, force_regime=CASE_I)
    with pytest.raises(RegimeMismatch):
        mme_bivariate(spec, 0.99, force_regime="CaseV")
    with pytest.raises(DomainError):
        mme_bivariate(spec)
    assert mme_bivariate(spec, 0.999).value == mme_bivariate(spec, u=std_quantile(0.999)).value


def test_mes_bivariate():
    assert mes_bivariate(CovSpec.bivariate(1, 1, 0.0, 0.7), 0.999) == 0.7
    assert mes_bivariate(CovSpec.bivariate(1, 1, 0.5), 0.999) == pytest.approx(0.5 * special.ndtri(0.999), rel=1e-15)
    spec = CovSpec.bivariate(2.0, 1.0, 0.3, 0.4)
    us = [std_quantile(p) for p in (0.9, 0.99, 0.999)]
    vals = [mes_bivariate(spec, p) - 0.4 for p in (0.9, 0.99, 0.999)]
    assert np.allclose(np.array(vals) / np.array(us), 0.6, rtol=1e-14)
    assert mes_bivariate(CovSpec.bivariate(1, 1, -0.5), 1 - 1e-12) < -3.5


@pytest.mark.parametrize(
    "rho, ratio",
    [(-0.3, 0.6), (-0.3, 1.4), (0.2, 0.6), (0.2, 1.0), (0.2, 1.4), (0.5, 0.6), (0.5, 1.0),
     (0.5, 1.4), (0.8, 1.0)],
)
def test_general_path_matches_bivariate_case_i(rho, ratio):
    spec = CovSpec.bivariate(1.0, ratio, rho, 0.0, 0.25)
    assert bivariate_regime(spec).tag == CASE_I
    c, shift = standardize_query(spec, [1.0])
    for u in (4.0, 7.0, 10.0):
        general = mme_multivariate(spec.corr, c, shift, u)
        assert general.regime == "InI"
        assert general.value == pytest.approx(mme_bivariate(spec, u=u).value, rel=1e-8)


@pytest.mark.parametrize("rho, mu, u", [(0.3, 0.0, 5.0), (0.5, 1.0, 6.0), (0.5, 0.0, 4.0)])
def test_trivariate_closed_form(rho, mu, u):
    sigma = equicorrelated(3, rho)
    general = mme_multivariate(sigma, np.ones(3), mu, u)
    assert general.regime == "InI"
    assert trivariate_case_i(sigma, mu, u) == pytest.approx(general.value, rel=1e-10)


def test_trivariate_closed_form_rejects_non_savage():
    with pytest.raises(RegimeMismatch):
        trivariate_case_i(trivariate(0.9, 0.9, 0.7), 0.0, 5.0)


def test_in_l_minus_i_limit():
    sigma = trivariate(0.9, 0.9, 0.8)
    for mu in (0.0, 0.3):
        r = mme_multivariate(sigma, np.ones(3), mu, 5.0)
        assert r.regime == "InLMinusI" and r.asymptotic_type == "FiniteLimit"
        # X_1 | X_2 = X_3 = 0 has variance 1 - 2 * 0.81 / 1.8 = 0.1
        assert r.value == pytest.approx(expected_positive_part(math.sqrt(0.1), mu), rel=1e-12)


def test_in_l_complement_slope():
    sigma = trivariate(0.9, 0.9, 0.7)
    for u in (3.0, 8.0):
        r = mme_multivariate(sigma, np.ones(3), 0.0, u)
        assert r.regime == "InLComplement"
        assert r.value == pytest.approx(0.1 / 1.7 * u, rel=1e-12)


def test_mes_multivariate_examples():
    lim = mes_multivariate(equicorrelated(2, 0.4), [1.0])
    assert lim.c1 == pytest.approx(0.4) and lim.mean_y == 0.0
    assert lim.law.cond_cov[0, 0] == pytest.approx(1 - 0.16)
    lim = mes_multivariate(np.eye(3), [1.0, 1.0])
    assert lim.c1 == 0.0 and lim.mean_y == 0.0
    # the conditioning block [[1, .8], [.8, 1]] satisfies Savage, so no restriction
    lim = mes_multivariate(trivariate(0.9, 0.9, 0.8), [1.0, 1.0])
    assert lim.law.n_star == () and lim.c1 == pytest.approx(1.0) and lim.mean_y == 0.0


def test_mes_multivariate_with_restriction():
    sigma = np.eye(4)
    sigma[1:, 1:] = trivariate(0.9, 0.9, 0.8)
    sigma[0, 1:] = sigma[1:, 0] = [0.3, 0.2, 0.1]
    lim = mes_multivariate(sigma, np.ones(3))
    assert lim.law.I == (3, 4) and lim.law.n_star == (2,)
    expect_c1 = sigma[0, 2:] @ np.linalg.solve(sigma[2:, 2:], np.ones(2))
    assert lim.c1 == pytest.approx(expect_c1, rel=1e-12)
    # rejection oracle for E[X_1 | X_3 = X_4 = 0, X_2 > 0]
    s = sigma[:2, :2] - sigma[:2, 2:] @ np.linalg.solve(sigma[2:, 2:], sigma[2:, :2])
    z = np.random.default_rng(4).multivariate_normal(np.zeros(2), s, size=1_000_000)
    z = z[z[:, 1] > 0]
    assert lim.mean_y == pytest.approx(z[:, 0].mean(), abs=4 * z[:, 0].std() / math.sqrt(len(z)))
    assert lim.mean_y > 0


def test_mcte_regimes():
    r = mcte(np.eye(3), np.ones(3), 5.0)
    assert r.regime == "InI" and r.value == pytest.approx(5.0 + 1 / 5.0)
    r = mcte(equicorrelated(2, 0.5), np.ones(2), 4.0)
    assert r.value == pytest.approx(4.0 + 1.5 / 4.0)
    r = mcte(trivariate(0.9, 0.9, 0.7), np.ones(3), 5.0)
    assert r.regime == "InLComplement" and r.asymptotic_type == "CenteredLimit"
    assert r.form["slope"] == pytest.approx(1.8 / 1.7) and r.form["slope"] > 1.0
    assert r.value == pytest.approx(1.8 / 1.7 * 5.0)


def test_mcte_l_minus_i_tail_ratio():
    sigma = trivariate(0.9, 0.9, 0.8)
    r = mcte(sigma, np.ones(3), 6.0)
    assert r.regime == "InLMinusI"
    # P(X_1 > u | X_{-1} > u) tends to P(Y > 0) for Y = X_1 | X_2 = X_3 = 0
    law = limit_law(sigma, 1, (2, 3))
    assert r.form["tail_ratio"] == pytest.approx(limit_law_moments(law).prob_positive, rel=1e-12)
    assert r.form["constant"] == pytest.approx(2 * expected_positive_part(math.sqrt(0.1), 0.0))


def test_query_validation():
    with pytest.raises(DomainError):
        mme_multivariate(np.eye(2), [1.0, 1.0], 0.0, -1.0)
    with pytest.raises(DimensionMismatch):
        mcte(np.eye(3), [1.0, 1.0], 2.0)
