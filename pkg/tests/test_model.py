import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from angmeas.geometry import HALF_PI
from angmeas.model import LogisticModel, QuadratureError, SwappedModel, quad

pos = st.floats(1e-3, 1e3)
alphas = st.floats(0.1, 0.9)


@given(pos, pos, alphas)
def test_stdf_bounds_and_homogeneity(x, y, a):
    m = LogisticModel(a)
    v = float(m.stdf(x, y))
    assert max(x, y) * (1 - 1e-13) <= v <= (x + y) * (1 + 1e-13)
    assert float(m.stdf(3 * x, 3 * y)) == pytest.approx(3 * v, rel=1e-13)


def test_stdf_diagonal():
    assert float(LogisticModel(0.5).stdf(1.0, 1.0)) == pytest.approx(math.sqrt(2.0), rel=1e-15)


def test_rejects_bad_alpha():
    for a in (0.0, 1.0, 1.5):
        with pytest.raises(ValueError):
            LogisticModel(a)


@settings(max_examples=15)
@given(st.floats(0.05, 20.0), st.floats(0.05, 20.0), alphas)
def test_density_is_mixed_partial_of_stdf(x, y, a):
    m = LogisticModel(a)
    with mpmath.workdps(40):
        ell = lambda u, v: (u ** (1 / mpmath.mpf(a)) + v ** (1 / mpmath.mpf(a))) ** mpmath.mpf(a)  # noqa: E731
        ref = -mpmath.diff(ell, (mpmath.mpf(x), mpmath.mpf(y)), (1, 1))
    assert float(m.lambda_density(x, y)) == pytest.approx(float(ref), rel=1e-12, abs=1e-300)


@given(pos, pos, st.floats(1e-2, 1e2))
def test_density_homogeneity(x, y, c):
    m = LogisticModel(0.4)
    assert c * float(m.lambda_density(c * x, c * y)) == pytest.approx(float(m.lambda_density(x, y)), rel=1e-12)


def test_rect_mass_matches_box_quadrature(model):
    num, _ = integrate.dblquad(lambda y, x: float(model.lambda_density(x, y)), 0.5, 2.0, 0.25, 3.0, epsabs=1e-12)
    assert float(model.box_mass(0.5, 2.0, 0.25, 3.0)) == pytest.approx(num, rel=1e-9)


def test_margins_are_uniform(model):
    # Lambda((0, x] x (0, inf]) = x
    for x in (0.3, 1.0, 7.0):
        assert float(model.rect_mass(x, math.inf)) == pytest.approx(x, rel=1e-14)


def test_angular_totals(model):
    assert float(model.angular_cdf_Phi(HALF_PI, 1.0)) == pytest.approx(2.0, abs=1e-9)
    assert float(model.angular_cdf_Phi(HALF_PI, math.inf)) == pytest.approx(2**0.5, abs=1e-12)


@pytest.mark.parametrize("p", [1.0, 2.0, 3.5, math.inf])
@pytest.mark.parametrize("theta", [0.3, math.pi / 4, 1.2])
def test_cdf_matches_integrated_density(model, p, theta):
    # density comes from lambda along rays, the cdf from partial derivatives of the stdf
    f = lambda s: float(model.angular_density_phi(s, p))  # noqa: E731
    num = quad(f, 0.0, theta, epsabs=1e-12, epsrel=1e-12)
    assert float(model.angular_cdf_Phi(theta, p)) == pytest.approx(num, rel=1e-8, abs=1e-10)


@pytest.mark.parametrize("p", [1.0, 2.0, math.inf])
def test_lambda_rebuilt_from_angular_density(model, p):
    rng = np.random.default_rng(0)
    x, y = np.exp(rng.uniform(-3, 3, (2, 50)))
    assert np.allclose(model.lambda_from_phi(x, y, p), model.lambda_density(x, y), rtol=1e-10)


@pytest.mark.parametrize("p", [1.0, 2.0, math.inf])
def test_rectangle_from_angular_density(model, p):
    for x, y in [(0.2, 5.0), (1.0, 1.0), (3.0, 0.5)]:
        assert model.rect_mass_angular(x, y, p) == pytest.approx(float(model.rect_mass(x, y)), abs=1e-10)


def test_symmetric_median_angle(model):
    for p in (1.0, 2.0, math.inf):
        assert float(model.angular_quantile(0.5, p)) == pytest.approx(math.pi / 4, abs=1e-10)


def test_row_integral_of_density_is_one(model):
    f = lambda u: float(model.lambda_density(u, 1.0))  # noqa: E731
    assert quad(f, 0.0, 1.0) + quad(f, 1.0, math.inf) == pytest.approx(1.0, abs=1e-9)


def test_newton_inversion_matches_closed_form(model):
    rng = np.random.default_rng(3)
    u, w = rng.random((2, 2000))
    from angmeas import _kernels

    s = -np.log1p(-u)
    e = -np.log1p(-w)
    v = model._v_from_logq(s, _kernels.logistic_inverse(s, e, model.alpha, 1e-13))
    assert np.allclose(v, model.conditional_inverse_exact(u, w), rtol=1e-10, atol=1e-13)


def test_sampler_margins_and_kendall_tau(model):
    u = model.sample(20000, 5)
    assert stats.kstest(u[:, 0], "uniform").pvalue > 1e-3
    assert stats.kstest(u[:, 1], "uniform").pvalue > 1e-3
    # Kendall's tau of the logistic family is 1 - alpha
    tau = stats.kendalltau(u[:, 0], u[:, 1]).statistic
    assert tau == pytest.approx(0.5, abs=0.02)


def test_sampler_agrees_with_frailty_construction(model):
    a = model.sample(5000, 1)
    b = model.sample_stable(5000, 2)
    m = np.maximum
    assert stats.ks_2samp(m(a[:, 0], a[:, 1]), m(b[:, 0], b[:, 1])).pvalue > 1e-3


def test_sampler_is_deterministic(model):
    assert np.array_equal(model.sample(100, 9), model.sample(100, 9))


def test_swapped_model_mirrors(model):
    sm = SwappedModel(LogisticModel(0.3))
    base = LogisticModel(0.3)
    assert float(sm.lambda_density(0.5, 2.0)) == float(base.lambda_density(2.0, 0.5))
    assert sm.swapped() is base or sm.swapped() == base


def test_bias_functional_nonnegative(model):
    d = model.bias_functional_D(2.0, 0.01)
    assert d >= 0.0


def test_quadrature_failure_is_reported():
    with pytest.raises(QuadratureError):
        quad(lambda x: 1.0 / x, 0.0, 1.0, what="divergent")
