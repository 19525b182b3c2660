import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from angmeas.empirical import (
    EmptyTail,
    Expansion,
    HatRegion,
    SampleParseError,
    TieError,
    count_in_hat,
    corollary1_gap,
    decompose,
    from_uniform,
    jump_angles,
    parse_sample,
    phi_hat,
    phi_true,
    q_hat,
    q_hat_inverse,
    quantile_expansion_gap,
    read_sample,
    scaled_prob_C,
    standardize,
    tail_functions,
    wasserstein1,
    zs_processes,
)
from angmeas.geometry import HALF_PI, polar, tan_angle, x_p, y_p, y_p_prime
from angmeas.model import LogisticModel

from .conftest import P_VALUES

THETAS = np.linspace(0.0, HALF_PI, 17)


# -- estimator on the four-point example ------------------------------------


def test_hand_standardization(hand):
    assert np.allclose(hand.zhat[:, 0], [4.0, 2.0, 4.0 / 3.0, 1.0])
    assert np.array_equal(hand.tail_ranks[:, 0], [1, 2, 3, 4])


def test_hand_estimates(hand):
    # qualifying tail-rank pairs for k = 2, max-norm: (1,1), (2,3), (3,2)
    assert phi_hat(HALF_PI, hand, 2, math.inf) == 1.5
    assert phi_hat(math.pi / 4, hand, 2, math.inf) == 1.0
    assert q_hat(math.pi / 4, hand, 2, math.inf) == pytest.approx(2.0 / 3.0)
    assert phi_hat(0.0, hand, 2, math.inf) == 0.0


@pytest.mark.parametrize("p", P_VALUES)
def test_k_equal_n_admits_everything(sample200, p):
    assert phi_hat(HALF_PI, sample200, 200, p) == 1.0


def test_rejects_bad_k(hand):
    with pytest.raises(ValueError):
        phi_hat(1.0, hand, 5, 2)
    with pytest.raises(ValueError):
        phi_hat(1.0, hand, 0, 2)


def _phi_hat_bruteforce(sample, k, p, theta):
    """Count rank points with norm at least n/k and angle at most theta."""
    r, ang = polar(sample.zhat[:, 0], sample.zhat[:, 1], p)
    n = sample.n
    keep = (r >= (n / k) * (1 - 1e-12)) & (ang <= theta + 1e-12)
    return np.count_nonzero(keep) / k


@given(st.integers(0, 10_000), st.integers(5, 60), st.sampled_from(P_VALUES))
def test_phi_hat_matches_polar_definition(seed, k, p):
    s = from_uniform(LogisticModel(0.5).sample(120, seed))
    got = phi_hat(THETAS, s, k, p)
    want = [_phi_hat_bruteforce(s, k, p, th) for th in THETAS]
    assert np.allclose(got, want)


@given(st.integers(0, 10_000), st.sampled_from(P_VALUES))
def test_rank_invariance(seed, p):
    u = LogisticModel(0.6).sample(80, seed)
    a = standardize(u)
    b = standardize(np.column_stack([np.exp(3 * u[:, 0]), np.log(u[:, 1]) ** 3]))
    assert np.array_equal(phi_hat(THETAS, a, 10, p), phi_hat(THETAS, b, 10, p))


@given(st.integers(0, 10_000), st.sampled_from(P_VALUES))
def test_phi_hat_is_a_nondecreasing_step_function(seed, p):
    s = from_uniform(LogisticModel(0.5).sample(150, seed))
    v = phi_hat(np.linspace(0, HALF_PI, 200), s, 15, p)
    assert np.all(np.diff(v) >= 0)
    assert np.allclose(v * 15, np.round(v * 15))


def test_jump_angles_match_phi_hat(sample200):
    ang = jump_angles(sample200, 20, 2)
    assert ang.size == round(phi_hat(HALF_PI, sample200, 20, 2) * 20)


# -- data ingestion --------------------------------------------------------


def test_parse_header_and_delimiters():
    pts = parse_sample("a;b\n1;2\n3\t4\n\n# note\n5 6\n")
    assert pts.tolist() == [[1, 2], [3, 4], [5, 6]]


def test_parse_reports_line_numbers():
    with pytest.raises(SampleParseError, match="line 3"):
        parse_sample("x,y\n1,2\n3,oops\n")
    with pytest.raises(SampleParseError, match="line 2: expected 2 columns"):
        parse_sample("1,2\n3,4,5\n")
    with pytest.raises(SampleParseError):
        parse_sample("1,nan\n")


def test_ties_rejected():
    with pytest.raises(TieError, match="lines 1 and 3"):
        parse_sample("1,2\n2,3\n1,4\n")
    with pytest.raises(TieError):
        standardize(np.array([[1.0, 2.0], [1.0, 3.0]]))


def test_read_sample(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("x,y\n4,4\n3,2\n2,3\n1,1\n")
    s = read_sample(f)
    assert phi_hat(HALF_PI, s, 2, math.inf) == 1.5


# -- marginal processes ------------------------------------------------------


def test_int_w_over_x_matches_quadrature(sample200):
    tf = tail_functions(sample200, 20)
    for j in (0, 1):
        br = tf.breaks(j)
        for b in (0.37, 2.0, 7.5, 10.0, 14.0):
            pts = br[(br > 0) & (br < b)]
            edges = np.concatenate([[0.0], pts, [b]])
            ref = sum(
                integrate.quad(lambda x: float(tf.w(j, x)) / x, lo, hi, epsabs=1e-13)[0]
                for lo, hi in zip(edges[:-1], edges[1:])
                if hi > lo
            )
            assert tf.int_w_over_x(j, b) == pytest.approx(ref, abs=1e-9)


@pytest.mark.parametrize("p", P_VALUES)
def test_zs_identities(sample200, p):
    k = 20
    tf = tail_functions(sample200, k)
    N = tf.scale
    x = np.random.default_rng(1).uniform(0, N, 300)
    for th in (0.4, math.pi / 4, 1.1):
        t = tan_angle(th)
        z, s = zs_processes(x, th, sample200, k, p, tf)
        g = tf.gamma(0, x / N)
        assert np.allclose(N * tf.quantile(1, g * t), x * t + z / tf.sqk, rtol=1e-12, atol=1e-12)
        # the curve identity concerns x > 1, where y_p(x) is finite
        on = x > 1.0
        lhs = N * tf.quantile(1, y_p(N * g[on], p) / N)
        rhs = y_p(x[on], p) + s[on] / tf.sqk
        fin = np.isfinite(lhs)
        assert np.array_equal(fin, np.isfinite(rhs))
        assert np.allclose(lhs[fin], rhs[fin], rtol=1e-12, atol=1e-12)


# -- estimated region and decomposition ---------------------------------------


@pytest.mark.parametrize("p", P_VALUES)
def test_region_count_equals_estimator(p):
    s = from_uniform(LogisticModel(0.5).sample(50, 4))
    for th in THETAS:
        assert count_in_hat(s, 10, th, p) == phi_hat(th, s, 10, p)


def test_prob_mass_matches_density_quadrature(model):
    s = from_uniform(model.sample(40, 2))
    k = 8
    tf = tail_functions(s, k)
    reg = HatRegion(tf, 0.9, 2.0)
    lo, hi, b = reg._columns()
    N = tf.scale
    ref = 0.0
    for a0, a1, top in zip(lo, hi, b):
        if a1 > a0 and top > 0:
            v = min(top / N, 1.0)
            ref += integrate.dblquad(
                lambda y, x: float(model.joint_density_c(x, y)), a0 / N, a1 / N, 0.0, v, epsabs=1e-13
            )[0]
    assert reg.prob_mass(model) == pytest.approx(N * ref, abs=1e-9)


@pytest.mark.parametrize("p,theta", [(2.0, 0.9), (1.0, 1.3), (math.inf, 0.5), (2.0, HALF_PI)])
def test_lambda_mass_matches_column_integral(model, p, theta):
    s = from_uniform(model.sample(40, 2))
    k = 8
    tf = tail_functions(s, k)
    reg = HatRegion(tf, theta, p)
    N = tf.scale

    def col(x):
        b = float(reg.bound(x))
        return 1.0 if math.isinf(b) else float(model.col_density(x, b))

    edges = np.unique(np.concatenate([tf.breaks(0), [N]]))
    ref = sum(integrate.quad(col, a, b, epsabs=1e-13, limit=200)[0] for a, b in zip(edges[:-1], edges[1:]))
    far = np.unique(np.concatenate([[N], np.geomspace(N, 1e4, 400)]))
    ref += sum(integrate.quad(col, a, b, epsabs=1e-13, limit=200)[0] for a, b in zip(far[:-1], far[1:]))
    ref += integrate.quad(col, 1e4, np.inf, epsabs=1e-13)[0]
    assert reg.lambda_mass(model) == pytest.approx(ref, abs=1e-7)


@pytest.mark.parametrize("p", P_VALUES)
def test_telescoping(sample500, model, p):
    tf = tail_functions(sample500, 50)
    for th in (math.pi / 8, math.pi / 4, 3 * math.pi / 8, HALF_PI):
        row = decompose(th, sample500, 50, p, model, tf)
        assert abs(row.residual) < 1e-8


def test_scaled_prob_converges_to_phi(model):
    # (n/k) P((k/n) C) -> Phi as k/n -> 0
    phi = phi_true(model, 2.0, 1.0)
    gaps = [abs(scaled_prob_C(model, 2.0, n, 10, 1.0) - phi) for n in (100, 1000, 10000)]
    assert gaps[0] > gaps[1] > gaps[2]


# -- expansion -----------------------------------------------------------------


def _expansion_bruteforce(sample, k, p, model, theta):
    tf = tail_functions(sample, k)
    lam = model.lambda_density
    t = math.tan(theta)
    xp = float(x_p(theta, p))
    ex = Expansion(sample, k, p, model)
    out = float(ex.stochastic_term(theta))
    w1 = lambda x: float(tf.w(0, x))  # noqa: E731
    w2 = lambda y: float(tf.w(1, y))  # noqa: E731
    opts = dict(epsabs=1e-12, limit=2000)
    b1 = tf.breaks(0)[1:]
    b2 = tf.breaks(1)[1:]
    pts = np.unique(np.concatenate([b1[b1 < xp], b2[b2 < xp * t] / t, [xp]]))
    edges = np.concatenate([[0.0], pts])
    f = lambda x: float(lam(x, x * t)) * (w1(x) * t - w2(x * t))  # noqa: E731
    out += sum(integrate.quad(f, a, b, **opts)[0] for a, b in zip(edges[:-1], edges[1:]) if b > a)
    if p == math.inf:
        out -= w1(1.0) * integrate.quad(lambda y: float(lam(1.0, y)), 1.0, max(1.0, t))[0]
        out -= w2(1.0) * integrate.quad(lambda x: float(lam(x, 1.0)), max(1.0, 1 / t), np.inf)[0]
        return out
    g = lambda x: float(lam(x, y_p(x, p))) * (float(y_p_prime(x, p)) * w1(x) - w2(float(y_p(x, p))))  # noqa: E731
    ys = b2[(b2 > 1.0) & (b2 < y_p(xp, p))]
    knots = np.unique(np.concatenate([[xp], b1[b1 > xp], y_p(ys, p)]))
    knots = knots[knots >= xp]
    far = np.geomspace(knots[-1], knots[-1] * 1e4, 60)
    knots = np.unique(np.concatenate([knots, far]))
    out += sum(integrate.quad(g, a, b, **opts)[0] for a, b in zip(knots[:-1], knots[1:]))
    out += integrate.quad(g, knots[-1], np.inf, **opts)[0]
    return out


@pytest.mark.parametrize("p", [1.0, 2.0, 3.5, math.inf])
@pytest.mark.parametrize("theta", [0.3, math.pi / 4, 1.2])
def test_expansion_matches_direct_quadrature(sample200, model, p, theta):
    ex = Expansion(sample200, 20, p, model)
    assert float(ex(theta)) == pytest.approx(_expansion_bruteforce(sample200, 20, p, model, theta), abs=1e-7)


def test_expansion_vectorized_equals_scalar(sample200, model):
    ex = Expansion(sample200, 20, 2.0, model)
    vec = ex(THETAS)
    assert np.allclose(vec, [float(ex(t)) for t in THETAS], rtol=0, atol=1e-12)
    assert float(ex(0.0)) == 0.0


@pytest.mark.parametrize("p", P_VALUES)
def test_symmetry_identity(sample500, model, p):
    e = Expansion(sample500, 50, p, model)
    es = Expansion(sample500.swapped(), 50, p, model.swapped())
    for th in (math.pi / 3, 3 * math.pi / 8):
        lhs = float(e(math.pi / 4)) + float(es(math.pi / 4)) - float(es(HALF_PI - th))
        assert lhs == pytest.approx(float(e(th)), abs=1e-6)


# -- normalized measure ----------------------------------------------------------


def test_corollary1_gap_vanishes_at_right_end(sample500, model):
    assert corollary1_gap(HALF_PI, sample500, 50, 1.0, model) == 0.0


@given(st.floats(0.001, 0.999))
def test_quantile_inverse_is_left_continuous(u):
    s = from_uniform(LogisticModel(0.5).sample(300, 8))
    q = q_hat_inverse(u, s, 30, 2.0)
    assert q_hat(q, s, 30, 2.0) >= u - 1e-12
    # comparisons carry a 1e-12 relative slack; distinct rank angles differ by far more than 1e-9
    assert q_hat(q - 1e-9, s, 30, 2.0) < u


def test_quantile_gap_rejects_endpoints(sample200, model):
    with pytest.raises(ValueError):
        quantile_expansion_gap(np.array([0.0, 0.5]), sample200, 20, 2.0, model)


@given(st.integers(0, 10_000), st.integers(1, 40), st.sampled_from(P_VALUES))
def test_tail_never_empty(seed, k, p):
    # the point with first tail rank 1 always passes the radius cut
    s = from_uniform(LogisticModel(0.5).sample(40, seed))
    assert phi_hat(HALF_PI, s, k, p) >= 1.0 / k


def test_empty_tail_guard():
    with pytest.raises(EmptyTail):
        q_hat_inverse(0.5, _NoTail(), 1, 2.0)


class _NoTail:
    n = 3
    tail_ranks = np.array([[5, 5], [6, 6], [7, 7]])


def test_wasserstein_matches_grid_integral(sample500, model):
    grid = np.linspace(0, HALF_PI, 3201)
    mid = 0.5 * (grid[1:] + grid[:-1])
    qh = phi_hat(mid, sample500, 50, 2.0) / phi_hat(HALF_PI, sample500, 50, 2.0)
    q = phi_true(model, 2.0, mid) / phi_true(model, 2.0, HALF_PI)
    # midpoint rule; each jump of Qhat costs at most its height times the cell width
    ref = float(np.sum(np.abs(qh - q)) * (grid[1] - grid[0]))
    assert wasserstein1(sample500, 50, 2.0, model) == pytest.approx(ref, abs=1e-3)
