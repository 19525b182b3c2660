import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from angmeas.empirical import phi_true
from angmeas.geometry import HALF_PI
from angmeas.limit import (
    DEFAULT_ANGLES,
    GRID_ANCHORS,
    NoiseField,
    ResolutionError,
    alpha_path,
    alpha_variance,
    build_partition,
    grid_edges,
    marginal_W,
    simulate_field,
    simulate_reduced,
    w_lambda_from_levels,
    w_lambda_of_set,
    z_from_grids,
    z_p_limit,
    z_weights,
)
from angmeas.limit import _log_weights
from angmeas.model import quad

SMALL = dict(M=50.0, resolution=60)


@pytest.fixture(scope="module")
def part_small(model):
    return build_partition(model, 1.0, **SMALL)


def test_grid_edges_contain_anchors():
    e = grid_edges(50.0, 400)
    assert e[0] == 0.0 and e[-1] == 50.0
    assert np.all(np.diff(e) > 0)
    for a in GRID_ANCHORS:
        assert a in e
    with pytest.raises(ValueError):
        e[1] = 3.0  # cached arrays are read-only


@pytest.mark.parametrize("p", [1.0, 2.0, math.inf])
def test_partition_margins_and_levels(model, p):
    part = build_partition(model, p, **SMALL)
    width = np.diff(part.edges)
    ok = part.col >= 0
    assert np.allclose(np.bincount(part.col[ok], part.mass[ok], minlength=60), width, atol=1e-8)
    for li, th in enumerate(part.angles):
        mass = part.mass[(part.level >= 0) & (part.level <= li)].sum()
        assert mass == pytest.approx(phi_true(model, p, th), abs=1e-8)


def test_too_small_truncation_rejected(model):
    with pytest.raises(ResolutionError):
        build_partition(model, 1.0, M=1.5, resolution=20)


def test_empty_set_and_determinism(model):
    f1 = simulate_field(model, 1.0, seed=3, **SMALL)
    f2 = simulate_field(model, 1.0, seed=3, **SMALL)
    assert np.array_equal(f1.gaussians, f2.gaussians)
    assert w_lambda_of_set(f1, 0.0, 1.0) == 0.0
    assert marginal_W(f1, 1, 0.0) == 0.0
    assert z_p_limit(f1, 0.0, 1.0, model) == 0.0
    with pytest.raises(ValueError):
        marginal_W(f1, 1, 51.0)


def test_additivity_over_levels(model):
    f = simulate_field(model, 2.0, seed=1, **SMALL)
    part = f.partition
    per_level = np.bincount(part.level[part.level >= 0], f.gaussians[part.level >= 0], minlength=len(part.angles))
    assert np.allclose(np.cumsum(per_level), [w_lambda_of_set(f, th, 2.0) for th in part.angles], atol=1e-12)
    # columns partition the band below M: W1(M) is the sum of column Gaussians
    assert marginal_W(f, 1, 50.0) == pytest.approx(f.gaussians[part.col >= 0].sum(), abs=1e-12)


@given(st.floats(-5.0, 5.0))
def test_linearity_in_the_noise(c):
    from angmeas.model import LogisticModel

    model = LogisticModel(0.5)
    f = simulate_field(model, 1.0, seed=5, **SMALL)
    g = NoiseField(f.partition, c * f.gaussians, c * f.columns, c * f.rows, c * f.levels)
    for th in (math.pi / 4, HALF_PI):
        assert z_p_limit(g, th, 1.0, model) == pytest.approx(c * z_p_limit(f, th, 1.0, model), abs=1e-12)
        assert w_lambda_of_set(g, th, 1.0) == pytest.approx(c * w_lambda_of_set(f, th, 1.0), abs=1e-12)


def test_reduction_independent_of_chunking(part_small):
    a = simulate_reduced(part_small, 42, range(10), chunk=1)
    b = simulate_reduced(part_small, 42, range(10), chunk=7)
    c = simulate_reduced(part_small, 42, range(5, 10), chunk=32)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)
    assert np.array_equal(a[2][5:], c[2])


def test_log_weights_integrate_linear_interpolant():
    edges = grid_edges(50.0, 40)
    rng = np.random.default_rng(0)
    W = np.concatenate([[0.0], np.cumsum(rng.standard_normal(40))])
    for b in (0.7, 5.0, 50.0, 80.0):
        f = lambda x: (np.interp(x, edges, W) if x <= 50.0 else W[-1]) / x  # noqa: E731
        pts = edges[(edges > 0) & (edges < b)]
        ref = quad(f, 0.0, min(b, 50.0), points=pts, limit=1000)
        if b > 50.0:
            ref += W[-1] * math.log(b / 50.0)
        assert _log_weights(edges, b) @ W == pytest.approx(ref, rel=1e-9, abs=1e-10)


def test_max_norm_drift_at_diagonal(model):
    # at pi/4 the W1 boundary term vanishes and only -W2(1) int_1^inf lambda(x, 1) dx remains
    edges = grid_edges(50.0, 60)
    a1, a2 = z_weights(model, math.inf, 50.0, 60, math.pi / 4)
    ray = float(model.lambda_density(1.0, 1.0)) * _log_weights(edges, 1.0)
    assert np.allclose(a1, ray, atol=1e-14)
    extra = a2 + ray
    i1 = int(np.flatnonzero(edges == 1.0)[0])
    tail = quad(lambda x: float(model.lambda_density(x, 1.0)), 1.0, math.inf)
    assert extra[i1] == pytest.approx(-tail, rel=1e-10)
    assert np.allclose(np.delete(extra, i1), 0.0, atol=1e-14)


def _discrete_var(model, part, theta, with_set):
    """Exact variance of the grid functional implied by the field's covariances."""
    e = np.asarray(part.edges)
    a1, a2 = z_weights(model, part.p, part.M, part.resolution, theta, part.grading)
    K11 = np.minimum.outer(e, e)
    K12 = model.rect_mass(e[:, None], e[None, :])
    v = a1 @ K11 @ a1 + a2 @ K11 @ a2 + 2 * a1 @ K12 @ a2
    if not with_set:
        return float(v)
    li = part.level_index(theta)
    inC = (part.level >= 0) & (part.level <= li)
    c1 = np.array([part.mass[inC & (part.col >= 0) & (part.col < i)].sum() for i in range(e.size)])
    c2 = np.array([part.mass[inC & (part.row >= 0) & (part.row < i)].sum() for i in range(e.size)])
    return float(v + 2 * a1 @ c1 + 2 * a2 @ c2 + part.mass[inC].sum())


@pytest.mark.parametrize("p", [1.0, 2.0, math.inf])
def test_weights_reproduce_variance_oracle(model, p):
    part = build_partition(model, p, 50.0, 400)
    for th in (math.pi / 4, HALF_PI):
        assert _discrete_var(model, part, th, False) == pytest.approx(alpha_variance(th, p, model, False), rel=2e-3)
        assert _discrete_var(model, part, th, True) == pytest.approx(alpha_variance(th, p, model), rel=2e-3)


def test_marginal_variance_monte_carlo(part_small):
    cols, rows, levels = simulate_reduced(part_small, 7, range(4000))
    i = int(np.flatnonzero(part_small.edges == 2.0)[0])
    W1 = np.cumsum(cols, axis=1)[:, i - 1]
    se = np.std(W1**2) / math.sqrt(W1.size)
    assert abs(np.mean(W1**2) - 2.0) < 3.5 * se
    w = w_lambda_from_levels(levels, part_small, math.pi / 4)
    se = np.std(w**2) / math.sqrt(w.size)
    assert abs(np.mean(w**2) - phi_true(part_small.model, 1.0, math.pi / 4)) < 3.5 * se


def test_alpha_path_composes(model):
    f = simulate_field(model, 1.0, seed=2, **SMALL)
    path = alpha_path(f, [0.0] + list(DEFAULT_ANGLES), 1.0, model)
    assert path.alpha[0] == 0.0
    W1, W2 = f.W1_grid, f.W2_grid
    z = z_from_grids(W1, W2, model, 1.0, 50.0, 60, HALF_PI)
    assert path.z[-1] == pytest.approx(z, abs=1e-12)
    assert path.alpha[-1] == pytest.approx(z + w_lambda_of_set(f, HALF_PI, 1.0), abs=1e-12)


def test_variance_oracle_zero_angle(model):
    assert alpha_variance(0.0, 1.0, model) == 0.0
