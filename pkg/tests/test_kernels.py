import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats
from scipy.spatial.transform import Rotation

from predrec.kernels import (
    DENSITY_FLOOR,
    AngularGaussianKernel,
    BivariateGaussianKernel,
    GaussianIsoKernel,
    MarkedPPKernel,
    angular_sigma,
    conditional_mark_component,
    correlation_is_pd,
    eval_angular_gaussian,
    eval_gaussian_bivariate_full,
    eval_gaussian_iso,
    eval_marked_pp_kernel,
    marked_covariance,
    rotation_matrix,
)
from predrec.quadrature import make_sphere_grid, trapezoid_weights
from predrec.sampling import MarkedPPPrior, SphereTimesUniform, rng_stream, sample_uniform_sphere

unit_vectors = st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)).filter(
    lambda v: np.linalg.norm(v) > 0.1).map(lambda v: np.array(v) / np.linalg.norm(v))


# ---------------------------------------------------------------- gaussian

def test_iso_examples():
    assert eval_gaussian_iso([0.3], [0.3], 0.5) == pytest.approx((2 * np.pi * 0.5) ** -0.5, rel=1e-14)
    assert eval_gaussian_iso([0.0, 0.0], [0.0, 0.0], 1.0) == pytest.approx(1 / (2 * np.pi), rel=1e-14)
    assert eval_gaussian_iso([1.0], [0.0], 0.5) == pytest.approx(stats.norm.pdf(1.0, 0, np.sqrt(0.5)), rel=1e-13)


def test_iso_errors():
    with pytest.raises(ValueError):
        eval_gaussian_iso([0.0, 1.0], [0.0], 1.0)
    with pytest.raises(ValueError):
        eval_gaussian_iso([0.0], [0.0], 0.0)


def test_iso_integrates_to_one():
    x = np.linspace(-12, 12, 4001)
    w = trapezoid_weights(x)
    assert np.sum(eval_gaussian_iso(x[:, None], [0.7], 0.5) * w) == pytest.approx(1.0, rel=1e-4)
    xs = x[::4]
    w1 = trapezoid_weights(xs)
    X1, X2 = np.meshgrid(xs, xs, indexing="ij")
    v = eval_gaussian_iso(np.stack([X1, X2], -1), [0.5, -1.0], 0.5)
    assert np.sum(v * np.outer(w1, w1)) == pytest.approx(1.0, rel=1e-4)


def test_bivariate_examples():
    assert eval_gaussian_bivariate_full([2.0, 3.0], [2.0, 3.0, 1.0, 1.0, 0.0]) == pytest.approx(1 / (2 * np.pi))
    a = eval_gaussian_bivariate_full([0.4, -1.2], [0.0, 0.5, 2.0, 3.0, 0.0])
    b = stats.norm.pdf(0.4, 0, np.sqrt(2.0)) * stats.norm.pdf(-1.2, 0.5, np.sqrt(3.0))
    assert a == pytest.approx(b, rel=1e-13)


def test_bivariate_explicit_inverse_oracle():
    x = np.array([1.0, 2.0])
    v1, v2, rho = 1.0, 4.0, 0.5
    c = rho * np.sqrt(v1 * v2)
    det = v1 * v2 - c * c
    inv = np.array([[v2, -c], [-c, v1]]) / det
    expected = np.exp(-0.5 * x @ inv @ x) / (2 * np.pi * np.sqrt(det))
    got = eval_gaussian_bivariate_full(x, [0.0, 0.0, v1, v2, rho])
    assert got == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("rho", [1.0, -1.0, 1.5])
def test_bivariate_rejects_non_pd(rho):
    with pytest.raises(ValueError):
        eval_gaussian_bivariate_full([0.0, 0.0], [0, 0, 1, 1, rho])


def test_bivariate_integrates_to_one():
    x = np.linspace(-15, 15, 1201)
    w = trapezoid_weights(x)
    X = np.stack(np.meshgrid(x, x, indexing="ij"), -1)
    v = eval_gaussian_bivariate_full(X, [1.0, -0.5, 2.0, 1.5, 0.7])
    assert np.sum(v * np.outer(w, w)) == pytest.approx(1.0, rel=1e-4)


def test_bivariate_matrix_matches_pointwise(rng):
    k = BivariateGaussianKernel()
    U = np.column_stack([rng.uniform(-5, 15, 300), rng.uniform(0, 20, 300), rng.uniform(0.01, 7, 300),
                         rng.uniform(0.01, 15, 300), rng.uniform(0, 0.99, 300)])
    X = rng.uniform(-8, 23, (200, 2))
    M = k.density_matrix(X, U)
    P = np.stack([eval_gaussian_bivariate_full(x, U) for x in X])
    big = P > 1e-200
    np.testing.assert_allclose(M[big], P[big], rtol=1e-9)
    assert np.all(M >= DENSITY_FLOOR)


# ---------------------------------------------------------------- sphere

def test_rotation_identity_at_north_pole():
    np.testing.assert_allclose(rotation_matrix([0.0, 0.0, 1.0]), np.eye(3), atol=1e-15)


def test_rotation_at_x_axis():
    # theta = pi/2, phi = 0 substituted into the displayed matrix
    expected = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])
    np.testing.assert_allclose(rotation_matrix([1.0, 0.0, 0.0]), expected, atol=1e-15)


@given(unit_vectors)
def test_rotation_orthogonal_and_maps_pole(mu):
    q = rotation_matrix(mu)
    np.testing.assert_allclose(q.T @ q, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(q @ [0.0, 0.0, 1.0], mu, atol=1e-12)


def test_rotation_rejects_non_unit():
    with pytest.raises(ValueError):
        rotation_matrix([1.0, 1.0, 0.0])


@given(unit_vectors, unit_vectors)
def test_angular_beta_one_is_uniform(x, mu):
    assert abs(eval_angular_gaussian(x, mu, 1.0) - 1 / (4 * np.pi)) < 1e-12


def _dense_angular(x, mu, beta):
    s = angular_sigma(mu, beta)
    return np.linalg.det(s) ** -0.5 * (x @ np.linalg.inv(s) @ x) ** -1.5 / (4 * np.pi)


@pytest.mark.parametrize("mu", [[0.0, 0.0, 1.0], [0.6, 0.0, 0.8], [0.0, -1.0, 0.0]])
def test_angular_dense_oracle(mu):
    mu = np.array(mu)
    assert eval_angular_gaussian(mu, mu, 0.5) == pytest.approx(_dense_angular(mu, mu, 0.5), rel=1e-12)
    x = sample_uniform_sphere(rng_stream(0, 9), 20)
    for xi in x:
        assert eval_angular_gaussian(xi, mu, 0.3) == pytest.approx(_dense_angular(xi, mu, 0.3), rel=1e-10)


def test_angular_surface_integral():
    g = make_sphere_grid(400, 800)
    mu = np.array([0.48, 0.6, 0.64])
    v = eval_angular_gaussian(g.points, mu / np.linalg.norm(mu), 0.3)
    assert np.sum(v * g.cell_weights) == pytest.approx(1.0, abs=1e-4)


@given(unit_vectors, unit_vectors, st.floats(0.05, 3.0), st.integers(0, 10_000))
def test_angular_rotation_equivariance(x, mu, beta, seed):
    R = Rotation.random(random_state=seed).as_matrix()
    a = eval_angular_gaussian(x, mu, beta)
    b = eval_angular_gaussian(R @ x, R @ mu, beta)
    assert abs(a - b) <= 1e-10 * max(1.0, abs(a))


def test_angular_rejects_bad_beta():
    with pytest.raises(ValueError):
        eval_angular_gaussian([0, 0, 1.0], [0, 0, 1.0], 0.0)


def test_angular_kernel_matrix_and_fixed_beta(rng):
    k = AngularGaussianKernel()
    U = SphereTimesUniform((0.05, 0.5)).sample(50, rng)
    X = sample_uniform_sphere(rng, 30)
    M = k.density_matrix(X, U)
    np.testing.assert_allclose(M[3], eval_angular_gaussian(X[3], U[:, :3], U[:, 3]), rtol=1e-13)
    kf = AngularGaussianKernel(0.2)
    assert kf.dim_u == 3
    np.testing.assert_allclose(kf(X[0], U[:, :3]), eval_angular_gaussian(X[0], U[:, :3], 0.2))


# ---------------------------------------------------------------- marked point process

def _random_marked_point(rng, reduced=False):
    while True:
        r = np.zeros(3) if reduced else rng.uniform(-0.9, 0.9, 3)
        if correlation_is_pd(r):
            return np.concatenate([rng.uniform(-1, 1, 3), rng.uniform(np.log(0.2), np.log(3), 3), r])


def test_marked_example_value():
    v = eval_marked_pp_kernel([100.0, 100.0, 3.0], np.zeros(9))
    assert v == pytest.approx((2 * np.pi) ** -1.5 * 16, rel=1e-14)


def test_marked_integrates_to_one_on_normalized_domain():
    point = np.array([0.3, -0.2, 1.0, np.log(0.8), np.log(0.5), np.log(0.6), 0.3, -0.2, 0.1])
    n = 160
    v = (np.arange(n) + 0.5) / n                      # s / 200 midpoints
    t = np.linspace(-6.0, 7.0, 400)                   # log(mark - 2) nodes
    wt = trapezoid_weights(t)
    V1, V2, Tm = np.meshgrid(v, v, t, indexing="ij")
    pts = np.column_stack([200 * V1.ravel(), 200 * V2.ravel(), 2 + np.exp(Tm.ravel())])
    dens = eval_marked_pp_kernel(pts, point)
    # d mark = (mark - 2) d t ; d s_i / 200 = d v_i
    w = np.multiply.outer(np.full((n, n), 1.0 / n ** 2), wt).ravel() * np.exp(Tm.ravel())
    assert np.sum(dens * w) == pytest.approx(1.0, rel=1e-4)


def test_marked_bounded_near_mark_offset():
    point = np.zeros(9)
    marks = 2 + np.logspace(-12, 0, 30)
    v = eval_marked_pp_kernel(np.column_stack([np.full(30, 80.0), np.full(30, 90.0), marks]), point)
    assert np.all(np.isfinite(v * (marks - 2)))
    assert np.max(v * (marks - 2)) < 10.0


def test_marked_rejects_invalid():
    with pytest.raises(ValueError):
        eval_marked_pp_kernel([200.0, 10.0, 5.0], np.zeros(9))
    with pytest.raises(ValueError):
        eval_marked_pp_kernel([20.0, 10.0, 2.0], np.zeros(9))
    bad = np.zeros(9)
    bad[6:9] = [0.9, 0.9, -0.9]
    with pytest.raises(ValueError):
        eval_marked_pp_kernel([20.0, 10.0, 5.0], bad)


def test_conditional_diagonal_independent_of_location():
    point = np.array([0.5, -0.5, 1.2, 0.1, 0.2, np.log(0.7), 0.0, 0.0, 0.0])
    for s in ([10.0, 20.0], [150.0, 190.0]):
        cm, cv, _ = conditional_mark_component(s, point)
        assert cm[0] == pytest.approx(1.2, abs=1e-14)
        assert cv[0] == pytest.approx(0.7, rel=1e-14)


def test_conditional_schur_complement_oracle(rng):
    for _ in range(10):
        point = _random_marked_point(rng)
        cov = marked_covariance(point)
        s = rng.uniform(5, 195, 2)
        za = np.log(s / 200 / (1 - s / 200))
        coef = np.linalg.solve(cov[:2, :2], cov[:2, 2])
        cm, cv, _ = conditional_mark_component(s, point)
        assert cm[0] == pytest.approx(point[2] + coef @ (za - point[:2]), rel=1e-12, abs=1e-12)
        assert cv[0] == pytest.approx(cov[2, 2] - cov[2, :2] @ coef, rel=1e-12)


def test_marked_factorization_identity(rng):
    for _ in range(20):
        point = _random_marked_point(rng)
        s = rng.uniform(1, 199, 2)
        mark = 2 + np.exp(rng.normal(1.0, 1.0))
        cm, cv, marg = conditional_mark_component(s, point)
        y = np.log(mark - 2)
        cond = stats.norm.pdf(y, cm[0], np.sqrt(cv[0])) / (mark - 2)
        joint = eval_marked_pp_kernel([s[0], s[1], mark], point)
        assert marg[0] * cond == pytest.approx(joint, rel=1e-10)


def test_reduced_kernel_ignores_correlations(rng):
    point = _random_marked_point(rng)
    pinned = point.copy()
    pinned[6:9] = 0
    x = np.array([50.0, 70.0, 12.0])
    assert MarkedPPKernel(True)(x, point[None, :])[0] == pytest.approx(
        eval_marked_pp_kernel(x, pinned), rel=1e-13)


def test_marked_kernel_matrix_matches_function(rng):
    k = MarkedPPKernel()
    U = MarkedPPPrior().sample(40, rng)
    X = np.column_stack([rng.uniform(1, 199, (5, 2)), 2 + rng.exponential(10, 5)])
    M = k.density_matrix(X, U)
    for i, x in enumerate(X):
        np.testing.assert_allclose(M[i], np.maximum(eval_marked_pp_kernel(x, U), DENSITY_FLOOR), rtol=1e-12)


# ---------------------------------------------------------------- kernel objects

def test_iso_kernel_matrix_matches_pointwise(rng):
    k = GaussianIsoKernel(0.5, 2)
    U = rng.uniform(0, 10, (100, 2))
    X = rng.uniform(-2, 12, (30, 2))
    M = k.density_matrix(X, U)
    np.testing.assert_allclose(M[7], eval_gaussian_iso(X[7], U, 0.5), rtol=1e-10)
    np.testing.assert_allclose(k.mixture(X, U, np.ones(100)), M.sum(1), rtol=1e-12)


@given(st.lists(st.floats(-5, 5), min_size=9, max_size=9), st.booleans())
def test_unconstrained_round_trip(vals, reduced):
    vals = np.array(vals)
    vals[6:9] = np.clip(vals[6:9], -0.3, 0.3)
    if reduced:
        vals[6:9] = 0
    k = MarkedPPKernel(reduced)
    z = k.to_unconstrained(vals[None, :])
    np.testing.assert_allclose(k.from_unconstrained(z)[0], vals, atol=1e-12)
    b = BivariateGaussianKernel()
    u = np.array([[vals[0], vals[1], np.exp(vals[2]), np.exp(vals[3]), np.tanh(vals[4])]])
    np.testing.assert_allclose(b.from_unconstrained(b.to_unconstrained(u)), u, rtol=1e-12)


def test_is_valid_masks():
    b = BivariateGaussianKernel()
    U = np.array([[0, 0, 1, 1, 0.5], [0, 0, -1, 1, 0], [0, 0, 1, 1, 1.0]])
    np.testing.assert_array_equal(b.is_valid(U), [True, False, False])
    a = AngularGaussianKernel()
    np.testing.assert_array_equal(a.is_valid([[0, 0, 1, 0.2], [0, 0, 1, -0.1]]), [True, False])
