import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from celf.estimator import (
    MAP_CHOLESKY,
    MINIMUM_NORM,
    CelfModel,
    Hyperparameters,
    posterior_covariance,
    predict_power,
    predict_shadowing,
    select_solver,
    solve_map_cholesky,
    solve_minimum_norm,
    train,
)
from celf.geometry import Link, PixelGrid, Point2D, build_weight_matrix, grid_from_links
from celf.pathloss import LogDistanceModel, fading_losses
from celf.prior import FieldPrior, build_covariance
from conftest import random_links


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def dense_map_oracle(W, z, C, alpha):
    W = np.asarray(W)
    return np.linalg.inv(W.T @ W + alpha * np.linalg.inv(C)) @ W.T @ z


def instance(rng, L, cols, rows, delta=1.5, density=0.3):
    """Random sparse-ish nonnegative W and a prior covariance from a pixel grid."""
    grid = PixelGrid(Point2D(0, 0), 1.0, cols, rows)
    C = build_covariance(FieldPrior(2.0, delta, grid))
    W = rng.uniform(0.1, 1.0, (L, grid.n_pixels)) * (rng.random((L, grid.n_pixels)) < density)
    W[np.arange(L), rng.integers(0, grid.n_pixels, L)] = 0.5  # no empty rows
    z = rng.normal(0, 3, L)
    return W, z, C


# -- solver kernels --------------------------------------------------------------


def test_identity_case_halves():
    v = np.arange(1.0, 6.0)
    I = np.eye(5)
    np.testing.assert_allclose(solve_map_cholesky(I, v, I, 1.0), v / 2, rtol=1e-14)
    np.testing.assert_allclose(solve_minimum_norm(I, v, I, 1.0), v / 2, rtol=1e-14)


def test_zero_data_gives_zero_field(rng):
    W, _, C = instance(rng, 12, 4, 4)
    assert np.all(solve_map_cholesky(W, np.zeros(12), C, 0.3) == 0)
    assert np.all(solve_minimum_norm(W, np.zeros(12), C, 0.3) == 0)


def test_dense_oracle_L30_M20(rng):
    W, z, C = instance(rng, 30, 5, 4)
    oracle = dense_map_oracle(W, z, C.matrix, 0.3)
    assert rel(solve_map_cholesky(W, z, C, 0.3), oracle) <= 1e-8
    assert rel(solve_minimum_norm(W, z, C, 0.3), oracle) <= 1e-8


def test_paths_agree_L10_M100(rng):
    W, z, C = instance(rng, 10, 10, 10, density=0.1)
    assert rel(solve_minimum_norm(W, z, C, 41.0), solve_map_cholesky(W, z, C, 41.0)) <= 1e-8


def test_single_link_scalar_form(rng):
    _, _, C = instance(rng, 1, 3, 3)
    w = np.zeros(9)
    w[[1, 4, 7]] = 1 / np.sqrt(3.0)
    z1, alpha = 2.5, 0.7
    expected = C.matrix @ w * z1 / (w @ C.matrix @ w + alpha)
    np.testing.assert_allclose(solve_minimum_norm(w[None, :], [z1], C, alpha), expected, rtol=1e-12)


def test_map_residual_M200(rng):
    from celf.estimator import _solve_map

    W, z, C = instance(rng, 250, 20, 10, density=0.05)
    _, report = _solve_map(sp.csr_array(W), z, C, 0.3)
    assert report.path == MAP_CHOLESKY
    assert report.relative_residual <= 1e-10
    assert not report.jittered


def test_alpha_must_be_positive():
    I = np.eye(2)
    with pytest.raises(ValueError):
        solve_map_cholesky(I, [1, 1], I, 0.0)
    with pytest.raises(ValueError):
        solve_minimum_norm(I, [1, 1], I, -1.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.01, 0.3, 41.0]))
def test_solver_paths_agree(seed, alpha):
    rng = np.random.default_rng(seed)
    L = int(rng.integers(5, 60))
    cols, rows = int(rng.integers(2, 9)), int(rng.integers(2, 9))
    W, z, C = instance(rng, L, cols, rows, delta=float(rng.uniform(0.5, 4)))
    a = solve_map_cholesky(W, z, C, alpha)
    b = solve_minimum_norm(W, z, C, alpha)
    assert rel(a, b) <= 1e-8


def test_shrinkage_in_alpha(rng):
    W, z, C = instance(rng, 25, 6, 6)
    Cinv = np.linalg.inv(C.matrix)
    norms, mses = [], []
    for alpha in [1e-3, 1e-2, 0.3, 1, 41, 1e3, 1e6]:
        p = solve_map_cholesky(W, z, C, alpha)
        norms.append(p @ Cinv @ p)
        mses.append(np.mean((z - W @ p) ** 2))
    assert all(a >= b * (1 - 1e-9) for a, b in zip(norms, norms[1:]))
    assert all(a <= b * (1 + 1e-9) for a, b in zip(mses, mses[1:]))
    assert np.linalg.norm(solve_map_cholesky(W, z, C, 1e12)) < 1e-8 * np.linalg.norm(z)


# -- posterior covariance --------------------------------------------------------


def test_posterior_covariance_no_data_is_prior(rng):
    _, _, C = instance(rng, 3, 4, 5)
    np.testing.assert_array_equal(posterior_covariance(np.zeros((3, 20)), C, 1.0), C.matrix)


def test_posterior_covariance_dense_oracle(rng):
    W, _, C = instance(rng, 15, 5, 4)
    s = 0.8
    oracle = np.linalg.inv(W.T @ W / s + np.linalg.inv(C.matrix))
    np.testing.assert_allclose(posterior_covariance(W, C, s), oracle, rtol=1e-8, atol=1e-10)


def test_posterior_covariance_uninformative_limit(rng):
    W, _, C = instance(rng, 15, 5, 4)
    post = posterior_covariance(W, C, 1e12)
    np.testing.assert_allclose(post, C.matrix, rtol=1e-9, atol=1e-9)


def test_posterior_mean_matches_regularized_form(rng):
    # mean = C_post W'z / s  equals  (W'W + s C^-1)^-1 W'z, i.e. alpha = s
    W, z, C = instance(rng, 18, 5, 4)
    s = 2.3
    mean = posterior_covariance(W, C, s) @ (W.T @ z) / s
    assert rel(solve_map_cholesky(W, z, C, s), mean) <= 1e-8


# -- training and prediction ------------------------------------------------------

HYPER = Hyperparameters(pixel_width=1.0, shadow_ratio=0.5, space_constant=2.0, excess_length=0.5, alpha=0.3)


def _train_setup(rng, n=40):
    links = random_links(rng, n, 10, 8)
    grid = grid_from_links(links, 1.0)
    pl = LogDistanceModel(-50.0, 2.0)
    return links, grid, pl


def test_select_solver():
    assert select_solver(10, 100) == MINIMUM_NORM
    assert select_solver(100, 100) == MAP_CHOLESKY
    assert select_solver(200, 100) == MAP_CHOLESKY
    assert select_solver(10, 100, "map") == MAP_CHOLESKY
    assert select_solver(200, 100, "mne") == MINIMUM_NORM
    with pytest.raises(ValueError):
        select_solver(1, 1, "qr")


def test_train_matches_dense_oracle_and_paths(rng):
    links, grid, pl = _train_setup(rng)
    a = train(links, HYPER, pl, grid, solver="map")
    b = train(links, HYPER, pl, grid, solver="mne")
    z = fading_losses(pl, links)
    W = build_weight_matrix(links, grid, HYPER.excess_length).toarray()
    C = build_covariance(FieldPrior(HYPER.shadow_ratio * np.var(z), HYPER.space_constant, grid)).matrix
    oracle = dense_map_oracle(W, z, C, HYPER.alpha)
    assert rel(a.field, oracle) <= 1e-8
    assert rel(b.field, oracle) <= 1e-8
    assert a.solver_path == MAP_CHOLESKY and b.solver_path == MINIMUM_NORM
    assert a.prior.sigma_x_sq == pytest.approx(0.5 * np.var(z), rel=1e-15)
    assert a.report.relative_residual <= 1e-10
    assert {"weights", "covariance", "factorization", "solve"} <= set(a.report.timings)


def test_train_degenerate_geometry_leaves_zero_field():
    far = [Link(Point2D(0, 0), Point2D(1, 0), -40.0), Link(Point2D(0, 0), Point2D(0, 2), -47.0)]
    grid = PixelGrid(Point2D(50, 50), 1.0, 3, 3)
    m = train(far, HYPER, LogDistanceModel(-40.0, 2.0), grid)
    assert m.report.degenerate
    assert np.all(m.field == 0)


def test_single_link_small_alpha_reproduces_loss():
    link = Link(Point2D(0.5, 2.5), Point2D(9.5, 2.5), -70.0)
    grid = PixelGrid(Point2D(0, 0), 1.0, 10, 5)
    pl = LogDistanceModel(-50.0, 2.0)
    hyper = Hyperparameters(1.0, 1.0, 2.0, 0.5, 1e-8)
    m = train([link], hyper, pl, grid)
    W = m.weights([link])
    z = fading_losses(pl, [link])
    assert (W.matrix @ m.field)[0] == pytest.approx(z[0], rel=1e-6)
    assert np.all(np.abs(m.field[W.matrix.indices]) > 0)


def test_predict_shadowing_oracle_and_coverage(rng):
    links, grid, pl = _train_setup(rng)
    model = train(links, HYPER, pl, grid)
    test = random_links(rng, 15, 10, 8) + [Link(Point2D(100, 100), Point2D(101, 100), -60.0)]
    pred = predict_shadowing(model, test)
    from conftest import dense_weights_oracle

    oracle = dense_weights_oracle(test, grid, HYPER.excess_length) @ model.field
    np.testing.assert_allclose(pred.shadowing, oracle, rtol=1e-12, atol=1e-12)
    assert pred.shadowing[-1] == 0.0
    assert not pred.covered[-1]
    assert pred.out_of_coverage == 1


def test_predict_is_linear_in_field(rng):
    links, grid, pl = _train_setup(rng)
    model = train(links, HYPER, pl, grid)
    scaled = CelfModel(pl, HYPER, grid, 3.0 * model.field, model.prior, model.solver_path)
    np.testing.assert_allclose(
        predict_shadowing(scaled, links).shadowing, 3.0 * predict_shadowing(model, links).shadowing, rtol=1e-13
    )


def test_predict_power_composition(rng):
    links, grid, pl = _train_setup(rng)
    model = train(links, HYPER, pl, grid)
    expected = np.array([pl.mean_power(l.distance) for l in links]) - predict_shadowing(model, links).shadowing
    assert np.array_equal(predict_power(model, links), expected)
    zero = CelfModel(pl, HYPER, grid, np.zeros(grid.n_pixels), model.prior, model.solver_path)
    np.testing.assert_array_equal(predict_power(zero, links), [pl.mean_power(l.distance) for l in links])
    bump = CelfModel(pl, HYPER, grid, np.ones(grid.n_pixels), model.prior, model.solver_path)
    shadow = predict_shadowing(bump, links[:1]).shadowing[0]
    assert predict_power(bump, links[:1])[0] == pl.mean_power(links[0].distance) - shadow


def test_model_field_shape_checked():
    grid = PixelGrid(Point2D(0, 0), 1.0, 2, 2)
    with pytest.raises(ValueError, match="pixels"):
        CelfModel(LogDistanceModel(0, 2), HYPER, grid, np.zeros(3), FieldPrior(1, 1, grid), MAP_CHOLESKY)


@pytest.mark.parametrize(
    "kw",
    [dict(pixel_width=0), dict(shadow_ratio=1.5), dict(alpha=0), dict(excess_length=-1), dict(space_constant=np.nan)],
)
def test_hyperparameter_validation(kw):
    base = dict(pixel_width=1.0, shadow_ratio=0.5, space_constant=2.0, excess_length=0.5, alpha=0.3)
    with pytest.raises(ValueError):
        Hyperparameters(**{**base, **kw})
