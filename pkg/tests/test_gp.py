import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hrmsbo.gp import (
    JITTER_LADDER,
    OUT_OF_SUPPORT,
    Dataset,
    Hyperpriors,
    IllConditionedCovariance,
    _cholesky_ladder,
    _restart_inits,
    condition_on,
    fit,
    log_map_gradient,
    log_map_objective,
    map_fit,
    posterior_covariance,
    predict,
    sample_posterior_joint,
)
from hrmsbo.kernel import KernelHyperparams, covariance_matrix

WIDE = Hyperpriors(0.0, 10.0, (0.01, 5.0), (0.1, 10.0), (1e-3, 2.0))


def params(ls, sf=1.0, sn=0.1, mean=0.0):
    return KernelHyperparams(tuple(np.log(np.atleast_1d(ls))), math.log(sf), math.log(sn), mean)


def log_prior_oracle(p: KernelHyperparams, pri: Hyperpriors) -> float:
    """Independent evaluation: Gaussian on the mean, log-uniform density on each log-scale value."""
    z = (p.mean_constant - pri.mean_mu) / pri.mean_sigma
    lp = -0.5 * z * z - math.log(pri.mean_sigma) - 0.5 * math.log(2 * math.pi)
    boxes = [pri.lengthscale] * p.dim + [pri.amplitude, pri.noise_std]
    return lp - sum(math.log(math.log(b) - math.log(a)) for a, b in boxes)


# --- Dataset / Hyperpriors ---------------------------------------------------


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), np.zeros(2))
    with pytest.raises(ValueError):
        Dataset(np.zeros((1, 1)), [float("inf")])
    d = Dataset(np.zeros((2, 1)), [1.0, 2.0])
    assert d.append([[0.5]], [3.0]).n == 3 and d.n == 2
    with pytest.raises(ValueError):
        d.X[0, 0] = 1.0


def test_hyperpriors_validation_and_roundtrip():
    with pytest.raises(ValueError):
        Hyperpriors(lengthscale=(3.0, 1.0))
    with pytest.raises(ValueError):
        Hyperpriors(mean_sigma=0.0)
    h = Hyperpriors(1.0, 2.0, (0.1, 1.0), (2.0, 3.0), (0.5, 4.0))
    assert Hyperpriors.from_dict(h.to_dict()) == h


# --- fit ---------------------------------------------------------------------


def test_fit_single_point_factor():
    p = params([0.7], sf=1.5, sn=0.3)
    m = fit(Dataset(np.array([[0.2]]), [1.0]), p)
    assert m.chol.shape == (1, 1)
    assert m.chol[0, 0] == pytest.approx(math.sqrt(1.5**2 + 0.3**2), rel=1e-15)
    assert m.jitter_used == 0.0


def test_fit_distinct_points_needs_no_jitter(rng):
    X = rng.random((10, 2))
    m = fit(Dataset(X, rng.standard_normal(10)), params([0.5, 0.5]))
    assert m.jitter_used == 0.0


def test_fit_duplicates_engage_jitter():
    X = np.full((10, 1), 0.4)
    m = fit(Dataset(X, np.linspace(0, 1, 10)), params([0.3], sn=1e-12))
    assert m.jitter_used > 0.0


def test_chol_reconstructs_covariance(rng):
    X = rng.random((25, 3))
    for sn in (0.1, 1e-9):
        m = fit(Dataset(X, rng.standard_normal(25)), params([0.3, 0.5, 0.8], sn=sn))
        target = m.covariance_with_noise() + m.jitter_used * np.eye(25)
        err = np.linalg.norm(m.chol @ m.chol.T - target) / np.linalg.norm(target)
        assert err <= 1e-8


def test_cholesky_ladder_gives_up_with_ladder():
    with pytest.raises(IllConditionedCovariance) as info:
        _cholesky_ladder(-np.eye(3))
    assert len(info.value.ladder) == len(JITTER_LADDER)


def test_model_is_immutable(rng):
    m = fit(Dataset(rng.random((4, 1)), rng.random(4)), params([0.5]))
    with pytest.raises(ValueError):
        m.alpha[0] = 0.0
    with pytest.raises(AttributeError):
        m.jitter_used = 1.0


# --- predict -----------------------------------------------------------------


def test_predict_prior_when_empty():
    p = params([0.5, 0.5], sf=2.0, mean=3.0)
    mu, var = predict(fit(Dataset.empty(2), p), np.random.default_rng(0).random((5, 2)))
    assert np.all(mu == 3.0) and np.all(var == 4.0)


def test_predict_one_point_oracle():
    # computed oracle: k(1) = (1 + sqrt 3) exp(-sqrt 3); var = 1 - k(1)^2
    p = KernelHyperparams((0.0,), 0.0, -350.0, 0.0)  # sigma_n^2 underflows to 0
    m = fit(Dataset(np.array([[0.0]]), [1.0]), p)
    mu, var = predict(m, np.array([[1.0]]))
    assert mu[0] == pytest.approx(0.4833577245965077, abs=1e-12)
    assert var[0] == pytest.approx(0.7663653100728867, abs=1e-12)


def test_noise_free_interpolation(rng):
    X = rng.random((15, 2))
    y = np.sin(4 * X[:, 0]) + X[:, 1] ** 2
    m = fit(Dataset(X, y), params([0.4, 0.6], sn=1e-8))
    mu, var = predict(m, X)
    assert np.max(np.abs(mu - y)) < 1e-6
    assert np.max(var) < 1e-6


def test_predict_dimension_mismatch(rng):
    m = fit(Dataset(rng.random((3, 2)), rng.random(3)), params([0.5, 0.5]))
    with pytest.raises(ValueError):
        predict(m, np.zeros((1, 3)))


@given(st.integers(0, 2**32 - 1), st.floats(0.05, 2.0))
def test_posterior_contraction_and_nonnegative_var(seed, ls):
    r = np.random.default_rng(seed)
    X = r.random((6, 1))
    m = fit(Dataset(X, r.standard_normal(6)), params([ls], sn=1e-6))
    x = r.random((1, 1))
    _, before = predict(m, x)
    _, after = predict(fit(m.dataset.append(x, [0.3]), m.params), x)
    assert after[0] <= before[0] + 1e-12
    assert np.all(predict(m, r.random((20, 1)))[1] >= 0.0)


def test_condition_on_matches_refit(rng):
    X = rng.random((8, 2))
    m = fit(Dataset(X, rng.standard_normal(8)), params([0.3, 0.6]))
    Xn = rng.random((3, 2))
    yn = rng.standard_normal(3)
    a = condition_on(m, Xn, yn)
    b = fit(m.dataset.append(Xn, yn), m.params)
    grid = rng.random((30, 2))
    for u, v in zip(predict(a, grid), predict(b, grid)):
        assert np.allclose(u, v, atol=1e-10)


# --- joint sampling ----------------------------------------------------------


def test_joint_draws_match_posterior_mean(rng):
    X = rng.random((6, 1))
    m = fit(Dataset(X, np.sin(6 * X[:, 0])), params([0.3], sn=0.05))
    Xs = np.linspace(0, 1, 7)[:, None]
    mu, var = predict(m, Xs)
    draws = sample_posterior_joint(m, Xs, 10_000, np.random.default_rng(11))
    assert draws.shape == (10_000, 7)
    assert np.all(np.abs(draws.mean(axis=0) - mu) <= 4 * np.sqrt(var) / 100)


def test_joint_draws_duplicate_rows_agree(rng):
    X = rng.random((5, 1))
    m = fit(Dataset(X, rng.standard_normal(5)), params([0.3]))
    Xs = np.array([[0.25], [0.6], [0.25]])
    draws = sample_posterior_joint(m, Xs, 200, np.random.default_rng(3))
    assert np.max(np.abs(draws[:, 0] - draws[:, 2])) < 1e-3


def test_joint_draws_deterministic_and_match_covariance(rng):
    X = rng.random((5, 2))
    m = fit(Dataset(X, rng.standard_normal(5)), params([0.4, 0.4]))
    Xs = rng.random((4, 2))
    a = sample_posterior_joint(m, Xs, 3, np.random.default_rng(5))
    b = sample_posterior_joint(m, Xs, 3, np.random.default_rng(5))
    assert np.array_equal(a, b)
    draws = sample_posterior_joint(m, Xs, 40_000, np.random.default_rng(6))
    _, C = posterior_covariance(m, Xs)
    assert np.allclose(np.cov(draws.T), C, atol=0.03 * np.max(np.diag(C)))


def test_single_draw_single_point():
    m = fit(Dataset(np.array([[0.0]]), [0.0]), params([1.0]))
    out = sample_posterior_joint(m, np.array([[0.5]]), 1, np.random.default_rng(0))
    assert out.shape == (1, 1)
    with pytest.raises(ValueError):
        sample_posterior_joint(m, np.array([[0.5]]), 0, np.random.default_rng(0))


# --- MAP objective -----------------------------------------------------------


def test_map_objective_outside_prior_box():
    data = Dataset(np.array([[0.1], [0.5]]), [0.0, 1.0])
    assert log_map_objective(params([10.0]), data, Hyperpriors()) == OUT_OF_SUPPORT
    assert OUT_OF_SUPPORT == -1e300


def test_map_objective_scalar_gaussian():
    p = params([1.5], sf=2.0, sn=25.0, mean=0.0)
    pri = Hyperpriors()
    got = log_map_objective(p, Dataset(np.array([[0.3]]), [0.0]), pri) - log_prior_oracle(p, pri)
    assert got == pytest.approx(-0.5 * math.log(2 * math.pi * (4.0 + 625.0)), abs=1e-10)


def test_map_objective_empty_is_prior():
    p = params([1.5], sf=2.0, sn=25.0, mean=3.0)
    pri = Hyperpriors()
    assert log_map_objective(p, Dataset.empty(1), pri) == pytest.approx(log_prior_oracle(p, pri), abs=1e-12)


def test_map_objective_rises_toward_fitting_noise(rng):
    X = rng.random((40, 1))
    y = np.sin(3 * X[:, 0]) + 0.5 * rng.standard_normal(40)
    data = Dataset(X, y)
    vals = [log_map_objective(params([0.5], sn=s), data, WIDE) for s in (0.01, 0.05, 0.15, 0.4)]
    assert vals == sorted(vals)


@pytest.mark.parametrize("seed", range(10))
def test_gradient_matches_central_differences(seed):
    r = np.random.default_rng(seed)
    d = 1 + seed % 3
    X = r.random((12 + seed, d))
    data = Dataset(X, np.sin(5 * X).sum(axis=1) + 0.1 * r.standard_normal(len(X)))
    lo, hi = WIDE.log_bounds(d).T
    theta = np.append(r.uniform(lo + 0.2, hi - 0.2), r.normal(0, 1))
    g = log_map_gradient(KernelHyperparams.from_vector(theta), data, WIDE)
    h = 1e-5
    for k in range(len(theta)):
        e = np.zeros_like(theta)
        e[k] = h
        fd = (log_map_objective(KernelHyperparams.from_vector(theta + e), data, WIDE)
              - log_map_objective(KernelHyperparams.from_vector(theta - e), data, WIDE)) / (2 * h)
        assert abs(g[k] - fd) <= 1e-4 * max(abs(fd), 1.0)


# --- MAP fit -----------------------------------------------------------------


def _gp_sample(n, true, seed):
    r = np.random.default_rng(seed)
    X = np.sort(r.random((n, 1)), axis=0)
    K = covariance_matrix(X, X, true) + true.noise_variance * np.eye(n)
    y = true.mean_constant + np.linalg.cholesky(K) @ r.standard_normal(n)
    return Dataset(X, y)


def test_map_fit_recovers_lengthscale():
    true = params([0.15], sf=1.0, sn=0.05)
    data = _gp_sample(60, true, 4)
    got = map_fit(data, WIDE, 8, np.random.default_rng(1))
    assert abs(got.log_lengthscales[0] - true.log_lengthscales[0]) < 0.5


def test_map_fit_deterministic_and_beats_inits():
    data = _gp_sample(30, params([0.2], sn=0.1), 9)
    a = map_fit(data, WIDE, 4, np.random.default_rng(7))
    b = map_fit(data, WIDE, 4, np.random.default_rng(7))
    assert a == b
    inits = _restart_inits(1, WIDE, 4, np.random.default_rng(7))
    best = log_map_objective(a, data, WIDE)
    for theta in inits:
        assert best >= log_map_objective(KernelHyperparams.from_vector(theta), data, WIDE)


def test_map_fit_constant_data_pushes_noise_down():
    data = Dataset(np.linspace(0, 1, 12)[:, None], np.full(12, 2.0))
    got = map_fit(data, WIDE, 4, np.random.default_rng(0))
    lo, hi = np.log(WIDE.noise_std)
    assert got.log_noise_std < lo + 0.25 * (hi - lo)


def test_map_fit_rejects_bad_restarts():
    with pytest.raises(ValueError):
        map_fit(Dataset(np.zeros((2, 1)), [0.0, 1.0]), WIDE, 0)
