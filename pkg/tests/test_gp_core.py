import math
import time

import numpy as np
import pytest
from sklearn.base import clone

from grains.gp_core import (
    IllConditionedKernelError,
    Periodic,
    PeriodicGPRegressor,
    SquaredExp,
    White,
    bessel_weights,
    gp_fit,
    gp_predict,
    kernel_eval,
    log_marginal_likelihood,
    optimize_hyperparams,
)


def _periodic_direct(a, b, s2, l, T):
    return s2 * math.exp(-2 * math.sin(math.pi * abs(a - b) / T) ** 2 / l**2)


def dense_oracle(t, y, ts, s2, l, T, noise):
    """Textbook posterior with an explicit inverse, built element by element."""
    n = len(t)
    K = np.array([[_periodic_direct(t[i], t[j], s2, l, T) for j in range(n)] for i in range(n)])
    A = np.linalg.inv(K + noise * np.eye(n))
    Ks = np.array([[_periodic_direct(a, b, s2, l, T) for b in t] for a in ts])
    mean = Ks @ A @ y
    var = s2 - np.einsum("ij,jk,ik->i", Ks, A, Ks)
    return mean, np.sqrt(np.maximum(var, 0))


def sample_pw(n, s2, l, T, noise, seed):
    rng = np.random.default_rng(seed)
    t = np.arange(n, dtype=float)
    K = Periodic(s2, l, T)(t) + 1e-8 * np.eye(n)
    f = np.linalg.cholesky(K) @ rng.standard_normal(n)
    return t, f + math.sqrt(noise) * rng.standard_normal(n)


def test_kernel_eval_examples():
    p = Periodic(2.0, 0.7, 5.0)
    assert kernel_eval(p, 1.0, 1.0) == pytest.approx(2.0)
    assert kernel_eval(p, 1.0, 6.0) == pytest.approx(2.0)
    w = White(0.3)
    assert kernel_eval(w, 1.0, 2.0) == 0.0
    assert kernel_eval(w, 1.0, 1.0) == pytest.approx(0.3)
    assert kernel_eval(w, 1.0, 1.0, same_index=False) == 0.0
    assert kernel_eval(p + w, 1.0, 1.0) == pytest.approx(2.3)
    se = SquaredExp(1.5, 0.2)
    assert kernel_eval(se, [0, 0], [0.2, 0]) == pytest.approx(1.5 * math.exp(-0.5))


def test_kernel_validation():
    with pytest.raises(ValueError):
        Periodic(-1.0)
    with pytest.raises(ValueError):
        Periodic(1.0, 0.0)
    with pytest.raises(ValueError):
        Periodic(1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        White(-0.1)
    with pytest.raises(ValueError):
        SquaredExp(1.0, -1.0)


def test_single_point_factor_and_mean():
    k = Periodic(1.0, 1.0, 10.0) + White(1.0)
    fit = gp_fit([3.0], [4.0], k)
    np.testing.assert_allclose(fit.factor, [[math.sqrt(2)]])
    post = gp_predict(fit, [3.0])
    assert post.mean[0] == pytest.approx(2.0)


def test_empty_fit_is_prior():
    k = Periodic(2.5, 1.0, 10.0) + White(0.5)
    post = gp_predict(gp_fit([], [], k), [0.0, 1.0, 7.0])
    np.testing.assert_allclose(post.mean, 0.0)
    np.testing.assert_allclose(post.std, math.sqrt(2.5))


def test_duplicate_inputs_with_noise():
    k = Periodic(1.0, 1.0, 10.0) + White(0.1)
    fit = gp_fit([1.0, 1.0, 1.0], [0.0, 1.0, 2.0], k)
    assert fit.jitter == 0.0
    assert gp_predict(fit, [1.0]).mean[0] == pytest.approx(3 / 3.1)


def test_factor_reconstruction_n200():
    rng = np.random.default_rng(0)
    t = np.sort(rng.uniform(0, 50, 200))
    k = Periodic(1.3, 0.8, 7.0) + White(0.05)
    fit = gp_fit(t, rng.standard_normal(200), k)
    K = k(t)
    err = np.linalg.norm(fit.factor @ fit.factor.T - K - fit.jitter * np.eye(200))
    assert err <= 1e-8 * np.linalg.norm(K)


def test_ill_conditioned_raises():
    # an indefinite Gram matrix defeats every jitter level
    class Bad(Periodic):
        def __call__(self, X, Y=None):
            K = super().__call__(X, Y)
            return K - 2 * np.eye(len(K)) if Y is None else K

    with pytest.raises(IllConditionedKernelError):
        gp_fit(np.arange(5.0), np.zeros(5), Bad(1.0, 1.0, 3.0))


@pytest.mark.parametrize("seed", range(10))
def test_predict_matches_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 120))
    s2, l, T, noise = rng.uniform(0.2, 3), rng.uniform(0.3, 2), rng.uniform(3, 30), rng.uniform(0.01, 1)
    t = rng.uniform(0, 100, n)
    y = rng.standard_normal(n)
    ts = rng.uniform(-10, 110, 30)
    post = gp_predict(gp_fit(t, y, Periodic(s2, l, T) + White(noise)), ts)
    mean, std = dense_oracle(t, y, ts, s2, l, T, noise)
    np.testing.assert_allclose(post.mean, mean, atol=1e-8)
    np.testing.assert_allclose(post.std, std, atol=1e-8)


def test_centering_restores_mean():
    k = Periodic(1.0, 1.0, 10.0) + White(1.0)
    fit = gp_fit([0.0], [10.0], k, center=True)
    # centered target is zero, so the prediction is the training mean everywhere
    np.testing.assert_allclose(gp_predict(fit, [0.0, 3.0]).mean, 10.0)


def test_include_noise_adds_white():
    k = Periodic(1.0, 1.0, 10.0) + White(0.4)
    fit = gp_fit([0.0, 1.0], [0.3, -0.2], k)
    a = gp_predict(fit, [0.5])
    b = gp_predict(fit, [0.5], include_noise=True)
    assert b.var[0] == pytest.approx(a.var[0] + 0.4)


def test_lml_scalar():
    lml = log_marginal_likelihood([0.0], [0.0], Periodic(1.0, 1.0, 5.0) + White(1.0))
    assert lml == pytest.approx(-0.5 * math.log(2) - 0.5 * math.log(2 * math.pi))


def test_lml_decreases_for_large_noise():
    rng = np.random.default_rng(1)
    t = np.arange(40.0)
    y = np.sin(t / 3) + 0.1 * rng.standard_normal(40)
    vals = [log_marginal_likelihood(t, y, Periodic(1.0, 1.0, 11.0) + White(nv)) for nv in np.logspace(1, 4, 30)]
    assert np.all(np.diff(vals) < 0)


def test_lml_prefers_generating_period():
    wins = 0
    for seed in range(20):
        t, y = sample_pw(500, 1.0, 1.0, 40.0, 0.1, seed)
        good = log_marginal_likelihood(t, y, Periodic(1.0, 1.0, 40.0) + White(0.1))
        bad = log_marginal_likelihood(t, y, Periodic(1.0, 1.0, 80.0) + White(0.1))
        wins += good >= bad
    assert wins >= 11


def test_psd_random_kernels():
    rng = np.random.default_rng(2)
    for _ in range(100):
        n = int(rng.integers(1, 65))
        kind = rng.integers(3)
        if kind == 0:
            k = Periodic(rng.uniform(0, 5), rng.uniform(0.05, 5), rng.uniform(0.5, 50))
            X = rng.uniform(0, 100, (n, 1))
        elif kind == 1:
            k = SquaredExp(rng.uniform(0, 5), rng.uniform(0.01, 1))
            X = rng.uniform(0, 1, (n, 2))
        else:
            k = Periodic(rng.uniform(0, 5), rng.uniform(0.05, 5), rng.uniform(0.5, 50)) + White(rng.uniform(0, 1))
            X = rng.uniform(0, 100, (n, 1))
        assert np.linalg.eigvalsh(k(X)).min() >= -1e-9 * n


def test_posterior_contraction_and_interpolation():
    rng = np.random.default_rng(3)
    t = rng.uniform(0, 30, 25)
    y = rng.standard_normal(25)
    k = Periodic(1.5, 1.0, 9.0) + White(0.2)
    post = gp_predict(gp_fit(t, y, k), t)
    assert np.all(post.var <= 1.5 + 1e-12)

    t = np.linspace(0, 8, 12)
    y = np.sin(t)
    fit = gp_fit(t, y, Periodic(1.0, 1.0, 9.0) + White(0.0))
    np.testing.assert_allclose(gp_predict(fit, t).mean, y, atol=1e-6)


def test_optimize_never_worse_and_collapsed_bounds():
    t, y = sample_pw(120, 1.0, 1.0, 15.0, 0.1, 4)
    init = Periodic(1.0, 1.0, 15.0) + White(0.1)
    out = optimize_hyperparams(t, y, init, period_prior=15.0)
    assert log_marginal_likelihood(t, y, out) >= log_marginal_likelihood(t, y, init) - 1e-9
    assert 12.0 <= out.left.period <= 18.0
    fixed = {k: (v, v) for k, v in init.hyperparameters().items()}
    assert optimize_hyperparams(t, y, init, fixed) is init


@pytest.mark.slow
def test_recover_period_439():
    ok = 0
    for seed in range(10):
        t, y = sample_pw(2000, 1.0, 1.0, 439.0, 0.1, seed)
        init = Periodic(0.5, 1.0, 439.0) + White(0.5)
        out = optimize_hyperparams(t, y, init, period_prior=439.0, seed=seed)
        ok += abs(out.left.period - 439) <= 0.05 * 439
    assert ok >= 8


def test_bessel_series_matches_kernel():
    l, T = 0.8, 37.0
    w = bessel_weights(l)
    tau = np.linspace(0, 100, 301)
    series = sum(wm * np.cos(2 * np.pi * m * tau / T) for m, wm in enumerate(w))
    direct = Periodic(1.0, l, T)(tau[:, None], np.zeros((1, 1)))[:, 0]
    np.testing.assert_allclose(series, direct, atol=1e-12)


def test_regressor_spectral_matches_dense():
    t, y = sample_pw(600, 1.0, 1.0, 50.0, 0.2, 5)
    y = y + 3.0
    kw = dict(period=50.0, length_scale=1.0, variance=1.0, noise_variance=0.2, optimize=False)
    a = PeriodicGPRegressor(solver="spectral", **kw).fit(t[:, None], y)
    b = PeriodicGPRegressor(solver="dense", **kw).fit(t[:, None], y)
    ts = np.arange(600, 900, dtype=float)[:, None]
    ma, sa = a.predict(ts, return_std=True)
    mb, sb = b.predict(ts, return_std=True)
    np.testing.assert_allclose(ma, mb, atol=1e-8)
    np.testing.assert_allclose(sa, sb, atol=1e-8)
    assert a.log_marginal_likelihood_value_ == pytest.approx(b.log_marginal_likelihood_value_, rel=1e-9)


def test_regressor_sklearn_conventions():
    est = PeriodicGPRegressor(period=20.0)
    params = est.get_params()
    assert params["period"] == 20.0
    c = clone(est)
    assert c.get_params() == params
    t, y = sample_pw(80, 1.0, 1.0, 20.0, 0.1, 6)
    c.fit(t[:, None], y)
    assert c.n_features_in_ == 1
    assert c.score(t[:, None], y) > 0.5
    with pytest.raises(ValueError):
        PeriodicGPRegressor().fit(np.ones((5, 2)), np.ones(5))


def test_regressor_warm_start_uses_previous_kernel():
    t, y = sample_pw(400, 1.0, 1.0, 30.0, 0.1, 7)
    est = PeriodicGPRegressor(period=30.0, warm_start=True)
    est.fit(t[:300, None], y[:300])
    first = est.kernel_
    est.set_params(optimize=False)
    est.fit(t[100:, None], y[100:])
    assert est.kernel_.hyperparameters() == first.hyperparameters()


def test_episode_timing_smoke():
    t, y = sample_pw(2000, 1.0, 1.0, 439.0, 0.1, 8)
    est = PeriodicGPRegressor(period=439.0, warm_start=True)
    est.fit(t[:, None], y)
    start = time.perf_counter()
    est.fit(t[:, None], y)
    est.predict(np.arange(2000, 3000, dtype=float)[:, None], return_std=True)
    assert time.perf_counter() - start < 1.0


@pytest.mark.parametrize("l", [0.4, 1.0, 3.0])
def test_spectral_gradient_matches_finite_differences(l):
    from scipy.optimize import approx_fprime

    from grains.gp_core import _spectral_objective

    rng = np.random.default_rng(9)
    t = np.arange(600.0) - 300
    y = np.sin(2 * np.pi * t / 50) + 0.3 * rng.standard_normal(600)
    free = ["left__variance", "left__length_scale", "left__period", "right__noise_variance"]
    f = _spectral_objective(t, y, Periodic(1.0, l, 51.0) + White(0.1), free, 0.0)
    x = np.log([1.2, l, 51.0, 0.1])
    num = approx_fprime(x, lambda v: f(v)[0], 1e-6)
    np.testing.assert_allclose(f(x)[1], num, rtol=1e-4, atol=1e-3)


def test_spectral_lml_matches_dense():
    _, y = sample_pw(400, 1.0, 0.6, 37.0, 0.2, 10)
    t = np.arange(400.0)
    k = Periodic(1.0, 0.6, 37.0) + White(0.2)
    a = PeriodicGPRegressor(37.0, 0.6, 1.0, 0.2, optimize=False, solver="spectral").fit(t[:, None], y)
    assert a.log_marginal_likelihood_value_ == pytest.approx(
        log_marginal_likelihood(t, y - y.mean(), k), rel=1e-9)
