import io
import math
import random

import numpy as np
import pytest
from scipy import integrate
from sklearn.base import clone

from grains.boa import (
    DEFAULT_NOISE,
    BOAExplorer,
    GridSpec,
    StiffnessObservation,
    acquisition,
    dedup_observations,
    ei,
    export_field,
    fit_boa,
    next_target,
    read_grid_csv,
    write_grid_csv,
)
from grains.gp_core import SquaredExp
from grains.granular_sim import Rect

GRID = GridSpec(Rect(0, 0, 0.1, 0.08), 0.005)


def ei_quad(mu, sigma, y):
    f = lambda x: max(x - y, 0.0) * math.exp(-0.5 * ((x - mu) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))
    lo = max(y, mu - 12 * sigma)
    return integrate.quad(f, lo, mu + 12 * sigma, epsabs=1e-11, epsrel=1e-11, limit=200)[0]


def se_dense_oracle(X, y, P, s2, l, noise):
    def k(A, B):
        d2 = ((A[:, None, :] - B[None, :, :]) ** 2).sum(-1)
        return s2 * np.exp(-0.5 * d2 / l**2)

    A = np.linalg.inv(k(X, X) + noise * np.eye(len(X)))
    Ks = k(P, X)
    return Ks @ A @ y, s2 - np.einsum("ij,jk,ik->i", Ks, A, Ks)


def random_obs(rng, n, area=(0.1, 0.08)):
    P = rng.uniform(0, 1, (n, 2)) * area
    return [StiffnessObservation(p, 7.0 if rng.random() < 0.4 else 0.0) for p in P]


def test_ei_examples():
    assert ei(3.0, 0.0, 1.0) == 0.0
    assert ei(2.0, 1.0, 2.0) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-12)
    assert ei(12.0, 1.0, 2.0) == pytest.approx(ei_quad(12.0, 1.0, 2.0), abs=1e-6)
    assert ei(12.0, 1.0, 2.0) == pytest.approx(10.0, abs=1e-6)
    with pytest.raises(ValueError):
        ei(0.0, -1.0, 0.0)


def test_ei_matches_quadrature():
    rng = np.random.default_rng(0)
    for _ in range(100):
        mu, sigma, y = rng.uniform(-5, 5), rng.uniform(0.01, 3), rng.uniform(-5, 5)
        assert ei(mu, sigma, y) == pytest.approx(ei_quad(mu, sigma, y), abs=1e-6)


def test_ei_nonnegative_and_increasing_in_sigma():
    rng = np.random.default_rng(1)
    mu = rng.uniform(-10, 10, 1000)
    s = rng.uniform(0, 5, 1000)
    assert np.all(ei(mu, s, 0.0) >= 0)
    sig = np.linspace(0.01, 5, 50)
    assert np.all(np.diff(ei(np.zeros(50), sig, 0.0)) > 0)


def test_zero_observations_prior():
    post = fit_boa([], SquaredExp(12.25, 0.02))
    mu, var = post.predict(GRID.centers())
    np.testing.assert_allclose(mu, 0.0)
    np.testing.assert_allclose(var, 12.25)
    assert next_target([], GRID) == GRID.cell_center(0)


def test_single_presence_interpolates():
    o = StiffnessObservation((0.031, 0.042), 7.0)
    post = fit_boa([o], SquaredExp(12.25, 0.02), noise=1e-12)
    assert post.predict([o.pos])[0][0] == pytest.approx(7.0, abs=1e-6)
    g = GridSpec(Rect(0, 0, 0.1, 0.08), 0.005)
    on = StiffnessObservation(g.cell_center(g.cell_index(o.pos)), 7.0)
    target = next_target(fit_boa([on], noise=1e-12), g)
    assert target != on.pos


def test_single_observation_bump_is_radial():
    o = StiffnessObservation((0.0525, 0.0425), 7.0)
    field = export_field([o], GRID)
    c = GRID.centers()
    r = np.hypot(*(c - o.pos).T)
    m = field.mean.ravel()
    assert GRID.cell_center(int(np.argmax(m))) == o.pos
    # equal radius, equal mean
    for rr in np.unique(np.round(r, 9))[:6]:
        sel = np.isclose(r, rr)
        assert np.ptp(m[sel]) < 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_field_matches_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    obs = dedup_observations(random_obs(rng, 20), GRID.resolution / 2)
    field = export_field(obs, GRID)
    X = np.array([o.pos for o in obs])
    y = np.array([o.value for o in obs])
    mu, var = se_dense_oracle(X, y, GRID.centers(), 12.25, 0.02, DEFAULT_NOISE)
    np.testing.assert_allclose(field.mean.ravel(), mu, atol=1e-8)
    np.testing.assert_allclose(field.variance.ravel(), np.maximum(var, 0), atol=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_next_target_is_exhaustive_argmax(seed):
    rng = np.random.default_rng(seed + 10)
    obs = random_obs(rng, int(rng.integers(1, 15)))
    post = fit_boa(obs, dedup_tol=GRID.resolution / 2)
    mu, var = se_dense_oracle(
        np.array([o.pos for o in post_obs(obs)]),
        np.array([o.value for o in post_obs(obs)]),
        GRID.centers(), 12.25, 0.02, DEFAULT_NOISE,
    )
    ybest = max(o.value for o in obs)
    scores = [ei_closed(m, math.sqrt(max(v, 0)), ybest) for m, v in zip(mu, var)]
    best = max(scores)
    expect = next(i for i, s in enumerate(scores) if s >= best - 1e-9 * max(1, best))
    got = next_target(obs, GRID)
    assert abs(scores[GRID.cell_index(got)] - best) <= 1e-9 * max(1, best)
    assert GRID.cell_index(got) == expect
    np.testing.assert_allclose(acquisition(post, GRID), scores, atol=1e-9)


def post_obs(obs):
    return dedup_observations(obs, GRID.resolution / 2)


def ei_closed(mu, s, y):
    if s == 0:
        return 0.0
    z = (mu - y) / s
    return (mu - y) * 0.5 * math.erfc(-z / math.sqrt(2)) + s * math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)


def test_tie_break_with_rng():
    rng = np.random.default_rng(3)
    picks = {next_target([], GRID, rng=rng) for _ in range(20)}
    assert len(picks) > 1


def test_permutation_invariance():
    rng = np.random.default_rng(4)
    obs = random_obs(rng, 25)
    # include a conflicting duplicate pair
    obs.append(StiffnessObservation(obs[0].pos, 7.0 - obs[0].value))
    ref = export_field(obs, GRID)
    for seed in range(5):
        shuffled = obs[:]
        random.Random(seed).shuffle(shuffled)
        f = export_field(shuffled, GRID)
        np.testing.assert_allclose(f.mean, ref.mean, atol=1e-10)
        np.testing.assert_allclose(f.variance, ref.variance, atol=1e-10)


def test_dedup_keeps_presence():
    a = StiffnessObservation((0.01, 0.01), 0.0)
    b = StiffnessObservation((0.011, 0.01), 7.0)
    c = StiffnessObservation((0.05, 0.05), 0.0)
    kept = dedup_observations([a, b, c], 0.0025)
    assert {o.value for o in kept if o.pos.x < 0.02} == {7.0}
    assert len(kept) == 2


def test_mean_bounded_for_separated_labels():
    # once opposite labels sit a few length scales apart the posterior stays in range
    rng = np.random.default_rng(5)
    for _ in range(20):
        obs, pts = [], []
        while len(obs) < 12:
            p = rng.uniform(0, 1, 2) * (0.3, 0.3)
            if all(math.dist(p, q) >= 0.06 for q in pts):
                pts.append(p)
                obs.append(StiffnessObservation(p, 7.0 if rng.random() < 0.5 else 0.0))
        f = export_field(obs, GridSpec(Rect(0, 0, 0.3, 0.3)))
        assert f.mean.min() >= -0.5 and f.mean.max() <= 7.5


@pytest.mark.xfail(strict=True, reason="adjacent 0/7 labels make the SE posterior ring past the band")
def test_mean_bounded_on_label_data():
    g = GridSpec(Rect(0, 0, 0.3, 0.3))
    for seed in range(20):
        rng = np.random.default_rng(seed)
        P = rng.uniform(0, 0.3, (40, 2))
        c = rng.uniform(0.05, 0.25, 2)
        obs = [StiffnessObservation(p, 7.0 if math.dist(p, c) < 0.05 else 0.0) for p in P]
        f = export_field(obs, g)
        assert f.mean.min() >= -0.5 and f.mean.max() <= 7.5


def test_grid_geometry():
    assert GRID.shape == (16, 20)
    assert GRID.cell_center(0) == (0.0025, 0.0025)
    assert GRID.cell_index((0.0999, 0.0799)) == 16 * 20 - 1
    assert GRID.cell_index(GRID.cell_center(37)) == 37
    with pytest.raises(ValueError):
        GridSpec(Rect(0, 0, 0.01, 0.1), 0.005)
    with pytest.raises(ValueError):
        GridSpec(Rect(0, 0, 0.1, 0.1), 0.0)


def test_grid_csv_roundtrip():
    f = export_field([StiffnessObservation((0.05, 0.04), 7.0)], GRID)
    buf = io.StringIO()
    write_grid_csv(f.mean, GRID, buf)
    buf.seek(0)
    vals, g = read_grid_csv(buf)
    assert g == GRID
    np.testing.assert_allclose(vals, f.mean, rtol=1e-8)


def test_explorer_estimator():
    rng = np.random.default_rng(6)
    obs = random_obs(rng, 10)
    X = np.array([o.pos for o in obs])
    y = np.array([o.value for o in obs])
    est = clone(BOAExplorer(length_scale=0.03)).fit(X, y)
    mu, sd = est.predict(GRID.centers(), return_std=True)
    f = export_field(obs, GRID, SquaredExp(12.25, 0.03))
    np.testing.assert_allclose(mu, f.mean.ravel(), atol=1e-10)
    np.testing.assert_allclose(sd**2, f.variance.ravel(), atol=1e-10)
    assert est.suggest(GRID) == next_target(obs, GRID, SquaredExp(12.25, 0.03))
