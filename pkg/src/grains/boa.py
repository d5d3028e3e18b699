"""Bayesian-optimization explorer over a 2-D search area.

Presence (7) and absence (0) labels are regressed with a squared-exponential
GP; the next raking goal is the grid cell with the largest expected
improvement.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .gp_core import GpFit, SquaredExp, gp_fit, gp_predict
from .granular_sim import Rect
from .trajectory import Pose2, as_pose

PRESENCE = 7.0
ABSENCE = 0.0
DEFAULT_LENGTH_SCALE = 0.02
DEFAULT_VARIANCE = 12.25
DEFAULT_NOISE = 0.1**2


@dataclass(frozen=True)
class GridSpec:
    area: Rect
    resolution: float = 0.005

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        nx, ny = self.shape[1], self.shape[0]
        if nx < 4 or ny < 4:
            raise ValueError(f"grid needs >= 4 cells per side, got {nx} x {ny}")

    @property
    def shape(self) -> tuple[int, int]:
        """(rows, cols) = (ny, nx)."""
        a = self.area
        return (max(1, int(round(a.height / self.resolution))),
                max(1, int(round(a.width / self.resolution))))

    @property
    def cell_size(self) -> tuple[float, float]:
        ny, nx = self.shape
        return self.area.width / nx, self.area.height / ny

    def centers(self) -> np.ndarray:
        """Cell centers in row-major order, shape (ny * nx, 2)."""
        ny, nx = self.shape
        dx, dy = self.cell_size
        xs = self.area.xmin + (np.arange(nx) + 0.5) * dx
        ys = self.area.ymin + (np.arange(ny) + 0.5) * dy
        X, Y = np.meshgrid(xs, ys)
        return np.column_stack([X.ravel(), Y.ravel()])

    def cell_index(self, pos) -> int:
        p = as_pose(pos)
        ny, nx = self.shape
        dx, dy = self.cell_size
        ix = min(nx - 1, max(0, int((p.x - self.area.xmin) // dx)))
        iy = min(ny - 1, max(0, int((p.y - self.area.ymin) // dy)))
        return iy * nx + ix

    def cell_center(self, index: int) -> Pose2:
        ny, nx = self.shape
        iy, ix = divmod(int(index), nx)
        dx, dy = self.cell_size
        return Pose2(self.area.xmin + (ix + 0.5) * dx, self.area.ymin + (iy + 0.5) * dy)


@dataclass(frozen=True)
class StiffnessObservation:
    pos: Pose2
    value: float

    def __post_init__(self):
        object.__setattr__(self, "pos", as_pose(self.pos))
        if not math.isfinite(self.value):
            raise ValueError("observation value must be finite")


@dataclass(frozen=True, eq=False)
class StiffnessField:
    grid: GridSpec
    mean: np.ndarray  # (ny, nx)
    variance: np.ndarray

    def __post_init__(self):
        if self.mean.shape != self.grid.shape or self.variance.shape != self.grid.shape:
            raise ValueError("field arrays do not match the grid shape")
        if np.any(self.variance < 0):
            raise ValueError("variance must be >= 0")


def ei(mu, sigma, y_plus):
    """Expected improvement of a Gaussian N(mu, sigma^2) over ``y_plus``."""
    mu, sigma = np.broadcast_arrays(np.asarray(mu, dtype=float), np.asarray(sigma, dtype=float))
    if np.any(sigma < 0):
        raise ValueError("sigma must be >= 0")
    out = np.zeros(mu.shape)
    pos = sigma > 0
    d = mu[pos] - y_plus
    z = d / sigma[pos]
    out[pos] = d * norm.cdf(z) + sigma[pos] * norm.pdf(z)
    out = np.maximum(out, 0.0)
    return float(out) if out.ndim == 0 else out


def dedup_observations(obs, tol: float, presence: float = PRESENCE) -> list[StiffnessObservation]:
    """Merge observations closer than ``tol``; a presence label wins over absence.

    The result does not depend on the input order.
    """
    order = sorted(obs, key=lambda o: (o.value != presence, -o.value, o.pos.x, o.pos.y))
    kept: list[StiffnessObservation] = []
    pts = np.zeros((0, 2))
    for o in order:
        p = np.array(o.pos)
        if len(pts) and np.min(np.hypot(*(pts - p).T)) < tol:
            continue
        kept.append(o)
        pts = np.vstack([pts, p])
    return kept


@dataclass(frozen=True, eq=False)
class BoaPosterior:
    fit: GpFit
    kernel: SquaredExp
    noise: float

    @property
    def n(self) -> int:
        return self.fit.n

    def predict(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and latent variance at ``points`` (n, 2)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        post = gp_predict(self.fit, pts)
        return post.mean, post.var

    def best_observed(self) -> float:
        return float(self.fit.targets.max()) if self.n else 0.0


def fit_boa(
    obs,
    kernel: SquaredExp | None = None,
    noise: float = DEFAULT_NOISE,
    dedup_tol: float | None = None,
) -> BoaPosterior:
    """Zero-mean GP posterior over the plane from stiffness observations."""
    kernel = kernel or SquaredExp(DEFAULT_VARIANCE, DEFAULT_LENGTH_SCALE)
    obs = list(obs)
    if dedup_tol:
        obs = dedup_observations(obs, dedup_tol)
    if obs:
        X = np.array([o.pos for o in obs], dtype=float)
        y = np.array([o.value for o in obs], dtype=float)
    else:
        X, y = np.zeros((0, 2)), np.zeros(0)
    return BoaPosterior(gp_fit(X, y, kernel, noise_floor=noise), kernel, noise)


def acquisition(posterior: BoaPosterior, grid: GridSpec) -> np.ndarray:
    mu, var = posterior.predict(grid.centers())
    return ei(mu, np.sqrt(var), posterior.best_observed())


def next_target(
    obs,
    grid: GridSpec,
    kernel: SquaredExp | None = None,
    noise: float = DEFAULT_NOISE,
    rng: np.random.Generator | None = None,
) -> Pose2:
    """Cell center maximizing EI; ties go to the lowest row-major index,
    or to a random tied cell when ``rng`` is given."""
    post = obs if isinstance(obs, BoaPosterior) else fit_boa(obs, kernel, noise, grid.resolution / 2)
    idx = argmax_ei(acquisition(post, grid), rng)
    return grid.cell_center(idx)


def argmax_ei(values: np.ndarray, rng: np.random.Generator | None = None) -> int:
    best = values.max()
    ties = np.flatnonzero(values >= best - 1e-12 * max(1.0, abs(best)))
    if rng is None or len(ties) == 1:
        return int(ties[0])
    return int(rng.choice(ties))


def export_field(obs, grid: GridSpec, kernel: SquaredExp | None = None,
                 noise: float = DEFAULT_NOISE) -> StiffnessField:
    post = obs if isinstance(obs, BoaPosterior) else fit_boa(obs, kernel, noise, grid.resolution / 2)
    mu, var = post.predict(grid.centers())
    return StiffnessField(grid, mu.reshape(grid.shape), var.reshape(grid.shape))


def write_grid_csv(values: np.ndarray, grid: GridSpec, fp, fmt: str = "{:.9g}") -> None:
    """One CSV row per grid row (y ascending); a leading comment row holds the geometry."""
    a = grid.area
    fp.write(f"# xmin={a.xmin!r},ymin={a.ymin!r},xmax={a.xmax!r},ymax={a.ymax!r},"
             f"resolution={grid.resolution!r}\n")
    w = csv.writer(fp)
    for row in np.asarray(values):
        w.writerow([fmt.format(v) for v in row])


def read_grid_csv(fp) -> tuple[np.ndarray, GridSpec]:
    head = fp.readline().lstrip("#").strip()
    meta = dict(kv.split("=") for kv in head.split(","))
    grid = GridSpec(Rect(float(meta["xmin"]), float(meta["ymin"]), float(meta["xmax"]),
                         float(meta["ymax"])), float(meta["resolution"]))
    rows = [list(map(float, r)) for r in csv.reader(fp) if r]
    return np.array(rows), grid


def write_field_csv(field: StiffnessField, mean_path, var_path) -> None:
    with open(mean_path, "w", newline="") as fp:
        write_grid_csv(field.mean, field.grid, fp)
    with open(var_path, "w", newline="") as fp:
        write_grid_csv(field.variance, field.grid, fp)


class BOAExplorer(BaseEstimator):
    """Estimator wrapper: ``fit(positions, labels)``, ``predict`` and ``suggest``."""

    def __init__(self, length_scale=DEFAULT_LENGTH_SCALE, variance=DEFAULT_VARIANCE,
                 noise=DEFAULT_NOISE, resolution=0.005):
        self.length_scale = length_scale
        self.variance = variance
        self.noise = noise
        self.resolution = resolution

    def fit(self, X, y):
        X = check_array(X, ensure_min_samples=0) if len(X) else np.zeros((0, 2))
        y = np.asarray(y, dtype=float).ravel()
        if len(X) != len(y):
            raise ValueError("X and y have different lengths")
        obs = [StiffnessObservation(p, v) for p, v in zip(X, y)]
        self.posterior_ = fit_boa(obs, SquaredExp(self.variance, self.length_scale),
                                  self.noise, self.resolution / 2)
        return self

    def predict(self, X, return_std=False):
        check_is_fitted(self, "posterior_")
        mu, var = self.posterior_.predict(check_array(X))
        return (mu, np.sqrt(var)) if return_std else mu

    def suggest(self, grid: GridSpec, rng=None) -> Pose2:
        check_is_fitted(self, "posterior_")
        return next_target(self.posterior_, grid, rng=rng)
