"""Raking paths: straight lines and spirals, plus the per-cycle periodicity prior."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

DEFAULT_STEP = 0.0005
# Chord step used for the periodicity prior (see cycle_length).
PRIOR_STEP = 0.001


class Pose2(NamedTuple):
    x: float
    y: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


def as_pose(p) -> Pose2:
    x, y = float(p[0]), float(p[1])
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError(f"non-finite pose {p!r}")
    return Pose2(x, y)


@dataclass(frozen=True)
class TrajectoryParams:
    """Spiral geometry.

    Parameters
    ----------
    cr : float
        Circular radius in meters.
    av : float
        Forward advance per full rotation in meters.
    mv : float
        Dimensionless motion velocity in (0, 1].
    """

    cr: float = 0.02
    av: float = 0.01
    mv: float = 0.2

    def __post_init__(self):
        if not self.cr >= 0:
            raise ValueError(f"cr must be >= 0, got {self.cr}")
        # av == 0 is allowed for in-place stirring geometry; gen_spiral rejects it.
        if not self.av >= 0:
            raise ValueError(f"av must be >= 0, got {self.av}")
        if not 0 < self.mv <= 1:
            raise ValueError(f"mv must lie in (0, 1], got {self.mv}")


@dataclass(frozen=True)
class MotionConstants:
    v0: float = 0.08968
    fs: float = 62.5

    def __post_init__(self):
        if not (self.v0 > 0 and self.fs > 0):
            raise ValueError("v0 and fs must be positive")

    def sample_spacing(self, mv: float) -> float:
        """Arc length travelled between two force samples, meters."""
        return self.v0 * mv / self.fs


@dataclass(frozen=True, eq=False)
class Path:
    """A discretized probe path.

    ``phase`` holds the rotation angle at every waypoint for spirals and is
    ``None`` for straight paths.
    """

    waypoints: np.ndarray
    cumulative_arc_length: np.ndarray
    cycle_boundaries: tuple[int, ...] = ()
    phase: np.ndarray | None = None
    centerline: tuple[Pose2, Pose2] | None = field(default=None)

    @property
    def start(self) -> Pose2:
        return Pose2(*map(float, self.waypoints[0]))

    @property
    def goal(self) -> Pose2:
        return Pose2(*map(float, self.waypoints[-1]))

    @property
    def length(self) -> float:
        return float(self.cumulative_arc_length[-1])

    def __len__(self) -> int:
        return len(self.waypoints)

    def cycle_index(self) -> np.ndarray:
        """Index of the rotation each waypoint belongs to (0 for straight paths)."""
        idx = np.zeros(len(self), dtype=int)
        for b in self.cycle_boundaries:
            idx[b + 1 :] += 1
        return idx

    def position_at(self, arc: np.ndarray) -> np.ndarray:
        arc = np.asarray(arc, dtype=float)
        s = self.cumulative_arc_length
        return np.column_stack(
            [np.interp(arc, s, self.waypoints[:, 0]), np.interp(arc, s, self.waypoints[:, 1])]
        )

    def phase_at(self, arc: np.ndarray) -> np.ndarray | None:
        if self.phase is None:
            return None
        return np.interp(arc, self.cumulative_arc_length, self.phase)

    def heading_at(self, arc: np.ndarray) -> np.ndarray:
        """Unit direction of travel at the given arc positions."""
        arc = np.asarray(arc, dtype=float)
        seg = np.diff(self.waypoints, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        k = np.searchsorted(self.cumulative_arc_length, arc, side="right") - 1
        k = np.clip(k, 0, len(seg) - 1)
        # zero-length segments borrow the nearest preceding usable direction
        good = seg_len > 0
        fill = np.maximum.accumulate(np.where(good, np.arange(len(seg)), 0))
        k = fill[k]
        return seg[k] / np.where(seg_len[k] > 0, seg_len[k], 1.0)[:, None]


def _validate_step(step: float) -> float:
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    return float(step)


def _arc(points: np.ndarray) -> np.ndarray:
    d = np.hypot(*np.diff(points, axis=0).T)
    return np.concatenate([[0.0], np.cumsum(d)])


def gen_linear(start, goal, step: float = DEFAULT_STEP) -> Path:
    step = _validate_step(step)
    a, b = as_pose(start).as_array(), as_pose(goal).as_array()
    dist = float(np.hypot(*(b - a)))
    if dist == 0:
        raise ValueError("start and goal coincide")
    # round() first so that e.g. 0.1/0.01 does not become 11 segments from fp noise
    n = max(1, math.ceil(round(dist / step, 9)))
    u = np.linspace(0.0, 1.0, n + 1)
    pts = a + u[:, None] * (b - a)
    pts[-1] = b
    return Path(pts, u * dist, (), None, (as_pose(a), as_pose(b)))


def gen_spiral(start, goal, params: TrajectoryParams, step: float = DEFAULT_STEP) -> Path:
    """Spiral raking path from ``start`` to ``goal``.

    The probe circles counterclockwise with radius ``cr`` around a center that
    slides along the start-goal line, advancing ``av`` per rotation. Rotation
    starts at the rear of the circle, so the probe sits on the line at every
    cycle boundary and the first waypoint is ``start``. A trailing partial
    rotation is closed with a straight segment onto ``goal``.
    """
    step = _validate_step(step)
    if params.cr == 0:
        return gen_linear(start, goal, step)
    if not params.av > 0:
        raise ValueError("spiral requires av > 0")
    a, b = as_pose(start).as_array(), as_pose(goal).as_array()
    dist = float(np.hypot(*(b - a)))
    if dist == 0:
        raise ValueError("start and goal coincide")
    u = (b - a) / dist
    n = np.array([-u[1], u[0]])
    cr, c = params.cr, params.av / (2 * math.pi)

    cycles = round(dist / params.av, 9)
    theta_end = 2 * math.pi * cycles
    # |dp/dtheta| <= cr + c, so this angular step keeps chords below ``step``
    per_cycle = math.ceil(2 * math.pi * (cr + c) / step)
    whole = math.floor(cycles)
    theta = np.arange(whole * per_cycle + 1) * (2 * math.pi / per_cycle)
    if theta_end > theta[-1]:
        extra = math.ceil((theta_end - theta[-1]) / (2 * math.pi / per_cycle))
        theta = np.concatenate([theta, np.linspace(theta[-1], theta_end, extra + 1)[1:]])
    along = c * theta + cr * (1 - np.cos(theta))
    lateral = -cr * np.sin(theta)
    pts = a + along[:, None] * u + lateral[:, None] * n

    if whole == cycles:
        pts[-1] = b
    elif np.hypot(*(b - pts[-1])) > 0:
        tail = gen_linear(pts[-1], b, step)
        pts = np.vstack([pts, tail.waypoints[1:]])
        theta = np.concatenate([theta, np.full(len(tail) - 1, theta_end)])

    boundaries = tuple(k * per_cycle for k in range(1, whole + 1))
    return Path(pts, _arc(pts), boundaries, theta, (as_pose(a), as_pose(b)))


def cycle_length(params: TrajectoryParams, step: float = PRIOR_STEP) -> float:
    """Arc length of one spiral cycle, in meters.

    The circular motion and the forward advance are combined in quadrature, so
    one cycle is one turn of a helix with radius ``cr`` and pitch ``av``; its
    length is the sum of chords of a uniform-angle discretization at ``step``.
    """
    step = _validate_step(step)
    cr, c = params.cr, params.av / (2 * math.pi)
    exact = 2 * math.pi * math.hypot(cr, c)
    if exact == 0:
        return 0.0
    m = max(1, math.ceil(exact / step))
    dtheta = 2 * math.pi / m
    chord = 2 * math.sqrt((cr * math.sin(dtheta / 2)) ** 2 + (c * dtheta / 2) ** 2)
    return m * chord


def periodicity_prior(
    params: TrajectoryParams,
    consts: MotionConstants = MotionConstants(),
    step: float = PRIOR_STEP,
) -> int:
    """Expected number of force samples per spiral cycle."""
    if not params.mv > 0:
        raise ValueError("mv must be positive")
    length = cycle_length(params, step)
    return int(round(length / (consts.v0 * params.mv) * consts.fs))


def write_path_csv(path: Path, fp) -> None:
    cycles = path.cycle_index()
    w = csv.writer(fp)
    w.writerow(["index", "x_m", "y_m", "arc_m", "cycle_index"])
    for i, (p, s, k) in enumerate(zip(path.waypoints, path.cumulative_arc_length, cycles)):
        w.writerow([i, f"{p[0]:.9g}", f"{p[1]:.9g}", f"{s:.9g}", int(k)])


def read_path_csv(fp) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows = list(csv.DictReader(fp))
    pts = np.array([[float(r["x_m"]), float(r["y_m"])] for r in rows])
    arc = np.array([float(r["arc_m"]) for r in rows])
    cyc = np.array([int(r["cycle_index"]) for r in rows])
    return pts, arc, cyc
