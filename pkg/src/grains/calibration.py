"""Offline selection of motion velocity, period and z-score threshold.

For every candidate MV an object-free trace is cut into segments; a GP fitted
on segment k predicts segment k+1, and the pooled z-scores of all predicted
segments give the RMSE used to rank the candidates.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .anomaly import rmse_zscores, zscore
from .gp_core import PeriodicGPRegressor
from .granular_sim import free_raking_trace, get_medium
from .trajectory import MotionConstants, TrajectoryParams, periodicity_prior


@dataclass(frozen=True)
class CalibrationConfig:
    mv_grid: tuple[float, ...] = (0.2, 0.3, 0.4, 0.5, 0.6, 0.7)
    cr: float = 0.02
    av: float = 0.01
    segment_length: int = 1000
    min_segments: int = 6
    sigma_floor: float = 1e-4
    length_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mv_grid", tuple(float(m) for m in self.mv_grid))
        if not self.mv_grid:
            raise ValueError("mv_grid must not be empty")
        if any(not 0 < m <= 1 for m in self.mv_grid):
            raise ValueError("mv_grid values must lie in (0, 1]")
        if len(set(self.mv_grid)) != len(self.mv_grid):
            raise ValueError("mv_grid has duplicates")
        if self.segment_length < 1 or self.min_segments < 1:
            raise ValueError("segment_length and min_segments must be >= 1")

    def params(self, mv: float) -> TrajectoryParams:
        return TrajectoryParams(self.cr, self.av, mv)

    @property
    def trace_length(self) -> int:
        return (self.min_segments + 1) * self.segment_length


@dataclass(frozen=True)
class CalibrationRow:
    mv: float
    t_prior: int
    rmse: float
    max_abs_z: float


@dataclass(frozen=True)
class CalibrationReport:
    rows: tuple[CalibrationRow, ...]
    mv_star: float
    t_star: int
    zs_bar: float
    medium: str | None = None

    def to_dict(self) -> dict:
        return {
            "medium": self.medium,
            "rows": [
                {"mv": r.mv, "T": r.t_prior, "rmse": _g9(r.rmse), "max_abs_z": _g9(r.max_abs_z)}
                for r in self.rows
            ],
            "selected": {"mv_star": self.mv_star, "t_star": self.t_star, "zs_bar": _g9(self.zs_bar)},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationReport":
        rows = tuple(CalibrationRow(r["mv"], int(r["T"]), r["rmse"], r["max_abs_z"]) for r in d["rows"])
        sel = d["selected"]
        return cls(rows, sel["mv_star"], int(sel["t_star"]), sel["zs_bar"], d.get("medium"))

    def table(self) -> str:
        """Rows as columns, one column per MV."""
        head = ["MV"] + [f"{r.mv:g}" for r in self.rows]
        lines = [
            head,
            ["T"] + [str(r.t_prior) for r in self.rows],
            ["RMSE"] + [f"{r.rmse:.4f}" for r in self.rows],
            ["max|z|"] + [f"{r.max_abs_z:.1f}" for r in self.rows],
        ]
        width = max(len(c) for row in lines for c in row)
        out = ["  ".join(c.rjust(width) for c in row) for row in lines]
        out.append(f"MV* = {self.mv_star:g}  T* = {self.t_star}  ZS = {self.zs_bar:.4g}")
        return "\n".join(out)


def _g9(x: float) -> float:
    return float(f"{x:.9g}")


def evaluate_mv(trace, t_prior: int, config: CalibrationConfig = CalibrationConfig()) -> tuple[float, float]:
    """RMSE and max |z| of segment-ahead GP predictions over ``trace``."""
    drag = trace.drag if hasattr(trace, "drag") else np.asarray(trace, dtype=float)
    L = config.segment_length
    if len(drag) < config.trace_length:
        raise ValueError(
            f"trace has {len(drag)} samples; need {(config.min_segments + 1)} segments of {L}"
        )
    K = len(drag) // L
    gp = PeriodicGPRegressor(period=float(t_prior), length_scale=config.length_scale, warm_start=True)
    zs = []
    for k in range(K - 1):
        t_train = np.arange(k * L, (k + 1) * L, dtype=float)
        t_test = t_train + L
        gp.fit(t_train[:, None], drag[k * L : (k + 1) * L])
        mu, sd = gp.predict(t_test[:, None], return_std=True)
        zs.append(zscore(drag[(k + 1) * L : (k + 2) * L], mu, sd, config.sigma_floor))
    zs = np.concatenate(zs)
    return rmse_zscores(zs), float(np.max(np.abs(zs)))


def select(rows) -> CalibrationRow:
    """Minimum-RMSE row; ties go to the smaller MV."""
    rows = list(rows)
    if not rows:
        raise ValueError("no calibration rows")
    return min(rows, key=lambda r: (r.rmse, r.mv))


def report_from_rows(rows, medium: str | None = None) -> CalibrationReport:
    rows = tuple(sorted(rows, key=lambda r: r.mv))
    best = select(rows)
    return CalibrationReport(rows, best.mv, best.t_prior, best.max_abs_z, medium)


def calibrate(traces: dict, config: CalibrationConfig = CalibrationConfig(),
              consts: MotionConstants = MotionConstants(), medium: str | None = None) -> CalibrationReport:
    """Evaluate every MV of the grid on its trace and pick MV*, T*, ZS."""
    missing = [mv for mv in config.mv_grid if mv not in traces]
    if missing:
        raise KeyError(f"no trace for MV {missing}")
    rows = []
    for mv in config.mv_grid:
        t = periodicity_prior(config.params(mv), consts)
        rmse, zmax = evaluate_mv(traces[mv], t, config)
        rows.append(CalibrationRow(mv, t, rmse, zmax))
    return report_from_rows(rows, medium)


def replay_rows(rmse, max_abs_z, config: CalibrationConfig = CalibrationConfig(),
                consts: MotionConstants = MotionConstants(), medium: str | None = None) -> CalibrationReport:
    """Build a report from precomputed per-MV evaluations, in ``mv_grid`` order."""
    if not len(rmse) == len(max_abs_z) == len(config.mv_grid):
        raise ValueError("need one rmse and one max_abs_z per grid MV")
    rows = [
        CalibrationRow(mv, periodicity_prior(config.params(mv), consts), float(r), float(z))
        for mv, r, z in zip(config.mv_grid, rmse, max_abs_z)
    ]
    return report_from_rows(rows, medium)


def simulate_calibration_traces(medium, config: CalibrationConfig = CalibrationConfig(),
                                consts: MotionConstants = MotionConstants(), seed: int = 0) -> dict:
    medium = get_medium(medium)
    return {
        mv: free_raking_trace(medium, config.params(mv), config.trace_length, consts, seed + 7919 * i)
        for i, mv in enumerate(config.mv_grid)
    }


class MVCalibrator(BaseEstimator):
    """Estimator wrapper: ``fit`` takes a mapping MV -> trace.

    Attributes
    ----------
    report_ : CalibrationReport
    mv_star_, t_star_, zs_bar_ : selected values
    """

    def __init__(self, mv_grid=(0.2, 0.3, 0.4, 0.5, 0.6, 0.7), cr=0.02, av=0.01,
                 segment_length=1000, min_segments=6, sigma_floor=1e-4):
        self.mv_grid = mv_grid
        self.cr = cr
        self.av = av
        self.segment_length = segment_length
        self.min_segments = min_segments
        self.sigma_floor = sigma_floor

    def _config(self) -> CalibrationConfig:
        return CalibrationConfig(tuple(self.mv_grid), self.cr, self.av,
                                 self.segment_length, self.min_segments, self.sigma_floor)

    def fit(self, traces: dict, y=None):
        self.report_ = calibrate(traces, self._config())
        self.mv_star_ = self.report_.mv_star
        self.t_star_ = self.report_.t_star
        self.zs_bar_ = self.report_.zs_bar
        return self
