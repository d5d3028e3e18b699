"""Sliding-window jamming detector.

Each episode fits a periodic GP to the trailing ``train_window`` drag samples,
predicts the next ``predict_horizon`` samples, and scores every arriving sample
by its absolute z-score against that prediction.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Iterable, Iterator

import numpy as np
from sklearn.base import clone

from .gp_core import PeriodicGPRegressor

NORMAL = "Normal"
WARNING = "JammingWarning"


def zscore(x, mu, sigma, sigma_floor: float = 1e-4):
    """(x - mu) / max(sigma, sigma_floor), elementwise."""
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < 0):
        raise ValueError("sigma must be >= 0")
    z = (np.asarray(x, dtype=float) - mu) / np.maximum(sigma, sigma_floor)
    return float(z) if np.ndim(z) == 0 else z


def rmse_zscores(zs) -> float:
    zs = np.asarray(zs, dtype=float).ravel()
    if zs.size == 0:
        raise ValueError("rmse of an empty z-score list")
    return float(np.sqrt(np.mean(zs**2)))


@dataclass(frozen=True)
class DetectorConfig:
    periodicity_prior: int
    zs_threshold: float = math.inf
    train_window: int = 2000
    predict_horizon: int = 1000
    debounce: int = 1
    sigma_floor: float = 1e-4
    length_scale: float = 1.0

    def __post_init__(self):
        if not self.train_window > self.periodicity_prior >= 1:
            raise ValueError("need train_window > periodicity_prior >= 1")
        if self.predict_horizon < 1:
            raise ValueError("predict_horizon must be >= 1")
        if not self.zs_threshold > 0:
            raise ValueError("zs_threshold must be positive")
        if self.debounce < 1:
            raise ValueError("debounce must be >= 1")
        if not self.sigma_floor > 0:
            raise ValueError("sigma_floor must be positive")


@dataclass(frozen=True)
class Verdict:
    kind: str
    iteration: int
    zscore: float
    episode: int

    def to_json(self) -> str:
        return json.dumps({"episode": self.episode, "iteration": self.iteration,
                           "z": float(f"{self.zscore:.9g}"), "kind": self.kind})


@dataclass
class DetectorResult:
    """Scored samples of one stream. ``zscores`` are absolute values."""

    iterations: np.ndarray
    zscores: np.ndarray
    episodes: np.ndarray
    warning: Verdict | None
    consumed: int
    warmup_only: bool
    fit_seconds: list[float] = field(default_factory=list)
    kernels: list = field(default_factory=list)

    @property
    def stopped(self) -> bool:
        return self.warning is not None

    def verdicts(self) -> Iterator[Verdict]:
        for it, z, ep in zip(self.iterations, self.zscores, self.episodes):
            if self.warning is not None and it == self.warning.iteration:
                yield self.warning
            else:
                yield Verdict(NORMAL, int(it), float(z), int(ep))

    def write_jsonl(self, fp) -> None:
        for v in self.verdicts():
            fp.write(v.to_json() + "\n")


class JammingDetector:
    """Streaming detector. Feed samples with :meth:`update` or :meth:`process`.

    ``prime`` is an optional object-free force history that stands in for the
    warm-up period: scoring starts with the first streamed sample.
    """

    def __init__(self, config: DetectorConfig, regressor=None, prime=None):
        self.config = config
        self.regressor = clone(regressor) if regressor is not None else PeriodicGPRegressor(
            period=float(config.periodicity_prior),
            length_scale=config.length_scale,
            warm_start=True,
        )
        prime = np.asarray(prime if prime is not None else [], dtype=float).ravel()
        if len(prime) and len(prime) <= config.periodicity_prior:
            raise ValueError("prime history must be longer than one period")
        self._buf = list(prime)
        self._next = 0  # iteration of the next incoming sample
        self._episode = -1
        self._ep_end = 0 if len(prime) else config.train_window
        self._mu = self._sd = None
        self._ep_start = 0
        self._run = 0
        self._its, self._zs, self._eps = [], [], []
        self.warning: Verdict | None = None
        self.fit_seconds: list[float] = []
        self.kernels: list = []

    @property
    def halted(self) -> bool:
        return self.warning is not None

    def _start_episode(self):
        cfg = self.config
        self._episode += 1
        self._ep_start = self._next
        hist = np.asarray(self._buf[-cfg.train_window :])
        idx = np.arange(self._next - len(hist), self._next, dtype=float)
        t0 = time.perf_counter()
        self.regressor.fit(idx[:, None], hist)
        future = np.arange(self._next, self._next + cfg.predict_horizon, dtype=float)
        self._mu, self._sd = self.regressor.predict(future[:, None], return_std=True)
        self.fit_seconds.append(time.perf_counter() - t0)
        self.kernels.append(self.regressor.kernel_)
        self._ep_end = self._next + cfg.predict_horizon

    def update(self, x: float) -> Verdict | None:
        """Consume one sample; returns its verdict, or None during warm-up or after a halt."""
        if self.halted:
            return None
        cfg = self.config
        it = self._next
        verdict = None
        if it >= self._ep_end:
            self._start_episode()
        if self._mu is not None:
            k = it - self._ep_start
            z = abs(zscore(x, self._mu[k], self._sd[k], cfg.sigma_floor))
            self._its.append(it)
            self._zs.append(z)
            self._eps.append(self._episode)
            self._run = self._run + 1 if z >= cfg.zs_threshold else 0
            kind = WARNING if self._run >= cfg.debounce else NORMAL
            verdict = Verdict(kind, it, z, self._episode)
            if kind == WARNING:
                self.warning = verdict
        self._buf.append(float(x))
        if len(self._buf) > 2 * cfg.train_window:
            del self._buf[: len(self._buf) - cfg.train_window]
        self._next += 1
        return verdict

    def process(self, values: Iterable[float]) -> Verdict | None:
        """Consume samples until exhausted or halted; returns the warning if any."""
        for x in values:
            self.update(x)
            if self.halted:
                break
        return self.warning

    def result(self) -> DetectorResult:
        return DetectorResult(
            np.asarray(self._its, dtype=int),
            np.asarray(self._zs, dtype=float),
            np.asarray(self._eps, dtype=int),
            self.warning,
            self._next,
            len(self._its) == 0,
            list(self.fit_seconds),
            list(self.kernels),
        )


def run_detector(trace, config: DetectorConfig, regressor=None, prime=None) -> DetectorResult:
    """Run a fresh detector over a trace (a ForceTrace or an array of drag values)."""
    values = trace.drag if hasattr(trace, "drag") else np.asarray(trace, dtype=float)
    det = JammingDetector(config, regressor, prime)
    det.process(values)
    return det.result()


def write_verdicts_jsonl(result: DetectorResult, path) -> None:
    with open(path, "w") as fp:
        result.write_jsonl(fp)


def read_verdicts_jsonl(path) -> list[Verdict]:
    with open(path) as fp:
        return [
            Verdict(d["kind"], d["iteration"], d["z"], d["episode"])
            for d in map(json.loads, fp)
        ]


def config_dict(config: DetectorConfig) -> dict:
    return asdict(config)


@dataclass(frozen=True)
class StopOutcome:
    """Where a rake ended. ``clearance_cm`` is measured at the last consumed sample."""

    stopped: bool
    stop_index: int
    clearance_cm: float
    contact: bool
    z: float = math.nan


def _outcome(trace, stop: int | None, z: float = math.nan) -> StopOutcome:
    if trace.clearance is None:
        raise ValueError("trace carries no clearance ground truth")
    last = len(trace.drag) - 1 if stop is None else stop
    seen = trace.clearance[: last + 1]
    return StopOutcome(stop is not None, last, float(trace.clearance[last]),
                       bool(np.any(seen <= 0)), z)


def online_stop(trace, config: DetectorConfig, regressor=None, prime=None) -> StopOutcome:
    """Stream a simulated trace through the detector and stop at the first warning."""
    return stop_outcome(trace, run_detector(trace, config, regressor, prime))


def stop_outcome(trace, res: DetectorResult) -> StopOutcome:
    """Outcome of a detector run over a simulated trace."""
    if res.warning is None:
        return _outcome(trace, None)
    return _outcome(trace, res.warning.iteration, res.warning.zscore)


def fixed_threshold_stop(trace, threshold: float) -> StopOutcome:
    """Baseline: stop at the first sample whose drag exceeds ``threshold`` newtons."""
    hit = np.flatnonzero(np.asarray(trace.drag) > threshold)
    if not len(hit):
        return _outcome(trace, None)
    return _outcome(trace, int(hit[0]))
