"""Exact Gaussian-process regression.

Two solvers share one kernel vocabulary:

* a dense Cholesky solver that works for any kernel and input dimension, and
* a spectral solver for ``Periodic + White`` on scalar inputs. The periodic
  kernel is exactly a cosine series with modified-Bessel weights,

      k(tau) = s2 * exp(-2 sin^2(pi tau / T) / l^2)
             = s2 * sum_m w_m cos(2 pi m tau / T),  w_0 = ive(0, z), w_m = 2 ive(m, z), z = 1/l^2,

  so the Gram matrix is a rank-(2M+1) term plus the white diagonal. Truncating
  once the tail weight is below 1e-13 leaves the result equal to the dense one
  to rounding, while fitting 2000 points costs O(n M^2) instead of O(n^3).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np
from scipy import linalg, optimize, special
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

LOG_2PI = math.log(2 * math.pi)
JITTER_START = 1e-10
JITTER_MAX = 1e-4
SERIES_TOL = 1e-13
MAX_HARMONICS = 400
PERIOD_SCALE = 100.0


class IllConditionedKernelError(np.linalg.LinAlgError):
    pass


def as_inputs(X) -> np.ndarray:
    """Return inputs as a finite 2-D float array (n, d); 1-D input means d = 1."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X[:, None]
    elif X.ndim != 2:
        raise ValueError(f"inputs must be 1-D or 2-D, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("inputs must be finite")
    return X


def _sqdist(X, Y) -> np.ndarray:
    d = X[:, None, :] - Y[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


# ---------------------------------------------------------------- kernels


class Kernel:
    """Base class. Hyperparameters are the dataclass fields; names nest with ``__``."""

    def __call__(self, X, Y=None) -> np.ndarray:
        raise NotImplementedError

    def diag(self, X) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, X) -> dict[str, np.ndarray]:
        """dK(X, X)/d log(p) for every hyperparameter p."""
        raise NotImplementedError

    def hyperparameters(self) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}

    def with_params(self, **params) -> "Kernel":
        return replace(self, **params)

    def white_variance(self) -> float:
        return 0.0

    def __add__(self, other: "Kernel") -> "Sum":
        return Sum(self, other)


def _positive(obj, *names):
    for name in names:
        v = getattr(obj, name)
        if not (np.isfinite(v) and v > 0):
            raise ValueError(f"{type(obj).__name__}.{name} must be positive, got {v}")


def _nonnegative(obj, *names):
    for name in names:
        v = getattr(obj, name)
        if not (np.isfinite(v) and v >= 0):
            raise ValueError(f"{type(obj).__name__}.{name} must be >= 0, got {v}")


@dataclass(frozen=True)
class Periodic(Kernel):
    variance: float = 1.0
    length_scale: float = 1.0
    period: float = 1.0

    def __post_init__(self):
        _nonnegative(self, "variance")
        _positive(self, "length_scale", "period")

    def _parts(self, X, Y):
        r = np.sqrt(np.maximum(_sqdist(X, Y), 0.0))
        arg = math.pi * r / self.period
        s = np.sin(arg)
        K = self.variance * np.exp(-2.0 * s**2 / self.length_scale**2)
        return K, r, arg, s

    def __call__(self, X, Y=None):
        X = as_inputs(X)
        Y = X if Y is None else as_inputs(Y)
        return self._parts(X, Y)[0]

    def diag(self, X):
        return np.full(len(as_inputs(X)), float(self.variance))

    def gradient(self, X):
        X = as_inputs(X)
        K, r, arg, s = self._parts(X, X)
        l2 = self.length_scale**2
        return {
            "variance": K,
            "length_scale": K * 4.0 * s**2 / l2,
            "period": K * (2.0 / l2) * np.sin(2 * arg) * arg,
        }


@dataclass(frozen=True)
class White(Kernel):
    """Independent noise: contributes only on the diagonal of K(X, X)."""

    noise_variance: float = 1.0

    def __post_init__(self):
        _nonnegative(self, "noise_variance")

    def __call__(self, X, Y=None):
        X = as_inputs(X)
        if Y is None:
            return self.noise_variance * np.eye(len(X))
        return np.zeros((len(X), len(as_inputs(Y))))

    def diag(self, X):
        return np.full(len(as_inputs(X)), float(self.noise_variance))

    def gradient(self, X):
        return {"noise_variance": self.noise_variance * np.eye(len(as_inputs(X)))}

    def white_variance(self):
        return float(self.noise_variance)


@dataclass(frozen=True)
class SquaredExp(Kernel):
    variance: float = 1.0
    length_scale: float = 1.0

    def __post_init__(self):
        _nonnegative(self, "variance")
        _positive(self, "length_scale")

    def __call__(self, X, Y=None):
        X = as_inputs(X)
        Y = X if Y is None else as_inputs(Y)
        return self.variance * np.exp(-0.5 * _sqdist(X, Y) / self.length_scale**2)

    def diag(self, X):
        return np.full(len(as_inputs(X)), float(self.variance))

    def gradient(self, X):
        X = as_inputs(X)
        d2 = _sqdist(X, X)
        K = self.variance * np.exp(-0.5 * d2 / self.length_scale**2)
        return {"variance": K, "length_scale": K * d2 / self.length_scale**2}


@dataclass(frozen=True)
class Sum(Kernel):
    left: Kernel
    right: Kernel

    def __call__(self, X, Y=None):
        return self.left(X, Y) + self.right(X, Y)

    def diag(self, X):
        return self.left.diag(X) + self.right.diag(X)

    def gradient(self, X):
        out = {f"left__{k}": v for k, v in self.left.gradient(X).items()}
        out.update({f"right__{k}": v for k, v in self.right.gradient(X).items()})
        return out

    def hyperparameters(self):
        out = {f"left__{k}": v for k, v in self.left.hyperparameters().items()}
        out.update({f"right__{k}": v for k, v in self.right.hyperparameters().items()})
        return out

    def with_params(self, **params):
        lp = {k[6:]: v for k, v in params.items() if k.startswith("left__")}
        rp = {k[7:]: v for k, v in params.items() if k.startswith("right__")}
        if len(lp) + len(rp) != len(params):
            raise KeyError(f"unknown hyperparameters {sorted(params)}")
        return Sum(self.left.with_params(**lp), self.right.with_params(**rp))

    def white_variance(self):
        return self.left.white_variance() + self.right.white_variance()


KernelSpec = Kernel


def kernel_eval(spec: Kernel, a, b, same_index: bool | None = None) -> float:
    """k(a, b) for two single locations.

    White noise counts only when ``a`` and ``b`` are the same training index;
    by default that is assumed when the locations coincide.
    """
    a, b = as_inputs(np.atleast_1d(a)).reshape(1, -1), as_inputs(np.atleast_1d(b)).reshape(1, -1)
    if same_index is None:
        same_index = bool(np.array_equal(a, b))
    return float(spec(a)[0, 0] if same_index else spec(a, b)[0, 0])


def split_periodic_white(kernel: Kernel) -> tuple[Periodic, White] | None:
    """Return (Periodic, White) parts if ``kernel`` is exactly their sum."""
    if isinstance(kernel, Sum):
        l, r = kernel.left, kernel.right
        if isinstance(l, Periodic) and isinstance(r, White):
            return l, r
        if isinstance(l, White) and isinstance(r, Periodic):
            return r, l
    return None


# ---------------------------------------------------------- dense solver


def _cholesky_jitter(K: np.ndarray) -> tuple[np.ndarray, float]:
    n = len(K)
    if n == 0:
        return np.zeros((0, 0)), 0.0
    try:
        return linalg.cholesky(K, lower=True), 0.0
    except linalg.LinAlgError:
        pass
    scale = float(np.mean(np.diag(K)))
    if not scale > 0:
        scale = 1.0
    rel = JITTER_START
    while rel <= JITTER_MAX * (1 + 1e-9):
        jitter = rel * scale
        try:
            return linalg.cholesky(K + jitter * np.eye(n), lower=True), jitter
        except linalg.LinAlgError:
            rel *= 10
    raise IllConditionedKernelError(
        f"kernel matrix not positive definite even with jitter {JITTER_MAX:g} x mean diagonal"
    )


@dataclass(frozen=True, eq=False)
class GpFit:
    inputs: np.ndarray
    targets: np.ndarray
    kernel: Kernel
    noise_floor: float
    factor: np.ndarray
    alpha: np.ndarray
    jitter: float
    y_mean: float = 0.0

    @property
    def n(self) -> int:
        return len(self.inputs)


@dataclass(frozen=True)
class GpPosterior:
    mean: np.ndarray
    std: np.ndarray

    @property
    def var(self) -> np.ndarray:
        return self.std**2


def _train_matrix(X, kernel, noise_floor):
    return kernel(X) + noise_floor * np.eye(len(X))


def gp_fit(inputs, targets, kernel: Kernel, noise_floor: float = 0.0, center: bool = False) -> GpFit:
    """Factorize K + noise for the training data.

    ``noise_floor`` is extra diagonal variance applied to the training matrix
    only. With ``center=True`` the target mean is removed before solving and
    restored by :func:`gp_predict`.
    """
    X = as_inputs(inputs) if len(np.atleast_1d(inputs)) else np.zeros((0, 1))
    y = np.asarray(targets, dtype=float).ravel()
    if len(X) != len(y):
        raise ValueError(f"{len(X)} inputs but {len(y)} targets")
    if not np.all(np.isfinite(y)):
        raise ValueError("targets must be finite")
    if noise_floor < 0:
        raise ValueError("noise_floor must be >= 0")
    y_mean = float(y.mean()) if (center and len(y)) else 0.0
    yc = y - y_mean
    L, jitter = _cholesky_jitter(_train_matrix(X, kernel, noise_floor))
    alpha = linalg.cho_solve((L, True), yc) if len(y) else np.zeros(0)
    return GpFit(X, yc, kernel, float(noise_floor), L, alpha, jitter, y_mean)


def gp_predict(fit: GpFit, test_inputs, include_noise: bool = False) -> GpPosterior:
    """Posterior mean and standard deviation at ``test_inputs``.

    The variance is the latent one, ``k(t*,t*) - k*^T (K + noise)^-1 k*``;
    ``include_noise`` adds the kernel's white-noise variance.
    """
    Xs = as_inputs(test_inputs)
    kss = fit.kernel.diag(Xs) - fit.kernel.white_variance()
    if fit.n == 0:
        mean = np.full(len(Xs), fit.y_mean)
        var = kss.copy()
    else:
        if Xs.shape[1] != fit.inputs.shape[1]:
            raise ValueError("test inputs have a different dimension than training inputs")
        Ks = fit.kernel(Xs, fit.inputs)
        mean = fit.y_mean + Ks @ fit.alpha
        v = linalg.solve_triangular(fit.factor, Ks.T, lower=True)
        var = kss - np.einsum("ij,ij->j", v, v)
    var = np.maximum(var, 0.0)
    if include_noise:
        var = var + fit.kernel.white_variance()
    return GpPosterior(mean, np.sqrt(var))


def log_marginal_likelihood(inputs, targets, kernel: Kernel, noise_floor: float = 0.0) -> float:
    """log p(y | X) of the zero-mean model with covariance K + noise."""
    fit = gp_fit(inputs, targets, kernel, noise_floor)
    return _lml_from_fit(fit)


def _lml_from_fit(fit: GpFit) -> float:
    n = fit.n
    return float(
        -0.5 * fit.targets @ fit.alpha - np.log(np.diag(fit.factor)).sum() - 0.5 * n * LOG_2PI
    )


def _dense_lml_grad(X, y, kernel, noise_floor, names):
    fit = gp_fit(X, y, kernel, noise_floor)
    lml = _lml_from_fit(fit)
    Kinv = linalg.cho_solve((fit.factor, True), np.eye(fit.n))
    W = np.outer(fit.alpha, fit.alpha) - Kinv
    grads = kernel.gradient(X)
    return lml, np.array([0.5 * np.sum(W * grads[k]) for k in names])


# ------------------------------------------------------- spectral solver


def bessel_weights(length_scale: float, tol: float = SERIES_TOL) -> np.ndarray:
    """Cosine-series weights of the unit-variance periodic kernel, truncated at ``tol``."""
    z = 1.0 / length_scale**2
    m = np.arange(MAX_HARMONICS + 1)
    iv = special.ive(m, z)
    w = 2.0 * iv
    w[0] = iv[0]
    # the full series sums to exactly 1
    tail = 1.0 - np.cumsum(w)
    keep = np.flatnonzero(tail < tol)
    M = int(keep[0]) if len(keep) else MAX_HARMONICS
    return w[: M + 1]


def _dlogw_dlogl(length_scale: float, M: int) -> np.ndarray:
    z = 1.0 / length_scale**2
    m = np.arange(M + 1)
    iv = special.ive(m, z)
    ivm1 = special.ive(np.abs(m - 1), z)
    ivp1 = special.ive(m + 1, z)
    dlog_dz = (ivm1 + ivp1) / (2.0 * iv) - 1.0
    return dlog_dz * (-2.0 * z)


def _trig_basis(t: np.ndarray, period: float, M: int) -> np.ndarray:
    """Columns cos(m w t) for m = 0..M, then sin(m w t) for m = 1..M."""
    e = np.exp(1j * (2 * math.pi / period) * t)
    powers = np.empty((len(t), M + 1), dtype=complex)
    powers[:, 0] = 1.0
    if M:
        powers[:, 1:] = e[:, None]
        np.cumprod(powers[:, 1:], axis=1, out=powers[:, 1:])
    out = np.empty((len(t), 2 * M + 1))
    out[:, : M + 1] = powers.real
    out[:, M + 1 :] = powers.imag[:, 1:]
    return out


class _SpectralState:
    """Features and factorization of one (Periodic, noise) configuration."""

    def __init__(self, t, y, per: Periodic, nu: float):
        if not nu > 0:
            raise ValueError("spectral solver needs positive noise variance")
        self.per, self.nu = per, nu
        w = bessel_weights(per.length_scale)
        self.M = len(w) - 1
        amp = np.sqrt(per.variance * w)
        self.amp = np.concatenate([amp, amp[1:]])
        self.basis = _trig_basis(t, per.period, self.M)
        self.Phi = self.basis * self.amp
        r = self.Phi.shape[1]
        self.B = nu * np.eye(r) + self.Phi.T @ self.Phi
        self.cho = linalg.cho_factor(self.B, lower=True)
        self.b = self.Phi.T @ y
        self.Binv_b = linalg.cho_solve(self.cho, self.b)
        self.y = y
        self.n, self.r = len(y), r

    def lml(self) -> float:
        logdet = (self.n - self.r) * math.log(self.nu) + 2 * np.log(np.diag(self.cho[0])).sum()
        quad = (self.y @ self.y - self.b @ self.Binv_b) / self.nu
        return float(-0.5 * quad - 0.5 * logdet - 0.5 * self.n * LOG_2PI)

    def gradient(self, t) -> np.ndarray:
        """d LML / d log(variance, length_scale, period, nu)."""
        nu, Phi = self.nu, self.Phi
        alpha = (self.y - Phi @ self.Binv_b) / nu
        Binv = linalg.cho_solve(self.cho, np.eye(self.r))
        dBinv = np.diag(Binv)
        proj = Phi.T @ alpha
        per_col = 0.5 * (proj**2 - (1.0 - nu * dBinv))

        g_var = per_col.sum()
        dlw = _dlogw_dlogl(self.per.length_scale, self.M)
        g_len = per_col @ np.concatenate([dlw, dlw[1:]])

        # dPhi/dlog(T) = diag(w t) S diag(m amp) with S = [sin | -cos]; the
        # m = 0 column is constant, so only columns 1.. enter
        M = self.M
        m = np.arange(1, M + 1)
        scale = np.concatenate([m, m]) * self.amp[1:]
        wt = (2 * math.pi / self.per.period) * t
        WS = np.empty((self.n, 2 * M))
        np.multiply(self.basis[:, M + 1 :], wt[:, None], out=WS[:, :M])
        np.multiply(self.basis[:, 1 : M + 1], -wt[:, None], out=WS[:, M:])
        g_per = ((alpha @ WS) * scale) @ proj[1:] - np.sum(Binv[:, 1:] * (Phi.T @ WS) * scale)

        g_nu = 0.5 * nu * alpha @ alpha - 0.5 * (self.n - self.r + nu * np.trace(Binv))
        return np.array([g_var, g_len, g_per, g_nu])

    def predict(self, ts, include_noise: bool):
        w = bessel_weights(self.per.length_scale)
        M = len(w) - 1
        phi = _trig_basis(ts, self.per.period, M) * self.amp
        mean = phi @ self.Binv_b
        v = linalg.solve_triangular(self.cho[0], phi.T, lower=True)
        var = self.nu * np.einsum("ij,ij->j", v, v)
        if include_noise:
            var = var + self.nu
        return mean, var


# ---------------------------------------------------------- optimization


def _default_bounds(name: str, value: float, y_var: float, period_prior: float | None):
    leaf = name.rsplit("__", 1)[-1]
    if leaf == "period":
        centre = period_prior if period_prior is not None else value
        return (0.8 * centre, 1.2 * centre) if period_prior is not None else (0.5 * centre, 2.0 * centre)
    if leaf == "length_scale":
        return (min(value, 0.25), max(value, 30.0)) if period_prior is not None else (value * 1e-2, value * 1e2)
    scale = max(y_var, 1e-12)
    if leaf == "noise_variance":
        return (min(value, scale * 1e-6), max(value, scale * 10.0))
    return (min(value, scale * 1e-4), max(value, scale * 100.0))


def _resolve_bounds(kernel, bounds, y, period_prior):
    params = kernel.hyperparameters()
    bounds = dict(bounds or {})
    unknown = set(bounds) - set(params)
    if unknown:
        raise KeyError(f"bounds for unknown hyperparameters {sorted(unknown)}")
    y_var = float(np.var(y)) if len(y) > 1 else 1.0
    out = {}
    for name, value in params.items():
        lo, hi = bounds.get(name, _default_bounds(name, value, y_var, period_prior))
        if not lo <= value <= hi:
            raise ValueError(f"initial {name}={value} outside bounds ({lo}, {hi})")
        out[name] = (float(lo), float(hi))
    return params, out


def optimize_hyperparams(
    inputs,
    targets,
    init: Kernel,
    bounds: dict[str, tuple[float, float]] | None = None,
    *,
    noise_floor: float = 0.0,
    period_prior: float | None = None,
    n_restarts: int = 2,
    seed: int = 0,
    maxiter: int = 200,
) -> Kernel:
    """Maximize the log marginal likelihood over log-hyperparameters.

    Starts from ``init`` and ``n_restarts`` log-uniform draws inside the bounds.
    Hyperparameters with collapsed bounds or a zero value stay fixed. The result
    never has a lower LML than ``init``.
    """
    X = as_inputs(inputs)
    y = np.asarray(targets, dtype=float).ravel()
    params, bnds = _resolve_bounds(init, bounds, y, period_prior)
    free = [k for k, (lo, hi) in bnds.items() if hi > lo and params[k] > 0]
    if not free or len(y) == 0:
        return init

    pw = split_periodic_white(init)
    use_spectral = pw is not None and X.shape[1] == 1 and len(y) > 256
    if use_spectral:
        objective = _spectral_objective(X[:, 0], y, init, free, noise_floor)
    else:
        objective = _dense_objective(X, y, init, free, noise_floor)

    return _maximize(objective, init, params, bnds, free, n_restarts, seed, maxiter)


def _maximize(objective, init, params, bnds, free, n_restarts, seed, maxiter=200):
    # The LML is about 1e3 times more sensitive to log(period) than to the
    # other log-hyperparameters on window-length data; stretching that
    # coordinate lets L-BFGS take comparable steps in every direction.
    scale = np.array([PERIOD_SCALE if k.endswith("period") else 1.0 for k in free])

    def scaled(u):
        f, g = objective(u / scale)
        return f, g / scale

    log_b = [(math.log(bnds[k][0]) * s, math.log(bnds[k][1]) * s) for k, s in zip(free, scale)]
    x0 = np.log([params[k] for k in free]) * scale
    f0, _ = scaled(x0)
    best_x, best_f = x0, f0
    rng = np.random.default_rng(seed)
    starts = [x0] + [np.array([rng.uniform(lo, hi) for lo, hi in log_b]) for _ in range(n_restarts)]
    for xs in starts:
        try:
            res = optimize.minimize(
                scaled, xs, jac=True, method="L-BFGS-B", bounds=log_b,
                options={"maxiter": maxiter},
            )
        except (np.linalg.LinAlgError, ValueError):
            continue
        if np.isfinite(res.fun) and res.fun < best_f:
            best_x, best_f = res.x, float(res.fun)
    # accept only a strict improvement so the LML never decreases
    if not best_f < f0:
        return init
    return init.with_params(**{k: float(math.exp(v)) for k, v in zip(free, best_x / scale)})


def _dense_objective(X, y, init, free, noise_floor):
    def f(logp):
        k = init.with_params(**{n: math.exp(v) for n, v in zip(free, logp)})
        try:
            lml, g = _dense_lml_grad(X, y, k, noise_floor, free)
        except IllConditionedKernelError:
            return np.inf, np.zeros(len(free))
        return -lml, -g

    return f


_SPECTRAL_ORDER = ("variance", "length_scale", "period", "noise_variance")


def _spectral_objective(t, y, init, free, noise_floor):
    per, white = split_periodic_white(init)
    names = _periodic_white_names(init)
    t = t - t.mean()

    def f(logp):
        vals = dict(zip(free, np.exp(logp)))
        hp = init.with_params(**vals).hyperparameters()
        p = Periodic(hp[names["variance"]], hp[names["length_scale"]], hp[names["period"]])
        wv = hp[names["noise_variance"]]
        try:
            st = _SpectralState(t, y, p, wv + noise_floor)
        except (linalg.LinAlgError, ValueError):
            return np.inf, np.zeros(len(free))
        g = st.gradient(t)
        # chain rule: nu = white + floor
        g[3] *= wv / (wv + noise_floor)
        lookup = {names[k]: g[i] for i, k in enumerate(_SPECTRAL_ORDER)}
        return -st.lml(), -np.array([lookup[k] for k in free])

    return f


def _periodic_white_names(kernel: Sum) -> dict[str, str]:
    pside = "left" if isinstance(kernel.left, Periodic) else "right"
    wside = "right" if pside == "left" else "left"
    return {
        "variance": f"{pside}__variance",
        "length_scale": f"{pside}__length_scale",
        "period": f"{pside}__period",
        "noise_variance": f"{wside}__noise_variance",
    }


# --------------------------------------------------------------- estimator


class PeriodicGPRegressor(RegressorMixin, BaseEstimator):
    """GP regressor with a ``Periodic + White`` kernel over scalar inputs.

    Parameters
    ----------
    period : float
        Initial period in input units, typically the periodicity prior.
    length_scale, variance, noise_variance : float
        Initial kernel hyperparameters. ``variance`` and ``noise_variance``
        of ``None`` are initialized from the target variance.
    optimize : bool
        Fit hyperparameters by maximizing the marginal likelihood.
    period_tolerance : float
        Relative half-width of the period search interval around ``period``.
    n_restarts : int
        Extra random starts of the optimizer.
    warm_start : bool
        Start each ``fit`` from the hyperparameters of the previous fit.
    noise_floor : float
        Training-only diagonal variance added for numerical safety.
    solver : {"auto", "spectral", "dense"}
        "auto" uses the spectral solver once n exceeds the number of features.

    Attributes
    ----------
    kernel_ : Sum
        Fitted ``Periodic + White`` kernel.
    log_marginal_likelihood_value_ : float
    """

    def __init__(
        self,
        period=1.0,
        length_scale=1.0,
        variance=None,
        noise_variance=None,
        optimize=True,
        period_tolerance=0.2,
        n_restarts=0,
        warm_start=False,
        noise_floor=0.0,
        solver="auto",
        random_state=0,
    ):
        self.period = period
        self.length_scale = length_scale
        self.variance = variance
        self.noise_variance = noise_variance
        self.optimize = optimize
        self.period_tolerance = period_tolerance
        self.n_restarts = n_restarts
        self.warm_start = warm_start
        self.noise_floor = noise_floor
        self.solver = solver
        self.random_state = random_state

    def _initial_kernel(self, y) -> Sum:
        if self.warm_start and hasattr(self, "kernel_"):
            return self.kernel_
        v = float(np.var(y)) if len(y) > 1 else 1.0
        v = v if v > 0 else 1.0
        var = self.variance if self.variance is not None else 0.5 * v
        noise = self.noise_variance if self.noise_variance is not None else 0.5 * v
        return Periodic(var, self.length_scale, self.period) + White(noise)

    def _bounds(self, kernel, y):
        tol = self.period_tolerance
        v = max(float(np.var(y)), 1e-12)
        hp = kernel.hyperparameters()
        return {
            "left__variance": (min(hp["left__variance"], v * 1e-4), max(hp["left__variance"], v * 100)),
            "left__length_scale": (min(hp["left__length_scale"], 0.25), max(hp["left__length_scale"], 30.0)),
            "left__period": (self.period * (1 - tol), self.period * (1 + tol)),
            "right__noise_variance": (
                min(hp["right__noise_variance"], v * 1e-6),
                max(hp["right__noise_variance"], v * 10),
            ),
        }

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True, ensure_min_samples=1)
        if X.shape[1] != 1:
            raise ValueError("PeriodicGPRegressor expects a single input feature")
        if self.solver not in ("auto", "spectral", "dense"):
            raise ValueError(f"unknown solver {self.solver!r}")
        t = X[:, 0]
        self.y_mean_ = float(y.mean())
        yc = y - self.y_mean_
        kernel = self._initial_kernel(y)
        if not kernel.hyperparameters()["left__period"] > 0:
            raise ValueError("period must be positive")
        # keep the warm-started period inside the current search interval
        lo, hi = self.period * (1 - self.period_tolerance), self.period * (1 + self.period_tolerance)
        kernel = kernel.with_params(left__period=float(np.clip(kernel.left.period, lo, hi)))
        spectral = self._use_spectral(kernel, len(t))
        if self.optimize:
            fn = _fit_spectral if spectral else _fit_dense
            kernel = fn(t, yc, kernel, self._bounds(kernel, yc), self.noise_floor,
                        self.n_restarts, self.random_state)
        self.kernel_ = kernel
        self.t_ref_ = float(t.mean())
        self.spectral_ = spectral
        if spectral:
            self._state = _SpectralState(t - self.t_ref_, yc, kernel.left,
                                         kernel.right.noise_variance + self.noise_floor)
            self.log_marginal_likelihood_value_ = self._state.lml()
        else:
            self._fit = gp_fit(t, yc, kernel, self.noise_floor)
            self.log_marginal_likelihood_value_ = _lml_from_fit(self._fit)
        self.n_features_in_ = 1
        return self

    def _use_spectral(self, kernel, n):
        if self.solver == "dense":
            return False
        nu = kernel.right.noise_variance + self.noise_floor
        if self.solver == "spectral":
            if not nu > 0:
                raise ValueError("spectral solver needs positive noise variance")
            return True
        r = 2 * len(bessel_weights(min(kernel.left.length_scale, 0.25))) - 1
        return nu > 0 and n > 2 * r

    def predict(self, X, return_std=False, include_noise=True):
        """Predictive mean (and std). The std includes the white noise by default."""
        check_is_fitted(self, "kernel_")
        X = check_array(X)
        t = X[:, 0]
        if self.spectral_:
            mean, var = self._state.predict(t - self.t_ref_, include_noise)
            mean = mean + self.y_mean_
        else:
            post = gp_predict(self._fit, t, include_noise=include_noise)
            mean, var = post.mean + self.y_mean_, post.var
        if return_std:
            return mean, np.sqrt(np.maximum(var, 0.0))
        return mean


def _fit_spectral(t, y, kernel, bounds, noise_floor, n_restarts, seed):
    return _fit_with(_spectral_objective(t, y, kernel, _free(kernel, bounds), noise_floor),
                     kernel, bounds, n_restarts, seed)


def _fit_dense(t, y, kernel, bounds, noise_floor, n_restarts, seed):
    return _fit_with(_dense_objective(t[:, None], y, kernel, _free(kernel, bounds), noise_floor),
                     kernel, bounds, n_restarts, seed)


def _free(kernel, bounds):
    params = kernel.hyperparameters()
    return [k for k in params if bounds[k][1] > bounds[k][0] and params[k] > 0]


def _fit_with(objective, kernel, bounds, n_restarts, seed):
    free = _free(kernel, bounds)
    if not free:
        return kernel
    return _maximize(objective, kernel, kernel.hyperparameters(), bounds, free, n_restarts, seed)
