"""Classical memory-parameter estimators.

Each estimator consumes one representation of the data:

=================  ==============  =========
method             consumes        estimates
=================  ==============  =========
``rs``             increments      H
``variogram``      increments      H
``higuchi``        path            H
``whittle-fgn``    increments      H
``whittle-arfima`` series          d
``qgv``            path            H
=================  ==============  =========

``series`` (an ARFIMA realization) plays the role of increments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import gammaln, zeta

from .errors import DegenerateWindow, DomainError, EstimationFailure, InsufficientData
from .fgn import Path


@dataclass
class Estimate:
    value: float
    method: str
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Periodogram:
    freqs: np.ndarray
    power: np.ndarray


def _as_array(x) -> np.ndarray:
    if isinstance(x, Path):
        x = x.values
    return np.asarray(x, dtype=np.float64).reshape(-1)


def _ols(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(intercept)


def _clip_h(value: float) -> float:
    return float(min(1.0, max(0.0, value)))


# ---------------------------------------------------------------------------
# rescaled range
# ---------------------------------------------------------------------------

def rs_statistic(window) -> float:
    """Rescaled, mean-adjusted range of the partial sums of ``window``."""
    z = _as_array(window)
    n = z.size
    if n < 2:
        raise DegenerateWindow("R/S needs at least 2 observations")
    partial = np.cumsum(z)
    k = np.arange(1, n + 1)
    adjusted = partial - k / n * partial[-1]
    r = adjusted.max() - adjusted.min()
    s = math.sqrt(np.mean((z - partial[-1] / n) ** 2))
    if s <= 1e-300 or s <= 1e-13 * np.max(np.abs(z)):
        raise DegenerateWindow("window has zero variance")
    return float(r / s)


def _rs_windows(block: np.ndarray) -> np.ndarray:
    """R/S for every row of a (windows, size) array; NaN for flat rows."""
    size = block.shape[1]
    partial = np.cumsum(block, axis=1)
    k = np.arange(1, size + 1)
    adjusted = partial - np.outer(partial[:, -1], k / size)
    r = adjusted.max(axis=1) - adjusted.min(axis=1)
    s = np.sqrt(np.mean((block - partial[:, -1:] / size) ** 2, axis=1))
    scale = np.max(np.abs(block), axis=1)
    flat = (s <= 1e-300) | (s <= 1e-13 * scale)
    out = np.full(block.shape[0], np.nan)
    out[~flat] = r[~flat] / s[~flat]
    return out


def rs_window_sizes(n: int, min_window: int = 8) -> list[int]:
    if n < min_window:
        return []
    top = int(math.floor(math.log2(n / min_window)))
    sizes = [n >> j for j in range(top + 1)]
    return [s for s in sizes if s >= min_window]


def _anis_lloyd(size: int) -> float:
    """Expected R/S of iid Gaussian noise (Anis-Lloyd with Peters' factor)."""
    i = np.arange(1, size)
    tail = np.sum(np.sqrt((size - i) / i))
    if size <= 340:
        front = math.exp(gammaln((size - 1) / 2) - gammaln(size / 2)) / math.sqrt(math.pi)
    else:
        front = 1.0 / math.sqrt(size * math.pi / 2)
    return float((size - 0.5) / size * front * tail)


def rs_estimate(x, corrected: bool = False, min_window: int = 8) -> Estimate:
    """Hurst exponent from the log-log slope of average R/S against window size.

    ``corrected`` subtracts the Anis-Lloyd expectation under independence and
    reports ``0.5 + slope`` of the residual.
    """
    z = _as_array(x)
    n = z.size
    if n < 32:
        raise InsufficientData(f"R/S needs at least 32 observations, got {n}")
    sizes, means = [], []
    for size in rs_window_sizes(n, min_window):
        count = n // size
        values = _rs_windows(z[: count * size].reshape(count, size))
        values = values[np.isfinite(values)]
        if values.size:
            sizes.append(size)
            means.append(values.mean())
    if len(sizes) < 3:
        if not sizes and np.ptp(z) == 0:
            raise DegenerateWindow("constant input has no rescaled range")
        raise InsufficientData(f"only {len(sizes)} usable window sizes")
    log_n = np.log(sizes)
    log_rs = np.log(means)
    if corrected:
        expected = np.log([_anis_lloyd(s) for s in sizes])
        slope, intercept = _ols(log_n, log_rs - expected)
        value = 0.5 + slope
    else:
        slope, intercept = _ols(log_n, log_rs)
        value = slope
    return Estimate(
        _clip_h(value),
        "rs",
        {"slope": slope, "intercept": intercept, "sizes": sizes, "corrected": corrected},
    )


# ---------------------------------------------------------------------------
# variogram / madogram
# ---------------------------------------------------------------------------

def variogram_estimate(x, p: int = 1, lags=(1, 2)) -> Estimate:
    """Power-variation estimator; p=1 is the madogram, p=2 the variogram.

    ``x`` holds increments; they are cumulated before taking lagged absolute
    differences, and H = slope / p. The default two-lag fit is the
    Gneiting-Sevcikova-Percival choice; pass ``lags=(1, 2, 3, 4)`` for a longer fit.
    """
    z = _as_array(x)
    if z.size < 16:
        raise InsufficientData(f"variogram needs at least 16 observations, got {z.size}")
    if p not in (1, 2):
        raise DomainError(f"p must be 1 or 2, got {p}")
    path = np.concatenate([[0.0], np.cumsum(z)])
    lags = np.asarray(lags, dtype=int)
    gam = np.array(
        [0.5 * np.mean(np.abs(path[t:] - path[:-t]) ** p) for t in lags]
    )
    if not np.all(np.isfinite(gam)) or np.any(gam <= 0):
        raise EstimationFailure("non-finite or vanishing variogram moments")
    slope, intercept = _ols(np.log(lags), np.log(gam))
    return Estimate(_clip_h(slope / p), "variogram", {"slope": slope, "intercept": intercept, "p": p})


# ---------------------------------------------------------------------------
# Higuchi
# ---------------------------------------------------------------------------

def higuchi_scales(n: int, bmin: int = 2, bmax: int | None = None, num: int = 16) -> list[int]:
    """Geometric box-size schedule from ``bmin`` to ``bmax`` (default ``n // 10``)."""
    bmax = n // 10 if bmax is None else bmax
    if bmax < bmin:
        return []
    num = min(num, bmax - bmin + 1)
    grid = np.geomspace(bmin, bmax, num=num)
    return sorted(set(int(round(b)) for b in grid))


def higuchi_curve_length(x, b: int, classical: bool = False, reference: bool = False) -> float:
    """Average curve length L_b over the b starting offsets.

    For offset i the number of complete b-steps is ``m = (n - 1 - i) // b``.
    The default sums all m absolute b-step differences and divides by m;
    ``classical`` applies the original normalization ``(n - 1) / (m * b) / b``
    instead. With ``reference`` only the first m - 1 differences are summed
    (still divided by m), which is how the widely used AntroPy routine counts.
    """
    v = _as_array(x)
    n = v.size
    total = 0.0
    for i in range(b):
        m = (n - 1 - i) // b
        terms = m - 1 if reference else m
        if terms < 1:
            raise InsufficientData(f"scale {b} too large for length {n}")
        s = np.abs(np.diff(v[i:i + terms * b + 1:b])).sum()
        if classical:
            total += s * (n - 1) / (m * b) / b
        else:
            total += s / m
    return total / b


def higuchi_estimate(x, kmax: int = 10, scales=None, classical: bool = False,
                     reference: bool = True) -> Estimate:
    """Hurst exponent from the log-log slope of Higuchi curve lengths.

    Takes the path. Box sizes default to ``1..kmax``; pass ``scales`` (a list,
    or ``"geometric"`` for :func:`higuchi_scales`) to override. With
    ``classical`` the slope is -D and H = 2 - D; both normalizations give the
    same estimate.
    """
    v = _as_array(x)
    if v.size < 64:
        raise InsufficientData(f"Higuchi needs at least 64 observations, got {v.size}")
    if scales is None:
        scales = list(range(1, kmax + 1))
    elif isinstance(scales, str):
        if scales != "geometric":
            raise DomainError(f"unknown Higuchi schedule {scales!r}")
        scales = higuchi_scales(v.size)
    scales = [int(b) for b in scales]
    if len(scales) < 2:
        raise InsufficientData("Higuchi scale schedule is empty")
    lengths = np.array([higuchi_curve_length(v, b, classical, reference) for b in scales])
    if np.any(lengths <= 0) or not np.all(np.isfinite(lengths)):
        raise InsufficientData("curve length vanishes; log undefined")
    slope, intercept = _ols(np.log(scales), np.log(lengths))
    value = 2.0 + slope if classical else slope
    return Estimate(_clip_h(value), "higuchi", {"slope": slope, "intercept": intercept, "scales": scales})


# ---------------------------------------------------------------------------
# spectral methods
# ---------------------------------------------------------------------------

def fourier_freqs(n: int) -> np.ndarray:
    return 2.0 * np.pi * np.arange(1, n // 2 + 1) / n


def periodogram(x) -> Periodogram:
    """I(lambda_k) = |sum_t (x_t - mean) e^{-i t lambda_k}|^2, k = 1..n//2."""
    v = _as_array(x)
    n = v.size
    if n < 16:
        raise InsufficientData(f"periodogram needs at least 16 observations, got {n}")
    spec = np.fft.rfft(v - v.mean())[1 : n // 2 + 1]
    return Periodogram(fourier_freqs(n), spec.real**2 + spec.imag**2)


def _fgn_constant(H: float) -> float:
    # unit integral over (0, pi]
    return 2.0 * math.sin(math.pi * H) * math.exp(gammaln(2 * H + 1)) / math.pi


def fgn_spectral_density(lam, H: float, K: int | None = 200) -> np.ndarray:
    """Spectral density of unit-variance fGn, normalized to unit mass on (0, pi].

    The aliasing series is truncated at |k| <= K with an integral tail
    correction; ``K=None`` evaluates it exactly through the Hurwitz zeta
    function.
    """
    if not 0.0 < H < 1.0:
        raise DomainError(f"Hurst exponent must lie in (0, 1), got {H}")
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam <= 0) or np.any(lam > np.pi):
        raise DomainError("frequencies must lie in (0, pi]")
    s = 2.0 * H + 1.0
    two_pi = 2.0 * np.pi
    if K is None:
        q = lam / two_pi
        series = two_pi ** (-s) * (zeta(s, q) + zeta(s, 1.0 - q))
    else:
        k = np.arange(1, K + 1, dtype=np.float64)
        lam2 = lam[..., None]
        series = lam**(-s) + np.sum(
            (two_pi * k + lam2) ** (-s) + (two_pi * k - lam2) ** (-s), axis=-1
        )
        edge = two_pi * (K + 0.5)
        series = series + ((edge + lam) ** (1 - s) + (edge - lam) ** (1 - s)) / (two_pi * (s - 1))
    return _fgn_constant(H) * (1.0 - np.cos(lam)) * series


def arfima_spectral_density(lam, d: float) -> np.ndarray:
    """(2 sin(lambda/2))^{-2d}, normalized to unit mass on (0, pi]."""
    if not -0.5 < d < 0.5:
        raise DomainError(f"d must lie in (-0.5, 0.5), got {d}")
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam <= 0) or np.any(lam > np.pi):
        raise DomainError("frequencies must lie in (0, pi]")
    log_mass = math.log(math.pi) + gammaln(1 - 2 * d) - 2 * gammaln(1 - d)
    return np.exp(-2.0 * d * np.log(2.0 * np.sin(lam / 2.0)) - log_mass)


_FAMILIES = {
    "fgn": (0.01, 0.99),
    "arfima": (-0.49, 0.49),
}


def _log_density(family: str, lam: np.ndarray, theta) -> np.ndarray:
    """log f for each theta (array) at every frequency -> shape (len(theta), len(lam))."""
    theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))[:, None]
    if family == "fgn":
        s = 2.0 * theta + 1.0
        q = lam[None, :] / (2.0 * np.pi)
        series = zeta(s, q) + zeta(s, 1.0 - q)
        log_c = (
            np.log(2.0 * np.sin(np.pi * theta) / np.pi)
            + gammaln(2.0 * theta + 1.0)
        )
        return log_c - s * np.log(2.0 * np.pi) + np.log1p(-np.cos(lam))[None, :] + np.log(series)
    log_mass = np.log(np.pi) + gammaln(1.0 - 2.0 * theta) - 2.0 * gammaln(1.0 - theta)
    return -2.0 * theta * np.log(2.0 * np.sin(lam / 2.0))[None, :] - log_mass


@lru_cache(maxsize=32)
def _coarse_table(family: str, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lo, hi = _FAMILIES[family]
    grid = np.round(np.arange(lo, hi + 1e-9, 0.01), 10)
    logf = _log_density(family, fourier_freqs(n), grid)
    return grid, np.exp(-logf), logf.mean(axis=1)


def whittle_objective(power: np.ndarray, lam: np.ndarray, family: str, theta) -> np.ndarray:
    """Profile Whittle criterion log(mean I/f) + mean log f, one value per theta.

    Invariant both to the scale of ``power`` (up to an additive constant) and
    to the normalization of f.
    """
    logf = _log_density(family, lam, theta)
    ratio = np.mean(np.asarray(power)[None, :] * np.exp(-logf), axis=1)
    return np.log(ratio) + logf.mean(axis=1)


def _objective_rows(power: np.ndarray, lam: np.ndarray, family: str, theta) -> np.ndarray:
    """Criterion for row i of ``power`` at ``theta[i]``."""
    logf = _log_density(family, lam, theta)
    return np.log(np.mean(power * np.exp(-logf), axis=1)) + logf.mean(axis=1)


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_batch(power: np.ndarray, lam: np.ndarray, family: str,
                  a: np.ndarray, b: np.ndarray, tol: float) -> tuple[np.ndarray, int]:
    """Golden-section search run in lockstep, one bracket per row of ``power``."""

    def objective(theta):
        return _objective_rows(power, lam, family, theta)

    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = objective(c), objective(d)
    iterations = 0
    while np.max(b - a) > tol:
        iterations += 1
        left = fc < fd
        a, b = np.where(left, a, c), np.where(left, d, b)
        c, d = (
            np.where(left, b - _GOLDEN * (b - a), d),
            np.where(left, c, a + _GOLDEN * (b - a)),
        )
        fp = objective(np.where(left, c, d))
        fc, fd = np.where(left, fp, fd), np.where(left, fc, fp)
    return 0.5 * (a + b), iterations


def whittle_estimate_batch(X, family: str = "fgn", tol: float = 1e-5) -> list[Estimate]:
    """Whittle estimates for every row of ``X`` (rows share one length).

    A coarse grid with step 0.01 locates the minimum, then golden-section
    search refines it inside the neighbouring grid cells.
    """
    if family not in _FAMILIES:
        raise DomainError(f"unknown Whittle family {family!r}")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = X.shape[1]
    if n < 64:
        raise InsufficientData(f"Whittle needs at least 64 observations, got {n}")
    lam = fourier_freqs(n)
    spec = np.fft.rfft(X - X.mean(axis=1, keepdims=True), axis=1)[:, 1 : n // 2 + 1]
    power = spec.real**2 + spec.imag**2
    scale = power.mean(axis=1, keepdims=True)
    degenerate = ~(scale[:, 0] > 0) | ~np.isfinite(scale[:, 0])
    # degenerate rows get flat power so the search stays finite; they raise below
    power = np.where(degenerate[:, None], 1.0, power / np.where(degenerate[:, None], 1.0, scale))
    grid, inv_f, mean_logf = _coarse_table(family, n)
    coarse = np.log(power @ inv_f.T / lam.size) + mean_logf[None, :]
    best = np.argmin(coarse, axis=1)
    lo, hi = _FAMILIES[family]
    a = np.maximum(grid[best] - 0.01, lo)
    b = np.minimum(grid[best] + 0.01, hi)
    theta, iterations = _golden_batch(power, lam, family, a, b, tol)
    objective = _objective_rows(power, lam, family, theta)
    method = f"whittle-{family}"
    out = []
    for i in range(X.shape[0]):
        if degenerate[i]:
            raise DegenerateWindow("Whittle input has zero variation")
        value = float(theta[i])
        boundary = value - lo < 10 * tol or hi - value < 10 * tol
        if family == "fgn":
            value = _clip_h(value)
        else:
            value = float(min(0.5, max(-0.5, value)))
        out.append(Estimate(value, method, {
            "objective": float(objective[i]),
            "iterations": iterations,
            "boundary": bool(boundary),
        }))
    return out


def whittle_estimate(x, family: str = "fgn", tol: float = 1e-5) -> Estimate:
    """Whittle estimate of H (``fgn``, from increments) or d (``arfima``)."""
    return whittle_estimate_batch(_as_array(x)[None, :], family, tol)[0]


# ---------------------------------------------------------------------------
# quadratic generalized variations
# ---------------------------------------------------------------------------

QGV_FILTER = np.array([1.0, -2.0, 1.0])


def qgv_estimate(x) -> Estimate:
    """H = 0.5 * log2(V2 / V1) for the (1, -2, 1) filter and its dilation by 2."""
    v = _as_array(x)
    if v.size < 64:
        raise InsufficientData(f"QGV needs at least 64 observations, got {v.size}")
    y1 = v[:-2] - 2.0 * v[1:-1] + v[2:]
    y2 = v[:-4] - 2.0 * v[2:-2] + v[4:]
    v1 = float(np.mean(y1**2))
    v2 = float(np.mean(y2**2))
    scale = float(np.mean(v**2)) if v.size else 0.0
    if not v1 > 1e-24 * max(scale, 1e-300) or not v2 > 0:
        raise DegenerateWindow("filtered series has zero quadratic variation")
    value = 0.5 * math.log2(v2 / v1)
    return Estimate(_clip_h(value), "qgv", {"v1": v1, "v2": v2, "raw": value})


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MethodInfo:
    name: str
    consumes: str  # "increments" | "path" | "series"
    target: str  # "H" | "d"
    fn: object


METHODS: dict[str, MethodInfo] = {
    "rs": MethodInfo("rs", "increments", "H", rs_estimate),
    "variogram": MethodInfo("variogram", "increments", "H", variogram_estimate),
    "higuchi": MethodInfo("higuchi", "path", "H", higuchi_estimate),
    "whittle-fgn": MethodInfo("whittle-fgn", "increments", "H",
                              lambda x: whittle_estimate(x, "fgn")),
    "whittle-arfima": MethodInfo("whittle-arfima", "series", "d",
                                 lambda x: whittle_estimate(x, "arfima")),
    "qgv": MethodInfo("qgv", "path", "H", qgv_estimate),
}


def get_method(name: str) -> MethodInfo:
    try:
        return METHODS[name]
    except KeyError:
        raise DomainError(f"unknown estimator {name!r}; choose from {sorted(METHODS)}") from None


def estimate(name: str, x) -> Estimate:
    return get_method(name).fn(x)
