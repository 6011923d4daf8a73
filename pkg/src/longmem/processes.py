"""ARFIMA(0,d,0), fractional Ornstein-Uhlenbeck and stress-test processes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve, lfilter

from .errors import DomainError, StabilityError
from .fgn import Path, default_engine, fgn_to_fbm, sample_fbm
from .rng import as_rng


# ---------------------------------------------------------------------------
# ARFIMA(0, d, 0)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ArfimaCoeffs:
    d: float
    psi: np.ndarray

    @property
    def K(self) -> int:
        return self.psi.size - 1


def _check_d(d: float) -> float:
    d = float(d)
    if not -0.5 < d < 0.5:
        raise DomainError(f"d must lie in (-0.5, 0.5), got {d}")
    return d


def arfima_ma_coeffs(d: float, K: int) -> ArfimaCoeffs:
    """MA(inf) weights of the inverse fractional difference, truncated at K.

    psi_0 = 1 and psi_k = psi_{k-1} * (k - 1 + d) / k.
    """
    d = _check_d(d)
    if K < 1:
        raise DomainError(f"K must be >= 1, got {K}")
    k = np.arange(1, K + 1, dtype=np.float64)
    psi = np.empty(K + 1)
    psi[0] = 1.0
    np.cumprod((k - 1.0 + d) / k, out=psi[1:])
    return ArfimaCoeffs(d=d, psi=psi)


def sample_arfima(n: int, d: float, rng=None, burn_in: int | None = None) -> Path:
    """Stationary ARFIMA(0,d,0) series of length n with Gaussian innovations.

    Uses the truncated MA representation with ``K = max(n + burn_in, 10 n)``
    taps; the first ``burn_in`` outputs are discarded.
    """
    d = _check_d(d)
    if n < 2:
        raise DomainError(f"n must be >= 2, got {n}")
    rng = as_rng(rng)
    burn_in = n if burn_in is None else int(burn_in)
    K = max(n + burn_in, 10 * n)
    total = burn_in + n
    noise = rng.standard_normal(total + K)
    if d == 0.0:
        x = noise[K:]
    else:
        psi = arfima_ma_coeffs(d, K).psi
        x = fftconvolve(noise, psi, mode="valid")
    return Path(x[burn_in:], 1.0, "arfima", {"d": d})


# ---------------------------------------------------------------------------
# fractional Ornstein-Uhlenbeck
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FouParams:
    eta: float = 0.0
    hurst: float = 0.5
    alpha: float = 1.0
    mu: float = 0.0
    sigma: float = 1.0
    dt: float = 0.01

    def __post_init__(self):
        if not 0.0 < self.hurst < 1.0:
            raise DomainError(f"Hurst exponent must lie in (0, 1), got {self.hurst}")
        if self.alpha < 0:
            raise DomainError(f"alpha must be non-negative, got {self.alpha}")
        if not self.sigma > 0:
            raise DomainError(f"sigma must be positive, got {self.sigma}")
        if not self.dt > 0:
            raise DomainError(f"dt must be positive, got {self.dt}")


def fou_substeps(alpha: float, dt: float, max_step: float = 0.1) -> int:
    """Smallest internal refinement keeping ``alpha * dt / substeps <= max_step``."""
    return max(1, math.ceil(alpha * dt / max_step - 1e-12))


def sample_fou(
    params: FouParams,
    n: int,
    rng=None,
    fgn: np.ndarray | None = None,
    substeps: int = 1,
) -> Path:
    """Euler-Maruyama path Y_0..Y_n of dY = -alpha (Y - mu) dt + sigma dB^H.

    With ``substeps > 1`` the scheme runs on the refined grid dt / substeps
    and every ``substeps``-th point is returned. ``fgn`` injects the standard
    fGn driving noise (length ``n * substeps``).
    """
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    substeps = int(substeps)
    if substeps < 1:
        raise DomainError("substeps must be >= 1")
    h = params.dt / substeps
    a = params.alpha * h
    if a >= 1.0:
        raise StabilityError(
            f"alpha*dt = {a:.4g} >= 1; refine the grid (substeps) or shrink dt"
        )
    steps = n * substeps
    if fgn is None:
        fgn = default_engine().sample_fgn_values(steps, params.hurst, as_rng(rng))
    else:
        fgn = np.asarray(fgn, dtype=np.float64)
        if fgn.size != steps:
            raise DomainError(f"injected noise must have length {steps}")
    H = params.hurst
    drive = params.sigma * h**H * fgn
    if a != 0.0:
        drive = drive + a * params.mu
    c = 1.0 - a
    y = np.empty(steps + 1)
    y[0] = params.eta
    if a == 0.0:
        np.cumsum(drive, out=y[1:])
        y[1:] += params.eta
    else:
        w = lfilter([1.0], [1.0, -c], drive)
        y[1:] = w + params.eta * c ** np.arange(1, steps + 1)
    truth = {
        "H": H,
        "alpha": params.alpha,
        "eta": params.eta,
        "mu": params.mu,
        "sigma": params.sigma,
    }
    return Path(y[::substeps], params.dt, "fou", truth)


# ---------------------------------------------------------------------------
# stress processes
# ---------------------------------------------------------------------------

def sample_ar1(n: int, a: float, rng=None, noise: np.ndarray | None = None) -> Path:
    """X_1 = w_1, X_t = a X_{t-1} + w_t with standard normal w (or injected ``noise``)."""
    if noise is None:
        if n < 2:
            raise DomainError(f"n must be >= 2, got {n}")
        noise = as_rng(rng).standard_normal(n)
    noise = np.asarray(noise, dtype=np.float64)
    x = lfilter([1.0], [1.0, -float(a)], noise)
    return Path(x, 1.0, "ar1", {"a": float(a)})


def stable_increments(count: int, alpha: float, rng=None) -> np.ndarray:
    """Symmetric alpha-stable draws via Chambers-Mallows-Stuck.

    Scaled by ``2 ** ((1 - alpha) / 2)``: standard Cauchy at alpha = 1 and
    N(0, 1) at alpha = 2.
    """
    alpha = float(alpha)
    if not 0.0 < alpha <= 2.0:
        raise DomainError(f"alpha must lie in (0, 2], got {alpha}")
    rng = as_rng(rng)
    v = rng.uniform(-np.pi / 2, np.pi / 2, count)
    w = rng.exponential(1.0, count)
    if alpha == 1.0:
        x = np.tan(v)
    else:
        x = (
            np.sin(alpha * v)
            / np.cos(v) ** (1.0 / alpha)
            * (np.cos((1.0 - alpha) * v) / w) ** ((1.0 - alpha) / alpha)
        )
    return x * 2.0 ** ((1.0 - alpha) / 2.0)


def sample_stable_levy(n: int, alpha: float, rng=None) -> Path:
    """Symmetric alpha-stable Levy path of n + 1 points starting at 0."""
    inc = stable_increments(n, alpha, rng)
    values = np.concatenate([[0.0], np.cumsum(inc)])
    if not np.all(np.isfinite(values)):
        # heavy tails at tiny alpha can overflow; saturate instead of failing
        values = np.nan_to_num(values, nan=0.0, posinf=np.finfo(float).max / 4,
                               neginf=-np.finfo(float).max / 4)
    return Path(values, 1.0, "levy", {"alpha": alpha})


# ---------------------------------------------------------------------------
# path transforms
# ---------------------------------------------------------------------------

def _record(p: Path, **entry) -> dict:
    truth = dict(p.truth)
    truth["transforms"] = list(truth.get("transforms", [])) + [entry]
    return truth


def add_noise(p: Path, sigma: float, rng=None) -> Path:
    if sigma < 0:
        raise DomainError("noise sigma must be non-negative")
    noisy = p.values + float(sigma) * as_rng(rng).standard_normal(p.values.size)
    return Path(noisy, p.dt, p.process, _record(p, kind="add_noise", sigma=float(sigma)))


def smooth_overlapping(p: Path, window: int) -> Path:
    """Moving average at stride 1; the result is ``window - 1`` shorter."""
    window = int(window)
    if not 1 <= window <= p.values.size - 1:
        raise DomainError(f"invalid smoothing window {window}")
    out = np.convolve(p.values, np.full(window, 1.0 / window), mode="valid")
    return Path(out, p.dt, p.process, _record(p, kind="smooth_overlapping", window=window))


def smooth_block(p: Path, block: int) -> Path:
    """Averages of disjoint blocks; a trailing partial block is dropped."""
    block = int(block)
    if not 1 <= block <= p.values.size // 2:
        raise DomainError(f"invalid block size {block}")
    m = p.values.size // block
    out = p.values[: m * block].reshape(m, block).mean(axis=1)
    return Path(out, p.dt * block, p.process, _record(p, kind="smooth_block", block=block))


def sum_with(p: Path, hurst2: float, rng=None) -> Path:
    """Add an independent fBm path (same grid) with Hurst exponent ``hurst2``."""
    other = sample_fbm(p.values.size - 1, hurst2, dt=p.dt, rng=rng)
    return Path(p.values + other.values, p.dt, "composite",
                _record(p, kind="sum_with", H2=float(hurst2)))


def scale(p: Path, lam: float) -> Path:
    if lam == 1.0:
        return Path(p.values.copy(), p.dt, p.process, _record(p, kind="scale", lam=1.0))
    return Path(float(lam) * p.values, p.dt, p.process, _record(p, kind="scale", lam=float(lam)))


def shift(p: Path, c: float) -> Path:
    return Path(p.values + float(c), p.dt, p.process, _record(p, kind="shift", c=float(c)))


_TRANSFORMS = {
    "add_noise": add_noise,
    "smooth_overlapping": smooth_overlapping,
    "smooth_block": smooth_block,
    "sum_with": sum_with,
    "scale": scale,
    "shift": shift,
}


def transform_path(p: Path, kind: str, *args, **kwargs) -> Path:
    """Dispatch to one of the named transforms (``add_noise``, ``scale``, ...)."""
    try:
        fn = _TRANSFORMS[kind]
    except KeyError:
        raise DomainError(f"unknown transform {kind!r}") from None
    return fn(p, *args, **kwargs)


__all__ = [
    "ArfimaCoeffs",
    "FouParams",
    "arfima_ma_coeffs",
    "sample_arfima",
    "sample_fou",
    "fou_substeps",
    "sample_ar1",
    "stable_increments",
    "sample_stable_levy",
    "add_noise",
    "smooth_overlapping",
    "smooth_block",
    "sum_with",
    "scale",
    "shift",
    "transform_path",
    "fgn_to_fbm",
]
