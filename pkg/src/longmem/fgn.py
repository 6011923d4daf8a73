"""Exact fractional Gaussian noise / fractional Brownian motion generation.

Two square-root decompositions of the fGn covariance are provided:

* circulant embedding with FFT (O(n log n)); one complex pass yields two
  independent realizations,
* Cholesky factorization of the Toeplitz covariance (O(n^3) once, O(n^2) per
  draw), used as a fallback and as an independent reference.

Both decompositions are cached per ``(n, H)``.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.linalg import toeplitz

from .errors import DomainError, EmbeddingFailure, FactorizationFailure
from .rng import as_rng

PROCESS_TAGS = ("fgn", "fbm", "arfima", "fou", "ar1", "levy", "composite")

CLAMP_RTOL = 1e-8
CHOLESKY_MAX_N = 8192


@dataclass
class Path:
    """A sampled sequence with its grid step and generating parameters."""

    values: np.ndarray
    dt: float = 1.0
    process: str = "fgn"
    truth: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or self.values.size < 2:
            raise DomainError("a path needs at least 2 values")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("path values must be finite")
        if not self.dt > 0:
            raise DomainError(f"dt must be positive, got {self.dt}")
        if self.process not in PROCESS_TAGS:
            raise DomainError(f"unknown process tag {self.process!r}")

    def __len__(self) -> int:
        return self.values.size


def _check_hurst(H: float) -> float:
    H = float(H)
    if not 0.0 < H < 1.0:
        raise DomainError(f"Hurst exponent must lie in (0, 1), got {H}")
    return H


def fgn_autocov(k, H: float):
    """Autocovariance of unit-variance fGn at lag(s) ``k``."""
    H = _check_hurst(H)
    k = np.abs(np.asarray(k, dtype=np.float64))
    h2 = 2.0 * H
    out = 0.5 * (np.abs(k + 1.0) ** h2 - 2.0 * k**h2 + np.abs(k - 1.0) ** h2)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class FgnSpectrum:
    n: int
    hurst: float
    eigenvalues: np.ndarray
    clamped: float = 0.0  # largest |negative eigenvalue| set to zero

    @property
    def size(self) -> int:
        return self.eigenvalues.size


@dataclass(frozen=True)
class CholeskyFactor:
    n: int
    hurst: float
    lower: np.ndarray


def _embedding_size(n: int) -> int:
    m = 1 << max(0, int(n - 1).bit_length())
    return 2 * m


def _compute_spectrum(n: int, H: float) -> FgnSpectrum:
    size = _embedding_size(n)
    m = size // 2
    rho = fgn_autocov(np.arange(m + 1), H)
    row = np.concatenate([rho, rho[-2:0:-1]])
    eig = np.fft.fft(row).real
    top = float(eig.max())
    low = float(eig.min())
    if low < -CLAMP_RTOL * top:
        raise EmbeddingFailure(
            f"circulant embedding for n={n}, H={H} has eigenvalue {low:.3e}"
        )
    clamped = -low if low < 0 else 0.0
    eig = np.maximum(eig, 0.0)
    eig.setflags(write=False)
    return FgnSpectrum(n=n, hurst=H, eigenvalues=eig, clamped=clamped)


class _LRU:
    def __init__(self, maxsize: int):
        self.maxsize = maxsize
        self._data: OrderedDict = OrderedDict()
        self._lock = threading.Lock()

    def get(self, key):
        with self._lock:
            if key in self._data:
                self._data.move_to_end(key)
                return self._data[key]
        return None

    def put(self, key, value) -> None:
        with self._lock:
            self._data[key] = value
            self._data.move_to_end(key)
            while len(self._data) > self.maxsize:
                self._data.popitem(last=False)

    def clear(self) -> None:
        with self._lock:
            self._data.clear()

    def __len__(self) -> int:
        return len(self._data)


def _key(n: int, H: float) -> tuple[int, float]:
    return int(n), round(float(H), 12)


class FgnEngine:
    """Cached fGn generator.

    The counters ``spectrum_computations`` and ``factorizations`` record how
    often a decomposition was actually computed (cache misses).
    """

    def __init__(
        self,
        spectrum_cache: int = 64,
        factor_cache: int = 4,
        cholesky_max_n: int = CHOLESKY_MAX_N,
    ):
        self._spectra = _LRU(spectrum_cache)
        self._factors = _LRU(factor_cache)
        self.cholesky_max_n = cholesky_max_n
        self.spectrum_computations = 0
        self.factorizations = 0

    def clear(self) -> None:
        self._spectra.clear()
        self._factors.clear()

    # -- decompositions -------------------------------------------------
    def spectrum(self, n: int, H: float, cache: bool = True) -> FgnSpectrum:
        if n < 2:
            raise DomainError(f"n must be >= 2, got {n}")
        H = _check_hurst(H)
        key = _key(n, H)
        if cache:
            hit = self._spectra.get(key)
            if hit is not None:
                return hit
        spec = _compute_spectrum(int(n), H)
        self.spectrum_computations += 1
        if cache:
            self._spectra.put(key, spec)
        return spec

    def cholesky_factor(self, n: int, H: float) -> CholeskyFactor:
        H = _check_hurst(H)
        if n < 1:
            raise DomainError(f"n must be >= 1, got {n}")
        if n > self.cholesky_max_n:
            raise DomainError(
                f"Cholesky generation limited to n <= {self.cholesky_max_n}, got {n}"
            )
        key = _key(n, H)
        hit = self._factors.get(key)
        if hit is not None:
            return hit
        cov = toeplitz(fgn_autocov(np.arange(n), H))
        try:
            lower = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise FactorizationFailure(f"fGn covariance n={n}, H={H}: {exc}") from exc
        del cov
        self.factorizations += 1
        factor = CholeskyFactor(n=int(n), hurst=H, lower=lower)
        self._factors.put(key, factor)
        return factor

    # -- sampling ------------------------------------------------------
    def sample_pair_values(
        self, n: int, H: float, rng, cache: bool = True
    ) -> tuple[np.ndarray, np.ndarray]:
        rng = as_rng(rng)
        spec = self.spectrum(n, H, cache=cache)
        size = spec.size
        z = rng.standard_normal(size) + 1j * rng.standard_normal(size)
        w = np.fft.ifft(np.sqrt(spec.eigenvalues * size) * z)
        return w.real[:n].copy(), w.imag[:n].copy()

    def sample_fgn(self, n: int, H: float, rng, cache: bool = True) -> tuple[Path, Path]:
        a, b = self.sample_pair_values(n, H, rng, cache=cache)
        truth = {"H": float(H)}
        return (
            Path(a, 1.0, "fgn", dict(truth)),
            Path(b, 1.0, "fgn", dict(truth)),
        )

    def sample_fgn_batch(self, n: int, H: float, count: int, rng) -> np.ndarray:
        """``count`` standard fGn rows of length ``n`` sharing one Hurst value."""
        rng = as_rng(rng)
        spec = self.spectrum(n, H)
        size = spec.size
        half = (count + 1) // 2
        z = rng.standard_normal((half, size)) + 1j * rng.standard_normal((half, size))
        w = np.fft.ifft(np.sqrt(spec.eigenvalues * size) * z, axis=1)[:, :n]
        return np.concatenate([w.real, w.imag])[:count]

    def sample_fgn_cholesky(self, n: int, H: float, rng) -> Path:
        rng = as_rng(rng)
        factor = self.cholesky_factor(n, H)
        return Path(factor.lower @ rng.standard_normal(n), 1.0, "fgn", {"H": float(H)})

    def sample_fgn_values(self, n: int, H: float, rng) -> np.ndarray:
        """One fGn draw; falls back to Cholesky if the embedding fails."""
        try:
            return self.sample_pair_values(n, H, rng)[0]
        except EmbeddingFailure:
            return self.sample_fgn_cholesky(n, H, rng).values


def sample_fgn_mixed(n: int, hursts, rng) -> np.ndarray:
    """One fGn row per entry of ``hursts`` (no caching, vectorized).

    Uses the real part of each complex pass only, so rows are independent
    even when Hurst values repeat.
    """
    rng = as_rng(rng)
    hs = np.asarray(hursts, dtype=np.float64).reshape(-1)
    if np.any((hs <= 0) | (hs >= 1)):
        raise DomainError("Hurst exponents must lie in (0, 1)")
    size = _embedding_size(n)
    m = size // 2
    k = np.arange(m + 1, dtype=np.float64)
    h2 = 2.0 * hs[:, None]
    rho = 0.5 * ((k + 1.0) ** h2 - 2.0 * k**h2 + np.abs(k - 1.0) ** h2)
    rows = np.concatenate([rho, rho[:, -2:0:-1]], axis=1)
    eig = np.fft.fft(rows, axis=1).real
    top = eig.max(axis=1, keepdims=True)
    if np.any(eig < -CLAMP_RTOL * top):
        raise EmbeddingFailure("circulant embedding failed in mixed batch")
    eig = np.maximum(eig, 0.0)
    z = rng.standard_normal((hs.size, size)) + 1j * rng.standard_normal((hs.size, size))
    return np.fft.ifft(np.sqrt(eig * size) * z, axis=1).real[:, :n]


class FgnSampler:
    """Serves fGn paths one at a time, buffering the second path of each pass.

    The buffered path is only handed out for a request with identical
    ``(n, H)``; any other request discards it.
    """

    def __init__(self, rng, engine: FgnEngine | None = None, cache: bool = True):
        self.rng = as_rng(rng)
        self.engine = engine or default_engine()
        self.cache = cache
        self._pending: tuple[tuple[int, float], np.ndarray] | None = None
        self.passes = 0

    def next(self, n: int, H: float) -> Path:
        key = _key(n, H)
        if self._pending is not None and self._pending[0] == key:
            values = self._pending[1]
            self._pending = None
        else:
            a, b = self.engine.sample_pair_values(n, H, self.rng, cache=self.cache)
            self.passes += 1
            values = a
            self._pending = (key, b)
        return Path(values, 1.0, "fgn", {"H": float(H)})


_DEFAULT_ENGINE = FgnEngine()


def default_engine() -> FgnEngine:
    return _DEFAULT_ENGINE


def circulant_spectrum(n: int, H: float) -> FgnSpectrum:
    return _DEFAULT_ENGINE.spectrum(n, H)


def sample_fgn(n: int, H: float, rng) -> tuple[Path, Path]:
    """Two independent standard fGn paths from one FFT pass."""
    return _DEFAULT_ENGINE.sample_fgn(n, H, rng)


def sample_fgn_cholesky(n: int, H: float, rng) -> Path:
    return _DEFAULT_ENGINE.sample_fgn_cholesky(n, H, rng)


def fgn_to_fbm(fgn: Path, H: float, dt: float = 1.0) -> Path:
    """Scale fGn by ``dt**H`` and cumulate; the result starts at 0."""
    if fgn.process != "fgn":
        raise DomainError(f"expected an fgn path, got {fgn.process!r}")
    H = _check_hurst(H)
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    scale = 1.0 if dt == 1.0 else dt**H
    values = np.empty(fgn.values.size + 1)
    values[0] = 0.0
    np.cumsum(fgn.values * scale, out=values[1:])
    truth = dict(fgn.truth)
    truth["H"] = H
    return Path(values, dt, "fbm", truth)


def sample_fbm(
    n: int,
    H: float,
    sigma: float = 1.0,
    mu: float = 0.0,
    dt: float = 1.0,
    rng=None,
) -> Path:
    """Path of ``sigma * B^H_t + mu * t`` on ``t_k = k*dt``, k = 0..n."""
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    rng = as_rng(rng)
    noise = Path(_DEFAULT_ENGINE.sample_fgn_values(n, H, rng), 1.0, "fgn", {"H": H})
    base = fgn_to_fbm(noise, H, dt)
    values = base.values
    if sigma != 1.0:
        values = sigma * values
    if mu != 0.0:
        values = values + mu * dt * np.arange(values.size)
    truth = {"H": float(H), "sigma": float(sigma), "mu": float(mu)}
    return Path(values, dt, "fbm", truth)
