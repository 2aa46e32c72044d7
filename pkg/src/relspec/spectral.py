"""Lag-window estimates of spectral density operators.

The sequential estimator built from the first ``m = floor(eta * T)`` curves is

    F(eta, omega) = (1 / m) sum_{s,t <= m} (2 pi)^-1 w(b (t - s)) e^{i omega (t - s)} X_s (x) X_t

which, after grouping terms by lag ``h = t - s``, equals

    (2 pi)^-1 sum_{|h| < m} w(b h) e^{-i omega h} C_h^{(m)},
    C_h^{(m)} = (1 / m) sum_t X_{t+h} X_t^T,   C_{-h} = C_h^T.

The lag-sum form is what :func:`spectral_surface` evaluates; the double sum is
kept as :func:`naive_sequential_estimate` for cross-checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from .core import FunctionalSeries, OperatorMatrix

WindowKind = Literal["daniell", "bartlett", "parzen", "custom"]


def _daniell(x):
    return np.sinc(x)


def _bartlett(x):
    return np.clip(1.0 - np.abs(x), 0.0, None)


def _parzen(x):
    a = np.abs(np.asarray(x, dtype=float))
    return np.where(a <= 0.5, 1 - 6 * a ** 2 + 6 * a ** 3,
                    np.where(a <= 1.0, 2 * (1 - a) ** 3, 0.0))


_WINDOWS = {
    # kind: (evaluator, kappa = int w^2, sup |w|)
    "daniell": (_daniell, 1.0, 1.0),
    "bartlett": (_bartlett, 2.0 / 3.0, 1.0),
    "parzen": (_parzen, 151.0 / 280.0, 1.0),
}


@dataclass(frozen=True)
class WindowSpec:
    """Lag window ``w`` with ``w(0) = 1`` and ``kappa = int w(x)^2 dx``.

    User-supplied evaluators are accepted with ``checked=False``: evenness is
    probed on a few points, the integrability and tail conditions are not.
    """

    kind: WindowKind = "daniell"
    func: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False, compare=False)
    kappa: float | None = None
    checked: bool = True

    def __post_init__(self):
        if self.kind == "custom":
            if self.func is None:
                raise ValueError("custom window needs an evaluator")
            x = np.linspace(0.05, 3.0, 13)
            if not np.allclose(self.func(x), self.func(-x), atol=1e-14):
                raise ValueError("window must be even")
            if abs(float(self.func(np.array([0.0]))[0]) - 1.0) > 1e-12:
                raise ValueError("window must satisfy w(0) = 1")
            object.__setattr__(self, "checked", False)
        elif self.kind in _WINDOWS:
            f, kappa, _ = _WINDOWS[self.kind]
            object.__setattr__(self, "func", f)
            object.__setattr__(self, "kappa", kappa)
        else:
            raise ValueError(f"unknown window kind {self.kind!r}")

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float)

    @property
    def bound(self) -> float | None:
        return _WINDOWS[self.kind][2] if self.kind in _WINDOWS else None


@dataclass(frozen=True)
class BandwidthRule:
    """``b_T = T^-exponent`` (power-law) or a fixed value."""

    kind: Literal["power-law", "fixed"] = "power-law"
    exponent: float = 1.0 / 3.0
    value: float | None = None

    def __call__(self, T: int) -> float:
        if self.kind == "fixed":
            if self.value is None:
                raise ValueError("fixed bandwidth rule needs a value")
            b = float(self.value)
        else:
            b = float(T) ** (-self.exponent)
        if not 0 < b <= 1:
            raise ValueError(f"bandwidth {b} outside (0, 1]")
        if b * T < 4:
            raise ValueError(f"bandwidth {b} too small for T={T}: need b*T >= 4")
        return b


@dataclass(frozen=True)
class SpectralEstimate:
    """Sequential lag-window estimates on an ``(eta, omega)`` grid.

    ``ops[i, j]`` is the Hermitian ``d x d`` estimate at ``etas[i]``,
    ``freqs[j]``.
    """

    freqs: np.ndarray
    etas: np.ndarray
    ops: np.ndarray
    T: int
    b: float
    window: WindowSpec

    @property
    def d(self) -> int:
        return self.ops.shape[-1]

    def operator(self, eta_index: int, freq_index: int) -> OperatorMatrix:
        return OperatorMatrix(self.ops[eta_index, freq_index], float(self.freqs[freq_index]))


def _coeffs(series) -> np.ndarray:
    return series.coeffs if isinstance(series, FunctionalSeries) else np.asarray(series, dtype=float)


def autocov_lag(series, h: int, m: int) -> np.ndarray:
    """``C_h^{(m)} = (1/m) sum_t X_{t+h} X_t^T`` over the first ``m`` curves."""
    X = _coeffs(series)
    if not 0 < m <= X.shape[0]:
        raise ValueError(f"m={m} outside 1..T")
    if abs(h) >= m:
        raise ValueError(f"lag |h|={abs(h)} must be smaller than m={m}")
    if h < 0:
        return autocov_lag(X, -h, m).T
    return X[h:m].T @ X[: m - h] / m


def autocov_sequence(series, m: int) -> np.ndarray:
    """All ``C_h^{(m)}`` for ``h = 0..m-1`` as an ``(m, d, d)`` array (FFT based)."""
    X = _coeffs(series)[:m]
    nfft = 1 << int(np.ceil(np.log2(2 * m)))
    Xf = np.fft.rfft(X, n=nfft, axis=0)
    cross = np.fft.irfft(Xf[:, :, None] * np.conj(Xf[:, None, :]), n=nfft, axis=0)
    # cross[h, i, j] = sum_t X_{t+h, i} X_{t, j}
    return cross[:m] / m


def _check_b(b: float):
    if not 0 < b <= 1:
        raise ValueError(f"bandwidth b={b} outside (0, 1]")


def _window_length(T: int, eta: float) -> int:
    if not 0 < eta <= 1:
        raise ValueError(f"eta={eta} outside (0, 1]")
    m = int(np.floor(eta * T + 1e-9))
    if m < 2:
        raise ValueError("window too short")
    return m


def _lag_sum(C: np.ndarray, freqs: np.ndarray, window: WindowSpec, b: float) -> np.ndarray:
    """Evaluate the lag-sum form at every frequency; returns ``(n_freq, d, d)``."""
    m, d, _ = C.shape
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    lags = np.arange(1, m)
    w = window(b * lags)
    phase = np.outer(freqs, lags)
    Wc = np.cos(phase) * w
    Ws = np.sin(phase) * w
    Ch = C[1:].reshape(m - 1, d * d)
    ChT = C[1:].transpose(0, 2, 1).reshape(m - 1, d * d)
    re = (Wc @ (Ch + ChT)).reshape(-1, d, d) + C[0]
    im = (Ws @ (ChT - Ch)).reshape(-1, d, d)
    return (re + 1j * im) / (2 * np.pi)


def sequential_estimate(series, eta: float, omega: float, window: WindowSpec | None = None,
                        b: float | None = None) -> OperatorMatrix:
    """Lag-window estimate from the first ``floor(eta T)`` curves at frequency ``omega``."""
    window = window or WindowSpec()
    X = _coeffs(series)
    if b is None:
        b = BandwidthRule()(X.shape[0])
    _check_b(b)
    m = _window_length(X.shape[0], eta)
    C = autocov_sequence(X, m)
    return OperatorMatrix(_lag_sum(C, [omega], window, b)[0], float(omega))


def naive_sequential_estimate(series, eta: float, omega: float, window: WindowSpec | None = None,
                              b: float | None = None) -> np.ndarray:
    """Direct O(m^2) double sum over all pairs ``(s, t)``; reference implementation."""
    window = window or WindowSpec()
    X = _coeffs(series)
    if b is None:
        b = BandwidthRule()(X.shape[0])
    _check_b(b)
    m = _window_length(X.shape[0], eta)
    d = X.shape[1]
    out = np.zeros((d, d), dtype=complex)
    for s in range(m):
        for t in range(m):
            weight = window(b * (t - s)) * np.exp(1j * omega * (t - s)) / (2 * np.pi)
            out += weight * np.outer(X[s], X[t])
    return out / m


def frequency_grid(band, n_freq: int) -> np.ndarray:
    a, b = map(float, band)
    if not 0 <= a <= b <= np.pi + 1e-12:
        raise ValueError(f"band [{a}, {b}] not inside [0, pi]")
    b = min(b, np.pi)
    if n_freq < 1:
        raise ValueError("n_freq must be >= 1")
    if a == b:
        return np.array([a])
    if n_freq == 1:
        raise ValueError("a non-degenerate band needs n_freq >= 2")
    return np.linspace(a, b, n_freq)


def eta_grid(nu_n: int) -> np.ndarray:
    """``{i / n : i = 1..n-1}`` followed by 1."""
    if nu_n < 2:
        raise ValueError("nu_n must be >= 2")
    return np.append(np.arange(1, nu_n) / nu_n, 1.0)


def spectral_surface(series, band=(0.0, np.pi), n_freq: int = 64, eta_grid=None,
                     window: WindowSpec | None = None, bandwidth: BandwidthRule | float | None = None
                     ) -> SpectralEstimate:
    """Sequential estimates on the full ``(eta, omega)`` product grid.

    Autocovariances are computed once per ``eta`` and shared across
    frequencies.
    """
    window = window or WindowSpec()
    X = _coeffs(series)
    T = X.shape[0]
    if bandwidth is None:
        bandwidth = BandwidthRule()
    b = bandwidth(T) if isinstance(bandwidth, BandwidthRule) else float(bandwidth)
    _check_b(b)
    freqs = frequency_grid(band, n_freq)
    etas = np.asarray([1.0] if eta_grid is None else eta_grid, dtype=float)
    if etas.size == 0:
        raise ValueError("empty eta grid")
    if np.any(np.diff(etas) <= 0):
        raise ValueError("eta grid must be strictly increasing")
    ops = np.empty((etas.size, freqs.size, X.shape[1], X.shape[1]), dtype=complex)
    for i, eta in enumerate(etas):
        m = _window_length(T, eta)
        ops[i] = _lag_sum(autocov_sequence(X, m), freqs, window, b)
    return SpectralEstimate(freqs, etas, ops, T, b, window)
