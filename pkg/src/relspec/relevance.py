"""Self-normalized tests for relevant differences in second-order dynamics.

For each hypothesis kind a pointwise squared distance ``d(eta, omega)`` is
formed from the sequential estimates of the two samples:

* operator:       eta^2 ||F_X(eta, w) - F_Y(eta, w)||_HS^2
* eigenprojector: eta^2 ||Pi_X,k(eta, w) - Pi_Y,k(eta, w)||_HS^2
* eigenvalue:     eta^2 (lambda_X,k(eta, w) - lambda_Y,k(eta, w))^2

With ``B(eta)`` the band integral of ``d(eta, .)`` the statistic is

    D = (B(1) - Delta) / V,    V^2 = (1 / (n-1)) sum_i (B(i/n) - (i/n)^2 B(1))^2

and the null of no relevant difference is rejected when ``D`` exceeds the
``1 - alpha`` quantile of the pivot law (see :mod:`relspec.pivot`).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np

from .core import FunctionalSeries, center
from .eigen import SeparableSeries3D, batched_eigh, directional_surface
from .pivot import PivotSample, quantile
from .spectral import (BandwidthRule, SpectralEstimate, WindowSpec, eta_grid, frequency_grid,
                       spectral_surface)

HypothesisKind = Literal["operator", "eigenprojector", "eigenvalue"]
_KIND_ALIASES = {"projector": "eigenprojector"}


class SpecError(ValueError):
    """Invalid hypothesis or estimation configuration."""


@dataclass(frozen=True)
class HypothesisSpec:
    """What is tested and at which level.

    ``measure`` selects how the frequency integral is normalized:
    ``'uniform'`` averages over the band (integral divided by ``b - a``),
    ``'lebesgue'`` is the plain integral. A single-frequency band always
    means point evaluation.
    """

    kind: HypothesisKind = "operator"
    k: int = 1
    delta: float = 0.0
    band: tuple[float, float] = (0.0, np.pi)
    alpha: float = 0.05
    nu_n: int = 20
    dependence: Literal["independent", "dependent"] = "independent"
    measure: Literal["uniform", "lebesgue"] = "uniform"

    def __post_init__(self):
        kind = _KIND_ALIASES.get(self.kind, self.kind)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "band", (float(self.band[0]), float(self.band[1])))
        if kind not in ("operator", "eigenprojector", "eigenvalue"):
            raise SpecError(f"unknown hypothesis kind {self.kind!r}")
        if self.k < 1:
            raise SpecError("component k must be positive")
        if not self.delta >= 0 or not np.isfinite(self.delta):
            raise SpecError("threshold delta must be a finite value >= 0")
        a, b = self.band
        if not 0 <= a <= b <= np.pi + 1e-12:
            raise SpecError(f"band [{a}, {b}] not inside [0, pi]")
        if not 0 < self.alpha < 1:
            raise SpecError("alpha must lie in (0, 1)")
        if self.nu_n < 3:
            raise SpecError("nu_n must be >= 3")
        if self.dependence not in ("independent", "dependent"):
            raise SpecError("dependence must be 'independent' or 'dependent'")
        if self.measure not in ("uniform", "lebesgue"):
            raise SpecError("measure must be 'uniform' or 'lebesgue'")


@dataclass(frozen=True)
class EstimationConfig:
    window: WindowSpec = field(default_factory=WindowSpec)
    bandwidth: BandwidthRule = field(default_factory=BandwidthRule)
    n_freq: int = 64
    center: bool = True
    gap_tol: float = 0.01


@dataclass(frozen=True)
class DistanceCurve:
    """Pointwise squared distances on the ``(eta, omega)`` grid."""

    kind: str
    etas: np.ndarray
    freqs: np.ndarray
    values: np.ndarray  # (n_eta, n_freq)
    gap_warnings: dict = field(default_factory=dict)


@dataclass(frozen=True)
class TestResult:
    statistic: float
    distance: float
    normalizer: float
    delta: float
    quantile: float
    p_value: float
    decision: Literal["reject", "accept"]
    degenerate: bool
    diagnostics: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    @property
    def reject(self) -> bool:
        return self.decision == "reject"

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("statistic",):
            v = out[key]
            if np.isinf(v):
                out[key] = "inf" if v > 0 else "-inf"
        return out


def band_integrate(values, freqs, band=None) -> float | np.ndarray:
    """Trapezoidal integral over ``band`` of values sampled at ``freqs``.

    ``values`` may carry leading axes; integration runs over the last one.
    The grid must cover the band exactly. A single-point band returns the
    value at that point.
    """
    values = np.asarray(values, dtype=float)
    freqs = np.asarray(freqs, dtype=float)
    if values.shape[-1] != freqs.size:
        raise ValueError("values and frequency grid differ in length")
    a, b = (freqs[0], freqs[-1]) if band is None else map(float, band)
    tol = 1e-9 * max(1.0, abs(b))
    if abs(freqs[0] - a) > tol or abs(freqs[-1] - b) > tol:
        raise ValueError(f"band [{a}, {b}] not covered by the frequency grid")
    if a == b or freqs.size == 1:
        if freqs.size != 1:
            raise ValueError("a single-frequency band needs a one-point grid")
        return values[..., 0]
    return np.trapezoid(values, freqs, axis=-1)


def band_mean(values, freqs, band, measure: str = "uniform"):
    total = band_integrate(values, freqs, band)
    a, b = band
    if measure == "uniform" and b > a:
        return total / (b - a)
    return total


def distance_curve(surf_X: SpectralEstimate, surf_Y: SpectralEstimate, spec: HypothesisSpec,
                   gap_tol: float = 0.01) -> DistanceCurve:
    """Squared pointwise distances ``eta^2 * ||.||^2`` between two spectral surfaces."""
    if surf_X.ops.shape[-1] != surf_Y.ops.shape[-1]:
        raise SpecError("surfaces differ in dimension")
    if not (np.array_equal(surf_X.etas, surf_Y.etas) and np.array_equal(surf_X.freqs, surf_Y.freqs)):
        raise SpecError("surfaces are on different (eta, omega) grids")
    etas = surf_X.etas
    if spec.kind != "operator" and spec.k > surf_X.d:
        raise SpecError(f"component k={spec.k} exceeds dimension {surf_X.d}")
    if surf_Y is surf_X:
        return DistanceCurve(spec.kind, etas, surf_X.freqs, np.zeros(surf_X.ops.shape[:2]))
    scale = (etas ** 2)[:, None]
    warnings: dict = {}
    if spec.kind == "operator":
        diff = surf_X.ops - surf_Y.ops
        raw = np.sum(diff.real ** 2 + diff.imag ** 2, axis=(-2, -1))
    else:
        d = surf_X.d
        k = spec.k
        keep = min(k + 1, d)
        lx, vx = batched_eigh(surf_X.ops, keep)
        ly, vy = batched_eigh(surf_Y.ops, keep)
        if spec.kind == "eigenprojector":
            overlap = np.einsum("...i,...i->...", np.conj(vy[..., k - 1]), vx[..., k - 1])
            raw = _projector_raw(np.abs(overlap) ** 2)
        else:
            raw = (lx[..., k - 1] - ly[..., k - 1]) ** 2
        if keep > k:
            warnings = {"X": _gap_failures(lx[-1], k, gap_tol, surf_X.freqs),
                        "Y": _gap_failures(ly[-1], k, gap_tol, surf_Y.freqs)}
    return DistanceCurve(spec.kind, etas, surf_X.freqs, scale * raw, warnings)


def _projector_raw(overlap_sq: np.ndarray) -> np.ndarray:
    raw = np.clip(2.0 - 2.0 * overlap_sq, 0.0, 2.0)
    # |<v, v>|^2 of unit vectors is 1 only up to rounding
    raw[raw < 16 * np.finfo(float).eps] = 0.0
    return raw


def _gap_failures(values: np.ndarray, k: int, tol: float, freqs) -> list[float]:
    """Frequencies (at eta = 1) where the k-th eigenvalue is not separated."""
    gap = values[:, k - 1] - values[:, k]
    if k > 1:
        gap = np.minimum(gap, values[:, k - 2] - values[:, k - 1])
    bad = gap <= tol * values[:, 0]
    return [float(w) for w in np.asarray(freqs)[bad]]


def _trajectory(curve: DistanceCurve, band, measure: str) -> np.ndarray:
    return np.asarray(band_mean(curve.values, curve.freqs, band, measure), dtype=float)


def self_normalizer(curve: DistanceCurve, band=None, measure: str = "uniform") -> float:
    """Self-normalizing scale built from the trajectory ``eta -> B(eta)``."""
    band = (curve.freqs[0], curve.freqs[-1]) if band is None else band
    B = _trajectory(curve, band, measure)
    etas = curve.etas
    if etas[-1] != 1.0 or etas.size < 2:
        raise ValueError("eta grid must end at 1 and contain interior points")
    inner = B[:-1] - etas[:-1] ** 2 * B[-1]
    return float(np.sqrt(np.mean(inner ** 2)))


def decide(distance: float, normalizer: float, delta: float, pivot: PivotSample, alpha: float,
           trajectory_scale: float | None = None) -> tuple[float, float, float, str, bool]:
    """Statistic, quantile, p-value, decision and degeneracy flag."""
    q = quantile(pivot, 1 - alpha)
    scale = max(abs(distance), delta, trajectory_scale or 0.0)
    degenerate = normalizer == 0.0 or normalizer <= 1e-12 * scale
    if degenerate:
        stat = np.inf if distance > delta else -np.inf
    else:
        stat = (distance - delta) / normalizer
    p = pivot.tail_probability(stat)
    decision = "reject" if stat > q else "accept"
    return float(stat), float(q), float(p), decision, bool(degenerate)


def relevant_test(X: FunctionalSeries, Y: FunctionalSeries, spec: HypothesisSpec,
                  pivot: PivotSample, config: EstimationConfig | None = None) -> TestResult:
    """Run the relevant-difference test of ``spec`` on two functional series."""
    config = config or EstimationConfig()
    if pivot.nu_n != spec.nu_n:
        raise SpecError(f"pivot sample built for nu_n={pivot.nu_n}, hypothesis uses {spec.nu_n}")
    if X.d != Y.d:
        raise SpecError("series differ in basis dimension")
    bx, by = config.bandwidth(X.T), config.bandwidth(Y.T)
    if spec.dependence == "dependent" and (X.T != Y.T or bx != by):
        raise SpecError("dependent samples need T1 == T2 and equal bandwidths (ratio-rate assumption)")
    if spec.kind != "operator" and spec.k > X.d:
        raise SpecError(f"component k={spec.k} exceeds dimension {X.d}")
    same = Y is X
    if config.center:
        X = center(X)
        Y = X if same else center(Y)
    etas = eta_grid(spec.nu_n)
    n_freq = 1 if spec.band[0] == spec.band[1] else config.n_freq
    sx = spectral_surface(X, spec.band, n_freq, etas, config.window, bx)
    sy = sx if Y is X else spectral_surface(Y, spec.band, n_freq, etas, config.window, by)
    curve = distance_curve(sx, sy, spec, config.gap_tol)
    B = _trajectory(curve, spec.band, spec.measure)
    inner = B[:-1] - etas[:-1] ** 2 * B[-1]
    V = float(np.sqrt(np.mean(inner ** 2)))
    distance = float(B[-1])
    stat, q, p, decision, degenerate = decide(distance, V, spec.delta, pivot, spec.alpha,
                                              float(np.max(np.abs(B))))
    diagnostics = {
        "kind": spec.kind,
        "k": spec.k,
        "band": list(spec.band),
        "measure": spec.measure,
        "n_freq": int(n_freq),
        "nu_n": spec.nu_n,
        "T": [X.T, Y.T],
        "bandwidth": [bx, by],
        "window": config.window.kind,
        "pivot": pivot.provenance(),
    }
    if curve.gap_warnings:
        diagnostics["eigengap_warnings"] = {
            key: len(v) for key, v in curve.gap_warnings.items()}
    return TestResult(stat, distance, V, float(spec.delta), q, p, decision, degenerate, diagnostics)


# -- separable 3-D operators ---------------------------------------------------

@dataclass(frozen=True)
class SeparableSurface:
    """Directional sequential estimates of one subject on a shared ``(eta, omega)`` grid.

    ``ops[i]`` has shape ``(n_eta, n_freq, g_i, g_i)``; the full operator at a
    grid point is the Kronecker product of the three directional matrices.
    """

    etas: np.ndarray
    freqs: np.ndarray
    ops: tuple
    T: int
    b: float


def separable_surface(series: SeparableSeries3D, band, n_freq: int, etas,
                      window: WindowSpec | None = None, b: float | None = None) -> SeparableSurface:
    freqs = frequency_grid(band, n_freq)
    b = BandwidthRule()(series.T) if b is None else float(b)
    ops = tuple(directional_surface(series, i, freqs, etas, window, b) for i in (1, 2, 3))
    return SeparableSurface(np.asarray(etas, dtype=float), freqs, ops, series.T, b)


def _kth_triple(values, k: int):
    """k-th largest triple product per grid point.

    ``values`` holds three ``(..., p_i)`` descending eigenvalue arrays; negative
    estimates are clipped to zero before ordering. Returns the product and the
    0-based index triple, each with the leading grid shape.
    """
    l1, l2, l3 = (np.clip(v, 0.0, None) for v in values)
    prod = l1[..., :, None, None] * l2[..., None, :, None] * l3[..., None, None, :]
    shape = prod.shape[:-3]
    flat = prod.reshape(shape + (-1,))
    order = np.argsort(-flat, axis=-1, kind="stable")[..., k - 1]
    idx = np.unravel_index(order, prod.shape[-3:])
    return np.take_along_axis(flat, order[..., None], -1)[..., 0], idx


def separable_distance_curve(SX: SeparableSurface, SY: SeparableSurface,
                             spec: HypothesisSpec) -> DistanceCurve:
    """Pointwise squared distances between two Kronecker-structured surfaces."""
    if not (np.array_equal(SX.etas, SY.etas) and np.array_equal(SX.freqs, SY.freqs)):
        raise SpecError("surfaces are on different (eta, omega) grids")
    if any(a.shape != b.shape for a, b in zip(SX.ops, SY.ops)):
        raise SpecError("subjects differ in directional dimensions")
    etas = SX.etas
    if SY is SX:
        return DistanceCurve(spec.kind, etas, SX.freqs, np.zeros(SX.ops[0].shape[:2]))
    if spec.kind == "operator":
        # ||A1 x A2 x A3 - B1 x B2 x B3||^2 expanded through per-direction inner products
        def inner(A, B):
            return np.einsum("...ij,...ij->...", A, np.conj(B))
        aa = np.prod([inner(A, A).real for A in SX.ops], axis=0)
        bb = np.prod([inner(B, B).real for B in SY.ops], axis=0)
        ab = np.prod([inner(A, B) for A, B in zip(SX.ops, SY.ops)], axis=0).real
        raw = np.clip(aa + bb - 2.0 * ab, 0.0, None)
    else:
        k = spec.k
        dims = [A.shape[-1] for A in SX.ops]
        if k > int(np.prod(dims)):
            raise SpecError(f"component k={k} exceeds dimension {int(np.prod(dims))}")
        eig_x = [batched_eigh(A, min(k, g)) for A, g in zip(SX.ops, dims)]
        eig_y = [batched_eigh(B, min(k, g)) for B, g in zip(SY.ops, dims)]
        lx, ix = _kth_triple([e[0] for e in eig_x], k)
        ly, iy = _kth_triple([e[0] for e in eig_y], k)
        if spec.kind == "eigenvalue":
            raw = (lx - ly) ** 2
        else:
            overlap = np.ones_like(lx)
            for d in range(3):
                vx = np.take_along_axis(eig_x[d][1], ix[d][..., None, None], -1)[..., 0]
                vy = np.take_along_axis(eig_y[d][1], iy[d][..., None, None], -1)[..., 0]
                overlap = overlap * np.abs(np.einsum("...i,...i->...", np.conj(vy), vx)) ** 2
            raw = _projector_raw(overlap)
    return DistanceCurve(spec.kind, etas, SX.freqs, (etas ** 2)[:, None] * raw)


def separable_test(X: SeparableSeries3D, Y: SeparableSeries3D, spec: HypothesisSpec,
                   pivot: PivotSample, config: EstimationConfig | None = None,
                   surfaces: tuple[SeparableSurface, SeparableSurface] | None = None) -> TestResult:
    """Relevant-difference test between two separable 3-D series.

    ``surfaces`` may carry precomputed estimates (e.g. when one subject enters
    several pairs); they must match ``spec`` and ``config``.
    """
    config = config or EstimationConfig()
    if pivot.nu_n != spec.nu_n:
        raise SpecError(f"pivot sample built for nu_n={pivot.nu_n}, hypothesis uses {spec.nu_n}")
    if X.shape != Y.shape:
        raise SpecError("subjects differ in axis sizes")
    bx, by = config.bandwidth(X.T), config.bandwidth(Y.T)
    if spec.dependence == "dependent" and (X.T != Y.T or bx != by):
        raise SpecError("dependent samples need T1 == T2 and equal bandwidths (ratio-rate assumption)")
    etas = eta_grid(spec.nu_n)
    n_freq = 1 if spec.band[0] == spec.band[1] else config.n_freq
    if surfaces is None:
        prep = (lambda s: s.centered()) if config.center else (lambda s: s)
        sx = separable_surface(prep(X), spec.band, n_freq, etas, config.window, bx)
        sy = sx if Y is X else separable_surface(prep(Y), spec.band, n_freq, etas, config.window, by)
    else:
        sx, sy = surfaces
    curve = separable_distance_curve(sx, sy, spec)
    B = _trajectory(curve, spec.band, spec.measure)
    V = float(np.sqrt(np.mean((B[:-1] - etas[:-1] ** 2 * B[-1]) ** 2)))
    stat, q, p, decision, degenerate = decide(float(B[-1]), V, spec.delta, pivot, spec.alpha,
                                              float(np.max(np.abs(B))))
    diagnostics = {"kind": spec.kind, "k": spec.k, "band": list(spec.band), "measure": spec.measure,
                   "n_freq": int(n_freq), "nu_n": spec.nu_n, "T": [X.T, Y.T],
                   "bandwidth": [bx, by], "window": config.window.kind, "separable": True,
                   "pivot": pivot.provenance()}
    return TestResult(stat, float(B[-1]), V, float(spec.delta), q, p, decision, degenerate,
                      diagnostics)
