"""Functional observations in an orthonormalized basis and Hilbert-Schmidt geometry.

Curves are stored as coefficient vectors with respect to an orthonormal
system obtained from the user basis through a single change of coordinates.
Once data live in these coordinates, the Hilbert-Schmidt inner product of two
operators is the Frobenius inner product of their matrices, so every later
module can work with plain complex matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.interpolate import BSpline

BasisKind = Literal["fourier", "bspline", "raw-grid"]

_GRAM_TOL = 1e-10


class BasisError(ValueError):
    """Raised when a basis cannot be built or evaluated as requested."""


@dataclass(frozen=True)
class BasisSpec:
    """A finite basis on a closed interval together with its orthonormalizer.

    Parameters
    ----------
    kind : {'fourier', 'bspline', 'raw-grid'}
    dimension : int
        Number of basis functions ``d``.
    domain : tuple of float
        Closed interval on which the functions live.
    gram : ndarray, shape (d, d)
        Inner products of the (raw) basis functions.
    orthonormalizer : ndarray, shape (d, d)
        Matrix ``R`` with ``R.T @ gram @ R == I``. Orthonormal functions are
        ``phi @ R``; coordinates transform as ``z = inv(R) @ c``.
    constant : bool
        Fourier only: whether the constant function is the first element.
    """

    kind: BasisKind
    dimension: int
    domain: tuple[float, float] = (0.0, 1.0)
    gram: np.ndarray = field(default=None, repr=False)
    orthonormalizer: np.ndarray = field(default=None, repr=False)
    constant: bool = True
    grid: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.dimension < 1:
            raise BasisError("basis dimension must be positive")
        lo, hi = self.domain
        if not hi > lo:
            raise BasisError("basis domain must be a non-degenerate interval")
        gram = self.gram
        if gram is None:
            gram = _default_gram(self)
        gram = np.asarray(gram, dtype=float)
        if gram.shape != (self.dimension, self.dimension):
            raise BasisError("gram matrix has wrong shape")
        if not np.allclose(gram, gram.T, atol=1e-12):
            raise BasisError("gram matrix is not symmetric")
        try:
            chol = np.linalg.cholesky(gram)
        except np.linalg.LinAlgError as exc:
            raise BasisError("gram matrix is not positive definite") from exc
        R = self.orthonormalizer
        if R is None:
            R = np.linalg.inv(chol).T
        R = np.asarray(R, dtype=float)
        if np.max(np.abs(R.T @ gram @ R - np.eye(self.dimension))) > _GRAM_TOL:
            raise BasisError("orthonormalizer does not whiten the gram matrix")
        gram.setflags(write=False)
        R.setflags(write=False)
        object.__setattr__(self, "gram", gram)
        object.__setattr__(self, "orthonormalizer", R)

    # -- constructors ------------------------------------------------------
    @classmethod
    def fourier(cls, dimension: int, domain=(0.0, 1.0), constant: bool = True) -> "BasisSpec":
        """Fourier system ``1, sqrt2 sin(2 pi j x), sqrt2 cos(2 pi j x), ...`` (orthonormal)."""
        return cls("fourier", dimension, tuple(domain), constant=constant)

    @classmethod
    def bspline(cls, dimension: int, domain=(0.0, 1.0)) -> "BasisSpec":
        """Cubic B-splines on ``dimension - 2`` equispaced breakpoints."""
        if dimension < 4:
            raise BasisError("cubic B-spline basis needs dimension >= 4")
        return cls("bspline", dimension, tuple(domain))

    @classmethod
    def raw_grid(cls, grid) -> "BasisSpec":
        """Point-evaluation basis on a grid, with discrete-mean inner product."""
        grid = np.asarray(grid, dtype=float)
        lo, hi = (float(grid[0]), float(grid[-1])) if grid.size > 1 else (0.0, 1.0)
        if not hi > lo:
            lo, hi = 0.0, 1.0
        return cls("raw-grid", grid.size, (lo, hi), grid=grid)

    # -- evaluation --------------------------------------------------------
    def evaluate(self, x) -> np.ndarray:
        """Raw basis functions at points ``x``, shape ``(len(x), d)``."""
        x = np.asarray(x, dtype=float)
        lo, hi = self.domain
        if self.kind == "fourier":
            u = (x - lo) / (hi - lo)
            scale = 1.0 / np.sqrt(hi - lo)
            cols = []
            if self.constant:
                cols.append(np.ones_like(u))
            j = 1
            while len(cols) < self.dimension:
                cols.append(np.sqrt(2.0) * np.sin(2 * np.pi * j * u))
                if len(cols) < self.dimension:
                    cols.append(np.sqrt(2.0) * np.cos(2 * np.pi * j * u))
                j += 1
            return scale * np.column_stack(cols)
        if self.kind == "bspline":
            t = _bspline_knots(self)
            xc = np.clip(x, lo, hi)
            return BSpline.design_matrix(xc, t, 3).toarray()
        if self.grid is None or x.shape != self.grid.shape or not np.allclose(x, self.grid):
            raise BasisError("raw-grid basis can only be evaluated on its own grid")
        return np.eye(self.dimension)


def _bspline_knots(basis: BasisSpec) -> np.ndarray:
    lo, hi = basis.domain
    breaks = np.linspace(lo, hi, basis.dimension - 2)
    return np.concatenate([[lo] * 3, breaks, [hi] * 3])


def _default_gram(basis: BasisSpec) -> np.ndarray:
    d = basis.dimension
    if basis.kind == "fourier":
        return np.eye(d)
    if basis.kind == "raw-grid":
        return np.eye(d) / d
    # B-splines are piecewise cubic: 4-point Gauss-Legendre per knot span is exact.
    lo, hi = basis.domain
    breaks = np.linspace(lo, hi, d - 2)
    nodes, weights = np.polynomial.legendre.leggauss(4)
    xs, ws = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        xs.append(0.5 * (b - a) * nodes + 0.5 * (a + b))
        ws.append(0.5 * (b - a) * weights)
    xs, ws = np.concatenate(xs), np.concatenate(ws)
    t = np.concatenate([[lo] * 3, breaks, [hi] * 3])
    B = BSpline.design_matrix(np.clip(xs, lo, hi), t, 3).toarray()
    return (B * ws[:, None]).T @ B


@dataclass(frozen=True)
class FunctionalSeries:
    """Curves ``X_1..X_T`` as rows of orthonormal coordinates.

    Attributes
    ----------
    coeffs : ndarray, shape (T, d)
    basis : BasisSpec
    centered : bool
    reconstruction_error : float or None
        Relative L2 error of the grid round trip, when built from raw samples.
    """

    coeffs: np.ndarray
    basis: BasisSpec
    centered: bool = False
    reconstruction_error: float | None = None

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=float)
        if coeffs.ndim != 2:
            raise ValueError("coefficients must be a T x d matrix")
        if coeffs.shape[0] < 2:
            raise ValueError("a functional series needs T >= 2 observations")
        if coeffs.shape[1] != self.basis.dimension:
            raise ValueError("coefficient width does not match basis dimension")
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("functional series contains non-finite values")
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def T(self) -> int:
        return self.coeffs.shape[0]

    @property
    def d(self) -> int:
        return self.coeffs.shape[1]

    def scaled(self, c: float) -> "FunctionalSeries":
        return FunctionalSeries(c * self.coeffs, self.basis, self.centered)

    def reconstruct(self, grid) -> np.ndarray:
        """Curves evaluated on ``grid`` (shape ``(T, len(grid))``)."""
        Phi = self.basis.evaluate(grid) @ self.basis.orthonormalizer
        return self.coeffs @ Phi.T


def project_to_basis(raw, basis: BasisSpec, grid=None) -> FunctionalSeries:
    """Least-squares projection of sampled curves onto ``basis``.

    Parameters
    ----------
    raw : array_like, shape (T, G)
        Curve samples, one row per time point.
    basis : BasisSpec
    grid : array_like, optional
        Sample locations; equispaced on the basis domain when omitted.

    Returns
    -------
    FunctionalSeries
        Orthonormal coordinates; ``reconstruction_error`` holds the relative
        L2 error of the fitted curves on the grid.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2:
        raise ValueError("raw samples must be a T x G matrix")
    T, G = raw.shape
    if grid is None:
        grid = basis.grid if basis.kind == "raw-grid" else np.linspace(*basis.domain, G)
    grid = np.asarray(grid, dtype=float)
    if grid.shape != (G,):
        raise ValueError("grid length does not match sample width")
    if G < basis.dimension:
        raise BasisError("basis not identifiable on grid")
    design = basis.evaluate(grid)
    if np.linalg.matrix_rank(design) < basis.dimension:
        raise BasisError("basis not identifiable on grid")
    c, *_ = np.linalg.lstsq(design, raw.T, rcond=None)
    fitted = (design @ c).T
    denom = np.linalg.norm(raw)
    err = float(np.linalg.norm(raw - fitted) / denom) if denom > 0 else 0.0
    z = np.linalg.solve(basis.orthonormalizer, c).T
    return FunctionalSeries(z, basis, centered=False, reconstruction_error=err)


def center(series: FunctionalSeries) -> FunctionalSeries:
    """Subtract the column means. Idempotent."""
    if series.centered:
        return series
    z = series.coeffs - series.coeffs.mean(axis=0)
    return FunctionalSeries(z, series.basis, centered=True,
                            reconstruction_error=series.reconstruction_error)


@dataclass(frozen=True)
class OperatorMatrix:
    """An operator in orthonormal coordinates, tagged with its frequency."""

    entries: np.ndarray
    freq: float = 0.0

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=complex)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("operator must be a square matrix")
        object.__setattr__(self, "entries", a)

    @property
    def d(self) -> int:
        return self.entries.shape[0]

    def is_hermitian(self, tol: float = 1e-10) -> bool:
        a = self.entries
        return np.linalg.norm(a - a.conj().T) <= tol * (1 + np.linalg.norm(a))


def _as_matrix(A) -> np.ndarray:
    return A.entries if isinstance(A, OperatorMatrix) else np.asarray(A)


def hs_inner(A, B) -> complex:
    """Hilbert-Schmidt inner product ``sum_ij A_ij conj(B_ij)``."""
    a, b = _as_matrix(A), _as_matrix(B)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return complex(np.vdot(b, a))


def hs_norm_sq(A) -> float:
    a = _as_matrix(A)
    return float(np.sum(a.real ** 2 + a.imag ** 2)) if np.iscomplexobj(a) else float(np.sum(a * a))
