"""Eigenanalysis of Hermitian operator estimates and the separable 3-D model."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .core import BasisSpec, OperatorMatrix
from .spectral import WindowSpec, _check_b, _lag_sum, _window_length


class NotHermitianError(ValueError):
    pass


@dataclass(frozen=True)
class EigenSystem:
    """Top eigenpairs of a Hermitian operator, eigenvalues in descending order.

    ``vectors[:, j]`` is a unit eigenvector for ``values[j]``; ``projectors``
    are the rank-one matrices ``v v^H`` and do not depend on the phase of v.
    """

    freq: float
    values: np.ndarray
    vectors: np.ndarray = field(repr=False)

    @property
    def k(self) -> int:
        return self.values.size

    @property
    def projectors(self) -> np.ndarray:
        v = self.vectors
        return np.einsum("ik,jk->kij", v, v.conj())

    @property
    def gaps(self) -> np.ndarray:
        return -np.diff(self.values)


def hermitianize(A) -> np.ndarray:
    a = A.entries if isinstance(A, OperatorMatrix) else np.asarray(A)
    return 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))


def eigensystem(op, k: int | None = None, tol: float = 1e-10) -> EigenSystem:
    """Leading ``k`` eigenpairs of the Hermitianized operator."""
    a = op.entries if isinstance(op, OperatorMatrix) else np.asarray(op, dtype=complex)
    freq = op.freq if isinstance(op, OperatorMatrix) else 0.0
    d = a.shape[0]
    k = d if k is None else k
    if not 1 <= k <= d:
        raise ValueError(f"k={k} outside 1..{d}")
    if np.linalg.norm(a - a.conj().T) > tol * (1 + np.linalg.norm(a)):
        raise NotHermitianError("operator not Hermitian")
    vals, vecs = np.linalg.eigh(hermitianize(a))
    order = np.arange(d - 1, d - 1 - k, -1)
    return EigenSystem(float(freq), vals[order], vecs[:, order])


def batched_eigh(ops: np.ndarray, k: int):
    """Top-``k`` eigenvalues (descending) and eigenvectors for stacked operators.

    Returns ``values[..., k]`` and ``vectors[..., d, k]``.
    """
    vals, vecs = np.linalg.eigh(hermitianize(ops))
    d = ops.shape[-1]
    order = np.arange(d - 1, d - 1 - k, -1)
    return vals[..., order], vecs[..., order]


def projector_distance_sq(E_X: EigenSystem, E_Y: EigenSystem, k: int) -> float:
    """``||Pi_X,k - Pi_Y,k||_HS^2 = 2 - 2 |<phi_X, phi_Y>|^2``."""
    if k > E_X.k or k > E_Y.k or k < 1:
        raise ValueError(f"component k={k} not available")
    overlap = np.vdot(E_Y.vectors[:, k - 1], E_X.vectors[:, k - 1])
    return float(min(2.0, max(0.0, 2.0 - 2.0 * abs(overlap) ** 2)))


@dataclass(frozen=True)
class GapReport:
    ok: bool
    gap: float
    threshold: float

    @property
    def status(self) -> str:
        return "ok" if self.ok else "warning"


def eigengap_diagnostic(E, k: int, tol: float = 0.01) -> GapReport:
    """Check that the k-th eigenvalue is separated from its neighbours.

    Accepts an :class:`EigenSystem` or a plain descending eigenvalue vector.
    """
    lam = E.values if isinstance(E, EigenSystem) else np.asarray(E, dtype=float)
    if lam.size < k + 1:
        raise ValueError("eigengap diagnostic needs k + 1 eigenvalues")
    gap = lam[k - 1] - lam[k]
    if k > 1:
        gap = min(gap, lam[k - 2] - lam[k - 1])
    threshold = tol * lam[0]
    return GapReport(bool(gap > threshold), float(gap), float(threshold))


# -- separable 3-D model -----------------------------------------------------

@dataclass(frozen=True)
class SeparableSeries3D:
    """Voxel time series ``X_t(tau_1, tau_2, tau_3)`` on a product grid.

    ``data`` has shape ``(T, G1 * G2 * G3)`` in C order over the axes.
    """

    data: np.ndarray
    shape: tuple[int, int, int]
    bases: tuple[BasisSpec | None, BasisSpec | None, BasisSpec | None] = (None, None, None)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        shape = tuple(int(s) for s in self.shape)
        if len(shape) != 3 or min(shape) < 2:
            raise ValueError("all three axis sizes must be >= 2")
        if data.ndim != 2 or data.shape[1] != np.prod(shape):
            raise ValueError("voxel count does not match the axis sizes")
        if data.shape[0] < 2:
            raise ValueError("need T >= 2")
        if not np.all(np.isfinite(data)):
            raise ValueError("data contain non-finite values")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "shape", shape)

    @property
    def T(self) -> int:
        return self.data.shape[0]

    def volume(self) -> np.ndarray:
        return self.data.reshape((self.T,) + self.shape)

    def centered(self) -> "SeparableSeries3D":
        return SeparableSeries3D(self.data - self.data.mean(axis=0), self.shape, self.bases)

    def detrended(self, order: int = 3) -> "SeparableSeries3D":
        """Remove a least-squares polynomial trend of ``order`` from every voxel."""
        t = np.linspace(-1.0, 1.0, self.T)
        V = np.polynomial.legendre.legvander(t, order)
        coef, *_ = np.linalg.lstsq(V, self.data, rcond=None)
        return SeparableSeries3D(self.data - V @ coef, self.shape, self.bases)


def directional_series(series: SeparableSeries3D, direction: int) -> np.ndarray:
    """Data rearranged to ``(T, G_dir, R)`` with the complementary axes flattened."""
    if direction not in (1, 2, 3):
        raise ValueError("direction must be 1, 2 or 3")
    vol = series.volume()
    moved = np.moveaxis(vol, direction, 1)
    return moved.reshape(series.T, series.shape[direction - 1], -1)


def _directional_coords(series: SeparableSeries3D, direction: int) -> np.ndarray:
    Y = directional_series(series, direction)
    basis = series.bases[direction - 1]
    if basis is None:
        return Y
    grid = np.linspace(*basis.domain, Y.shape[1])
    design = basis.evaluate(grid)
    if np.linalg.matrix_rank(design) < basis.dimension:
        raise ValueError(f"axis {direction} too small for its basis")
    A = np.linalg.pinv(design)
    Linv = np.linalg.inv(basis.orthonormalizer)
    return np.einsum("ij,tjr->tir", Linv @ A, Y)


def directional_autocov_sequence(Y: np.ndarray, m: int) -> np.ndarray:
    """Autocovariances averaged over the replicate axis of ``Y[t, i, r]``."""
    Z = Y[:m]
    nfft = 1 << int(np.ceil(np.log2(2 * m)))
    Zf = np.fft.rfft(Z, n=nfft, axis=0)
    cross = np.fft.irfft(np.einsum("fir,fjr->fij", Zf, np.conj(Zf)), n=nfft, axis=0)
    return cross[:m] / (m * Y.shape[2])


def directional_sequential_estimate(series: SeparableSeries3D, direction: int, eta: float,
                                    omega: float, window: WindowSpec | None = None,
                                    b: float | None = None) -> OperatorMatrix:
    """Directional estimate: lag-window sum of covariances averaged over the other two axes.

    When a basis is attached to the direction, the kernel is returned in its
    orthonormal coordinates; otherwise on the raw grid.
    """
    return OperatorMatrix(
        directional_surface(series, direction, [omega], [eta], window, b)[0, 0], float(omega))


def directional_surface(series: SeparableSeries3D, direction: int, freqs, etas,
                        window: WindowSpec | None = None, b: float | None = None) -> np.ndarray:
    """Directional estimates on an ``(eta, omega)`` grid, shape ``(n_eta, n_freq, g, g)``."""
    window = window or WindowSpec()
    if b is None:
        b = series.T ** (-1.0 / 3.0)
    _check_b(b)
    Y = _directional_coords(series, direction)
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    etas = np.atleast_1d(np.asarray(etas, dtype=float))
    g = Y.shape[1]
    out = np.empty((etas.size, freqs.size, g, g), dtype=complex)
    for i, eta in enumerate(etas):
        m = _window_length(series.T, eta)
        out[i] = _lag_sum(directional_autocov_sequence(Y, m), freqs, window, b)
    return out


@dataclass(frozen=True)
class KroneckerEigenSystem:
    """Largest products ``lambda_1j * lambda_2k * lambda_3l`` of three directional spectra."""

    directional: tuple[np.ndarray, np.ndarray, np.ndarray]
    values: np.ndarray
    indices: np.ndarray  # (N, 3), 1-based


def _top_products(lams, top_n: int):
    """Best-first search over the index lattice of three descending sequences."""
    l1, l2, l3 = lams
    start = (0, 0, 0)
    heap = [(-(l1[0] * l2[0] * l3[0]), start)]
    seen = {start}
    vals, idx = [], []
    while heap and len(vals) < top_n:
        negv, (i, j, k) = heapq.heappop(heap)
        vals.append(-negv)
        idx.append((i + 1, j + 1, k + 1))
        for nxt in ((i + 1, j, k), (i, j + 1, k), (i, j, k + 1)):
            a, bb, c = nxt
            if a < len(l1) and bb < len(l2) and c < len(l3) and nxt not in seen:
                seen.add(nxt)
                heapq.heappush(heap, (-(l1[a] * l2[bb] * l3[c]), nxt))
    return np.array(vals), np.array(idx, dtype=int).reshape(-1, 3)


def kronecker_eigensystem(directional, top_n: int | None = None, T: int | None = None
                          ) -> KroneckerEigenSystem:
    """Merge three directional eigensystems into the ``top_n`` largest triple products.

    ``directional`` holds three :class:`EigenSystem` objects or three
    descending eigenvalue vectors. With ``top_n`` omitted, ``T^(1/3)``
    components per direction are used (``T`` required).
    """
    lams = tuple(np.asarray(E.values if isinstance(E, EigenSystem) else E, dtype=float)
                 for E in directional)
    if len(lams) != 3:
        raise ValueError("need exactly three directional systems")
    for lam in lams:
        if np.any(np.diff(lam) > 0):
            raise ValueError("directional eigenvalues must be sorted descending")
        if np.any(lam < 0):
            raise ValueError("triple-product ordering needs non-negative eigenvalues")
    if top_n is None:
        if T is None:
            raise ValueError("give top_n or T")
        per = int(np.floor(T ** (1.0 / 3.0) + 1e-9))
        lams = tuple(lam[:per] for lam in lams)
        top_n = per ** 3
    if top_n < 1 or top_n > np.prod([lam.size for lam in lams]):
        raise ValueError("insufficient components for the requested top_n")
    vals, idx = _top_products(lams, top_n)
    return KroneckerEigenSystem(lams, vals, idx)
