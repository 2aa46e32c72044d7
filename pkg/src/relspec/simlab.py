"""Simulation scenarios, population thresholds and rejection-rate experiments.

Scenarios (``Y`` is varied, ``X`` is the baseline):

``bb-shift``
    i.i.d. Brownian bridges scaled by sqrt(2 pi); in ``Y`` every
    Karhunen-Loeve function ``sqrt2 sin(pi k tau)`` is replaced by
    ``sqrt2 sin(pi k (tau + shift))``.
``bb-amplitude``
    as above without shift; the standard deviation of ``Y`` is multiplied by
    ``base ** param`` (default base 1.2).
``ar-shift``
    four-component VAR(1) curves with ``c = 0.3``; ``Y`` uses phase shift
    ``iota_1 = param`` in its cosine component.
``ar-dependence``
    VAR(1) curves, ``X`` with ``c = 0`` and ``Y`` with ``c = param``.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Literal

import numpy as np

from .core import BasisSpec, FunctionalSeries
from .eigen import batched_eigh
from .pivot import PivotSample
from .relevance import EstimationConfig, HypothesisSpec, band_mean, relevant_test
from .spectral import frequency_grid

ScenarioId = Literal["bb-shift", "bb-amplitude", "ar-shift", "ar-dependence"]

AR_NOISE_VAR = np.array([4.0, 8.0, 0.5, 1.5])
AR_BURN_IN = 200
BB_GRID = 1000
_RANGES = {
    "bb-shift": (0.0, 0.15),
    "bb-amplitude": (0.0, 8.0),
    "ar-shift": (0.0, 0.25),
    "ar-dependence": (0.0, 0.6),
}


@dataclass(frozen=True)
class ScenarioSpec:
    id: ScenarioId
    T: int
    param: float = 0.0
    d: int | None = None
    seed: int = 0
    amplitude_base: float = 1.2
    ar_c: float = 0.3  # dependence used by ar-shift

    def __post_init__(self):
        if self.id not in _RANGES:
            raise ValueError(f"unknown scenario {self.id!r}")
        lo, hi = _RANGES[self.id]
        if not lo <= self.param <= hi + 1e-12:
            raise ValueError(f"{self.id} parameter {self.param} outside [{lo}, {hi}]")
        if self.id == "bb-amplitude" and abs(self.param - round(self.param)) > 1e-12:
            raise ValueError("bb-amplitude exponent must be an integer 0..8")
        if self.d is None:
            object.__setattr__(self, "d", 21 if self.id.startswith("bb") else 4)


# -- Brownian bridge scenarios --------------------------------------------------

def _bb_eigenvalues(n_terms: int) -> np.ndarray:
    k = np.arange(1, n_terms + 1)
    return 1.0 / (np.pi * k) ** 2


@lru_cache(maxsize=64)
def _bb_mixing(shift: float, d: int, n_terms: int, n_grid: int) -> np.ndarray:
    """Orthonormal Fourier coordinates of the shifted KL functions, shape ``(d, n_terms)``."""
    grid = np.linspace(0.0, 1.0, n_grid)
    k = np.arange(1, n_terms + 1)
    kl = np.sqrt(2.0) * np.sin(np.pi * np.outer(grid + shift, k))
    basis = BasisSpec.fourier(d)
    design = basis.evaluate(grid)
    coef, *_ = np.linalg.lstsq(design, kl, rcond=None)
    M = np.linalg.solve(basis.orthonormalizer, coef)
    M.setflags(write=False)
    return M


def gen_bb_series(T: int, d: int = 21, shift: float = 0.0, amplitude_factor: float = 1.0,
                  seed=0, n_terms: int | None = None, n_grid: int = BB_GRID) -> FunctionalSeries:
    """i.i.d. sqrt(2 pi)-scaled Brownian bridges in ``d`` Fourier coordinates.

    Curves are the Karhunen-Loeve sum over ``n_terms`` (default ``d``) terms
    evaluated on ``n_grid`` points and projected onto the Fourier basis by
    least squares; the projection is precomputed as a mixing matrix.
    """
    if T < 8 or d < 2:
        raise ValueError("need T >= 8 and d >= 2")
    n_terms = d if n_terms is None else n_terms
    rng = np.random.default_rng(seed)
    lam = _bb_eigenvalues(n_terms)
    xi = rng.standard_normal((T, n_terms)) * np.sqrt(2 * np.pi * lam) * amplitude_factor
    M = _bb_mixing(float(shift), d, n_terms, n_grid)
    return FunctionalSeries(xi @ M.T, BasisSpec.fourier(d))


def bb_population_operator(d: int = 21, shift: float = 0.0, amplitude_factor: float = 1.0,
                           n_terms: int | None = None, n_grid: int = BB_GRID) -> np.ndarray:
    """Frequency-constant spectral density operator of :func:`gen_bb_series` output."""
    n_terms = d if n_terms is None else n_terms
    M = _bb_mixing(float(shift), d, n_terms, n_grid)
    return amplitude_factor ** 2 * (M * _bb_eigenvalues(n_terms)) @ M.T


# -- functional VAR(1) scenarios --------------------------------------------------

def _ar_mixing(iota1: float, iota2: float = 0.0) -> np.ndarray:
    """Coordinates of the four shape functions in the basis sin2pi, cos2pi, sin4pi, cos4pi."""
    M = np.zeros((4, 4))
    M[0, 0] = 1.0  # sqrt2 sin(2 pi tau)
    th1 = 2 * np.pi * iota1
    M[1, 1], M[0, 1] = np.cos(th1), -np.sin(th1)  # sqrt2 cos(2 pi (tau + iota1))
    M[2, 2] = 1.0  # sqrt2 sin(4 pi tau)
    th2 = 2 * np.pi * iota2
    M[3, 3], M[2, 3] = np.cos(th2), -np.sin(th2)  # sqrt2 cos(2 pi (2 tau + iota2))
    return M


def ar_basis() -> BasisSpec:
    return BasisSpec.fourier(4, constant=False)


def gen_far_series(T: int, c: float, iota1: float = 0.0, seed=0, iota2: float = 0.0,
                   burn_in: int = AR_BURN_IN) -> FunctionalSeries:
    """Curves driven by ``chi_t = c chi_{t-1} + sqrt(1 - c^2) eps_t``.

    ``eps_t ~ N(0, diag(4, 8, 0.5, 1.5))``, so the stationary variance of
    ``chi`` is that diagonal for every ``c``.
    """
    if not abs(c) < 1:
        raise ValueError("VAR coefficient must satisfy |c| < 1")
    rng = np.random.default_rng(seed)
    n = T + burn_in
    eps = rng.standard_normal((n, 4)) * np.sqrt(AR_NOISE_VAR)
    chi = np.empty((n, 4))
    chi[0] = rng.standard_normal(4) * np.sqrt(AR_NOISE_VAR)
    s = np.sqrt(1 - c * c)
    for t in range(1, n):
        chi[t] = c * chi[t - 1] + s * eps[t]
    return FunctionalSeries(chi[burn_in:] @ _ar_mixing(iota1, iota2).T, ar_basis())


def ar_spectral_factor(c: float, freqs) -> np.ndarray:
    """``(1 - c^2) / (2 pi |1 - c e^{-i w}|^2)``: per-unit-variance VAR(1) spectrum."""
    freqs = np.asarray(freqs, dtype=float)
    return (1 - c * c) / (2 * np.pi * np.abs(1 - c * np.exp(-1j * freqs)) ** 2)


def ar_population_operator(c: float, iota1: float, freqs, iota2: float = 0.0) -> np.ndarray:
    M = _ar_mixing(iota1, iota2)
    static = (M * AR_NOISE_VAR) @ M.T
    return ar_spectral_factor(c, freqs)[:, None, None] * static


def child_seed(ss: np.random.SeedSequence, *key: int) -> np.random.SeedSequence:
    """Deterministic child stream; unlike ``spawn`` it does not mutate ``ss``."""
    return np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + key)


# -- scenario pairs ---------------------------------------------------------------

def scenario_series(spec: ScenarioSpec, seed=None) -> tuple[FunctionalSeries, FunctionalSeries]:
    """Independent ``(X, Y)`` pair for one replication."""
    seed = spec.seed if seed is None else seed
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    sx, sy = (child_seed(ss, i) for i in (0, 1))
    if spec.id == "bb-shift":
        return (gen_bb_series(spec.T, spec.d, 0.0, 1.0, sx),
                gen_bb_series(spec.T, spec.d, spec.param, 1.0, sy))
    if spec.id == "bb-amplitude":
        factor = spec.amplitude_base ** spec.param
        return (gen_bb_series(spec.T, spec.d, 0.0, 1.0, sx),
                gen_bb_series(spec.T, spec.d, 0.0, factor, sy))
    if spec.id == "ar-shift":
        return (gen_far_series(spec.T, spec.ar_c, 0.0, sx),
                gen_far_series(spec.T, spec.ar_c, spec.param, sy))
    return (gen_far_series(spec.T, 0.0, 0.0, sx),
            gen_far_series(spec.T, spec.param, 0.0, sy))


def population_operators(scenario: str, param: float, freqs, d: int | None = None,
                         amplitude_base: float = 1.2, ar_c: float = 0.3):
    """Population spectral operators of ``(X, Y)`` at ``freqs``, each ``(n_freq, d, d)``."""
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    n = freqs.size
    if scenario in ("bb-shift", "bb-amplitude"):
        d = 21 if d is None else d
        FX = bb_population_operator(d)
        if scenario == "bb-shift":
            FY = bb_population_operator(d, shift=param)
        else:
            FY = bb_population_operator(d, amplitude_factor=amplitude_base ** param)
        return (np.broadcast_to(FX, (n, d, d)).astype(complex),
                np.broadcast_to(FY, (n, d, d)).astype(complex))
    if scenario == "ar-shift":
        return (ar_population_operator(ar_c, 0.0, freqs).astype(complex),
                ar_population_operator(ar_c, param, freqs).astype(complex))
    if scenario == "ar-dependence":
        return (ar_population_operator(0.0, 0.0, freqs).astype(complex),
                ar_population_operator(param, 0.0, freqs).astype(complex))
    raise ValueError(f"unsupported scenario {scenario!r}")


def population_threshold(scenario: str, param: float, kind: str = "operator", k: int = 1,
                         band=(0.0, np.pi), n_freq: int = 64, measure: str = "uniform",
                         d: int | None = None, amplitude_base: float = 1.2,
                         ar_c: float = 0.3) -> float:
    """Population distance between ``X`` and ``Y`` of a scenario, integrated over ``band``.

    Uses the same frequency grid, quadrature and band normalization as the
    tests, so the value can be plugged in as the boundary threshold.
    """
    spec = HypothesisSpec(kind=kind, k=k, band=band, measure=measure)
    n = 1 if spec.band[0] == spec.band[1] else n_freq
    freqs = frequency_grid(spec.band, n)
    FX, FY = population_operators(scenario, param, freqs, d, amplitude_base, ar_c)
    if spec.kind == "operator":
        diff = FX - FY
        values = np.sum(np.abs(diff) ** 2, axis=(-2, -1))
    else:
        lx, vx = batched_eigh(FX, k)
        ly, vy = batched_eigh(FY, k)
        if spec.kind == "eigenprojector":
            ov = np.einsum("...i,...i->...", np.conj(vy[..., k - 1]), vx[..., k - 1])
            values = np.clip(2 - 2 * np.abs(ov) ** 2, 0.0, 2.0)
        else:
            values = (lx[..., k - 1] - ly[..., k - 1]) ** 2
    return float(band_mean(values, freqs, spec.band, spec.measure))


# -- rejection experiments --------------------------------------------------------

@dataclass
class GridPointResult:
    param: float
    T: int
    reps: int
    rejections: int
    rate: float
    se: float
    mean_distance: float
    error: str | None = None


@dataclass
class ExperimentReport:
    scenario: str
    hypothesis: dict
    estimation: dict
    pivot: dict
    seed: int
    points: list[GridPointResult] = field(default_factory=list)
    runtime: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def binomial_se(p: float, reps: int) -> float:
    return float(np.sqrt(p * (1 - p) / reps))


def _point_seed(master: int, param: float, T: int) -> np.random.SeedSequence:
    # grid points are keyed by value, not position, so resuming or reordering is harmless
    key = (int(round(param * 1e6)) & 0xFFFFFFFF, int(T))
    return np.random.SeedSequence(master, spawn_key=key)


def _run_rep(args):
    scen, hyp, pivot, config, rep_seed = args
    X, Y = scenario_series(scen, rep_seed)
    res = relevant_test(X, Y, hyp, pivot, config)
    return res.reject, res.distance


def run_grid_point(scenario: str, param: float, T: int, hypothesis: HypothesisSpec, reps: int,
                   pivot: PivotSample, seed: int = 0, config: EstimationConfig | None = None,
                   workers: int = 1, executor=None, **scenario_kw) -> GridPointResult:
    if reps < 50:
        raise ValueError("reps must be >= 50")
    config = config or EstimationConfig()
    scen = ScenarioSpec(scenario, T, param, **scenario_kw)
    base = _point_seed(seed, param, T)
    rep_seeds = [child_seed(base, r) for r in range(reps)]
    jobs = [(scen, hypothesis, pivot, config, s) for s in rep_seeds]
    if executor is not None:
        out = list(executor.map(_run_rep, jobs, chunksize=max(1, reps // 32)))
    elif workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            out = list(ex.map(_run_rep, jobs, chunksize=max(1, reps // (4 * workers))))
    else:
        out = [_run_rep(j) for j in jobs]
    rej = int(sum(r for r, _ in out))
    rate = rej / reps
    return GridPointResult(float(param), int(T), reps, rej, rate, binomial_se(rate, reps),
                           float(np.mean([dist for _, dist in out])))


def rejection_experiment(scenario: str, params, Ts, hypothesis: HypothesisSpec, reps: int,
                         pivot: PivotSample, seed: int = 0, config: EstimationConfig | None = None,
                         workers: int = 1, done: dict | None = None, on_point=None,
                         **scenario_kw) -> ExperimentReport:
    """Empirical rejection rates over the ``params x Ts`` grid.

    ``done`` maps ``(param, T)`` to already computed :class:`GridPointResult`
    objects, which are reused as-is. ``on_point`` is called after every newly
    computed point. Failures are recorded per point rather than raised.
    """
    config = config or EstimationConfig()
    started = time.perf_counter()
    report = ExperimentReport(
        scenario, asdict(hypothesis),
        {"window": config.window.kind, "bandwidth": asdict(config.bandwidth),
         "n_freq": config.n_freq, "center": config.center},
        pivot.provenance(), seed)
    done = done or {}
    executor = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for T in Ts:
            for param in params:
                key = (float(param), int(T))
                if key in done:
                    report.points.append(done[key])
                    continue
                try:
                    pt = run_grid_point(scenario, param, T, hypothesis, reps, pivot, seed,
                                        config, executor=executor, **scenario_kw)
                except Exception as exc:
                    pt = GridPointResult(float(param), int(T), reps, 0, float("nan"),
                                         float("nan"), float("nan"),
                                         error=f"{scenario} param={param} T={T}: {exc}")
                report.points.append(pt)
                if on_point is not None:
                    on_point(pt)
    finally:
        if executor is not None:
            executor.shutdown()
    report.runtime = time.perf_counter() - started
    return report
