"""Monte Carlo tables for the pivot law

    D = B(1) / ( mean_i eta_i^2 (B(eta_i) - eta_i B(1))^2 )^(1/2),   eta_i = i/n, i = 1..n-1,

with ``B`` a standard Brownian motion on [0, 1].
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

CHUNK = 10_000  # paths per independent RNG stream; fixed so output ignores worker count
CACHE_VERSION = 1


@dataclass(frozen=True)
class PivotSample:
    draws: np.ndarray = field(repr=False)
    nu_n: int
    n_paths: int
    n_steps: int
    seed: int
    method: str = "skeleton"

    def __post_init__(self):
        draws = np.asarray(self.draws, dtype=float)
        if draws.ndim != 1 or draws.size == 0:
            raise ValueError("pivot sample must be a non-empty vector")
        if not np.all(np.isfinite(draws)):
            raise ValueError("pivot draws must be finite")
        draws = np.sort(draws)
        draws.setflags(write=False)
        object.__setattr__(self, "draws", draws)

    def tail_probability(self, x: float) -> float:
        """Fraction of draws ``>= x``."""
        n = self.draws.size
        return float(n - np.searchsorted(self.draws, x, side="left")) / n

    def provenance(self) -> dict:
        return {"nu_n": self.nu_n, "n_paths": self.n_paths, "n_steps": self.n_steps,
                "seed": self.seed, "method": self.method}


def pivot_from_paths(nodes: np.ndarray, nu_n: int) -> np.ndarray:
    """Pivot values from Brownian values at ``i/n``, ``i = 1..n`` (last column is B(1))."""
    eta = np.arange(1, nu_n) / nu_n
    B1 = nodes[:, -1]
    inner = eta ** 2 * (nodes[:, :-1] - eta * B1[:, None]) ** 2
    denom = np.sqrt(inner.mean(axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        return B1 / denom


def _node_values(rng: np.random.Generator, size: int, nu_n: int, n_steps: int, method: str):
    if method == "skeleton":
        # The sum of n_steps/nu_n Gaussian increments of variance 1/n_steps is
        # exactly Gaussian with variance 1/nu_n.
        inc = rng.standard_normal((size, nu_n)) / np.sqrt(nu_n)
        return np.cumsum(inc, axis=1)
    inc = rng.standard_normal((size, n_steps)) / np.sqrt(n_steps)
    path = np.cumsum(inc, axis=1)
    stride = n_steps // nu_n
    return path[:, stride - 1::stride]


def _simulate_chunk(args) -> np.ndarray:
    seed, index, size, nu_n, n_steps, method = args
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))
    out = np.empty(size)
    todo = np.arange(size)
    while todo.size:
        vals = pivot_from_paths(_node_values(rng, todo.size, nu_n, n_steps, method), nu_n)
        ok = np.isfinite(vals)
        out[todo[ok]] = vals[ok]
        todo = todo[~ok]
    return out


def simulate_pivot(nu_n: int = 20, n_paths: int = 100_000, n_steps: int = 10_000, seed: int = 0,
                   method: str = "skeleton", workers: int = 1) -> PivotSample:
    """Simulate ``n_paths`` draws of the pivot law.

    ``method='full'`` builds every path from ``n_steps`` Gaussian increments;
    ``'skeleton'`` samples the Brownian values at the ``i/n`` nodes directly,
    which has the same law whenever ``n_steps`` is a multiple of ``nu_n``.
    Paths are generated in fixed chunks with counter-derived seeds, so the
    sample does not depend on ``workers``.
    """
    if nu_n < 3:
        raise ValueError("nu_n must be >= 3")
    if n_steps % nu_n:
        raise ValueError(f"n_steps={n_steps} must be divisible by nu_n={nu_n}")
    if n_paths < 1000:
        raise ValueError("n_paths must be >= 1000")
    if method not in ("skeleton", "full"):
        raise ValueError(f"unknown method {method!r}")
    sizes = [CHUNK] * (n_paths // CHUNK)
    if n_paths % CHUNK:
        sizes.append(n_paths % CHUNK)
    jobs = [(seed, i, s, nu_n, n_steps, method) for i, s in enumerate(sizes)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_simulate_chunk, jobs))
    else:
        parts = [_simulate_chunk(j) for j in jobs]
    return PivotSample(np.concatenate(parts), nu_n, n_paths, n_steps, seed, method)


def quantile(sample: PivotSample | np.ndarray, p: float) -> float:
    """Inverse empirical CDF: the ``ceil(n p)``-th order statistic."""
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    draws = sample.draws if isinstance(sample, PivotSample) else np.sort(np.asarray(sample, float))
    if draws.size == 0:
        raise ValueError("empty sample")
    return float(np.quantile(draws, p, method="inverted_cdf"))


# -- on-disk cache -------------------------------------------------------------

def cache_key(nu_n: int, n_paths: int, n_steps: int, seed: int, method: str = "skeleton") -> str:
    raw = f"v{CACHE_VERSION}-{nu_n}-{n_paths}-{n_steps}-{seed}-{method}"
    return hashlib.sha256(raw.encode()).hexdigest()[:16]


def save_pivot(path, sample: PivotSample) -> None:
    """Write ``sample`` as ``.npz`` with a JSON parameter header."""
    header = dict(sample.provenance(), version=CACHE_VERSION)
    path = Path(path)
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, header=np.array(json.dumps(header, sort_keys=True)), draws=sample.draws)
    os.replace(tmp, path)


def load_pivot(path) -> PivotSample:
    with np.load(path, allow_pickle=False) as f:
        header = json.loads(str(f["header"]))
        draws = f["draws"]
    if header.get("version") != CACHE_VERSION:
        raise ValueError("pivot cache version mismatch")
    if draws.size != header["n_paths"]:
        raise ValueError("pivot cache truncated")
    return PivotSample(draws, header["nu_n"], header["n_paths"], header["n_steps"],
                       header["seed"], header.get("method", "skeleton"))


def cached_pivot(cache_dir, nu_n: int = 20, n_paths: int = 100_000, n_steps: int = 10_000,
                 seed: int = 0, method: str = "skeleton", workers: int = 1
                 ) -> tuple[PivotSample, bool]:
    """Load the sample for these parameters from ``cache_dir`` or simulate and store it.

    Returns ``(sample, hit)``.
    """
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"pivot-{cache_key(nu_n, n_paths, n_steps, seed, method)}.npz"
    if path.exists():
        try:
            sample = load_pivot(path)
            if sample.provenance() == {"nu_n": nu_n, "n_paths": n_paths, "n_steps": n_steps,
                                       "seed": seed, "method": method}:
                return sample, True
            log.warning("pivot cache %s has mismatching header; regenerating", path)
        except Exception as exc:  # corrupt or unreadable file
            log.warning("pivot cache %s unreadable (%s); regenerating", path, exc)
    sample = simulate_pivot(nu_n, n_paths, n_steps, seed, method, workers)
    save_pivot(path, sample)
    return sample, False
