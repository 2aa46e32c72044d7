"""Command-line interface: ``relspec <subcommand> [options]``.

Exit codes: 0 success, 1 input/output failure, 2 invalid configuration,
3 numerical failure. Results are written as JSON with floats rounded to 12
significant digits; every result file embeds the resolved configuration, and
``--config FILE`` re-runs from such an embedded configuration.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .core import BasisError, BasisSpec, FunctionalSeries, center, project_to_basis
from .eigen import SeparableSeries3D, batched_eigh, kronecker_eigensystem
from .pivot import cached_pivot, quantile
from .relevance import (EstimationConfig, HypothesisSpec, SpecError, band_mean, relevant_test,
                        separable_surface, separable_test)
from .simlab import (GridPointResult, ScenarioSpec, child_seed, population_threshold,
                     rejection_experiment, scenario_series)
from .spectral import BandwidthRule, WindowSpec, eta_grid, spectral_surface

log = logging.getLogger("relspec")

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
GENERATION_STREAM = 0x67656E  # spawn key of the data-generation sub-stream
SIG_DIGITS = 12


class CliError(Exception):
    def __init__(self, code: int, stage: str, message: str):
        super().__init__(message)
        self.code, self.stage, self.message = code, stage, message


def _io_error(stage, msg):
    return CliError(EXIT_IO, stage, msg)


def _config_error(field_name, msg):
    return CliError(EXIT_CONFIG, "config", f"field '{field_name}': {msg}")


# -- configuration --------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    window: str = "daniell"
    bandwidth_exp: float = 1.0 / 3.0
    band: tuple[float, float] = (0.0, math.pi)
    n_freq: int = 64
    nu_n: int = 20
    alpha: float = 0.05
    delta: float = 0.0
    deltas: tuple = ()  # per-kind thresholds (operator, projector, eigenvalue) for separable runs
    hypothesis: str = "operator"
    k: int = 1
    dependent: bool = False
    measure: str = "uniform"
    center: bool = True
    basis: str = "fourier"
    basis_dim: int = 21
    pivot_paths: int = 100_000
    pivot_steps: int = 10_000
    pivot_method: str = "skeleton"
    seed: int = 0
    cache_dir: str = "~/.cache/relspec"

    def validate(self) -> "RunConfig":
        if self.window not in ("daniell", "bartlett", "parzen"):
            raise _config_error("window", f"unknown window {self.window!r}")
        if not 0 < self.bandwidth_exp < 1:
            raise _config_error("bandwidth_exp", "must lie in (0, 1)")
        a, b = self.band
        if not (math.isfinite(a) and math.isfinite(b) and 0 <= a <= b <= math.pi + 1e-12):
            raise _config_error("band", f"[{a}, {b}] must satisfy 0 <= a <= b <= pi")
        if self.n_freq < 2:
            raise _config_error("n_freq", "must be >= 2")
        if self.nu_n < 3:
            raise _config_error("nu_n", "must be >= 3")
        if not 0 < self.alpha < 1:
            raise _config_error("alpha", "must lie in (0, 1)")
        if not (math.isfinite(self.delta) and self.delta >= 0):
            raise _config_error("delta", "must be a finite value >= 0")
        if self.deltas and (len(self.deltas) != 3
                            or not all(math.isfinite(d) and d >= 0 for d in self.deltas)):
            raise _config_error("deltas", "need three finite values >= 0")
        if self.hypothesis not in ("operator", "projector", "eigenprojector", "eigenvalue"):
            raise _config_error("hypothesis", f"unknown kind {self.hypothesis!r}")
        if self.k < 1:
            raise _config_error("k", "must be >= 1")
        if self.measure not in ("uniform", "lebesgue"):
            raise _config_error("measure", "must be 'uniform' or 'lebesgue'")
        if self.basis not in ("fourier", "bspline", "raw"):
            raise _config_error("basis", f"unknown basis {self.basis!r}")
        if self.basis != "raw" and self.basis_dim < (4 if self.basis == "bspline" else 1):
            raise _config_error("basis_dim", "too small for the chosen basis")
        if self.pivot_paths < 1000:
            raise _config_error("pivot_paths", "must be >= 1000")
        if self.pivot_steps < 1 or self.pivot_steps % self.nu_n:
            raise _config_error("pivot_steps", f"must be a positive multiple of nu_n={self.nu_n}")
        if self.pivot_method not in ("skeleton", "full"):
            raise _config_error("pivot_method", "must be 'skeleton' or 'full'")
        if self.seed < 0:
            raise _config_error("seed", "must be >= 0")
        return self

    def hypothesis_spec(self) -> HypothesisSpec:
        return HypothesisSpec(kind=self.hypothesis, k=self.k, delta=self.delta, band=self.band,
                              alpha=self.alpha, nu_n=self.nu_n, measure=self.measure,
                              dependence="dependent" if self.dependent else "independent")

    def estimation(self) -> EstimationConfig:
        return EstimationConfig(WindowSpec(self.window), BandwidthRule(exponent=self.bandwidth_exp),
                                self.n_freq, self.center)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["band"] = list(self.band)
        out["deltas"] = list(self.deltas)
        return out


_FLAG_FIELDS = {
    "window": "window", "bandwidth_exp": "bandwidth_exp", "band": "band", "nfreq": "n_freq",
    "nu_n": "nu_n", "alpha": "alpha", "delta": "delta", "deltas": "deltas",
    "hypothesis": "hypothesis", "k": "k",
    "dependent": "dependent", "measure": "measure", "no_center": "center", "basis": "basis",
    "basis_dim": "basis_dim", "pivot_paths": "pivot_paths", "pivot_steps": "pivot_steps",
    "pivot_method": "pivot_method", "seed": "seed", "cache_dir": "cache_dir",
}


def resolve_config(args) -> RunConfig:
    """Defaults, then an embedded ``--config`` file, then explicit flags."""
    base = RunConfig()
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            raise _io_error("config", f"cannot read config file: {exc}")
        doc = doc.get("config", doc)
        known = {f.name for f in fields(RunConfig)}
        unknown = set(doc) - known
        if unknown:
            raise _config_error(sorted(unknown)[0], "not a configuration field")
        for key in ("band", "deltas"):
            if key in doc:
                doc[key] = tuple(doc[key])
        try:
            base = replace(base, **doc)
        except TypeError as exc:
            raise _config_error("config", str(exc))
    updates = {}
    for flag, name in _FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if flag == "no_center":
            value = not value
        updates[name] = value
    try:
        return replace(base, **updates).validate()
    except (TypeError, ValueError) as exc:
        if isinstance(exc, CliError):
            raise
        raise _config_error("config", str(exc))


def _parse_angle(text: str) -> float:
    s = text.strip().lower().replace(" ", "")
    if "pi" not in s:
        return float(s)
    head, _, tail = s.partition("pi")
    coef = 1.0 if head in ("", "+") else float(head.rstrip("*"))
    div = float(tail.lstrip("/")) if tail else 1.0
    return coef * math.pi / div


def parse_band(text: str) -> tuple[float, float]:
    parts = text.split(":")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("band must look like a:b")
    try:
        a, b = (_parse_angle(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse band {text!r}")
    return a, (math.pi if abs(b - math.pi) < 1e-12 else b)


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse list {text!r}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse list {text!r}")


# -- input / output -----------------------------------------------------------------

def read_curves(path) -> tuple[np.ndarray, np.ndarray | None]:
    """Rows = time points, columns = grid samples.

    Lines starting with ``#`` are comments; ``# grid: g1,g2,...`` gives the
    sample locations. A non-numeric first row is treated as a header.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise _io_error("load", f"cannot read {path}: {exc.strerror or exc}")
    grid = None
    rows = []
    lines = [ln for ln in text.splitlines() if ln.strip()]
    data_lines = []
    for ln in lines:
        if ln.lstrip().startswith("#"):
            body = ln.lstrip()[1:].strip()
            if body.lower().startswith("grid:"):
                try:
                    grid = np.array([float(v) for v in body[5:].split(",") if v.strip()])
                except ValueError:
                    raise _io_error("load", f"{path}: malformed grid line")
            continue
        data_lines.append(ln)
    for i, row in enumerate(csv.reader(data_lines)):
        try:
            rows.append([float(v) for v in row])
        except ValueError:
            if i == 0:
                continue  # header
            raise _io_error("load", f"{path}: non-numeric value in data row {i + 1}")
    if not rows:
        raise _io_error("load", f"{path}: no rows")
    width = {len(r) for r in rows}
    if len(width) != 1:
        raise _io_error("load", f"{path}: rows have unequal length")
    data = np.array(rows, dtype=float)
    if grid is not None and grid.size != data.shape[1]:
        raise _io_error("load", f"{path}: grid has {grid.size} points, rows have {data.shape[1]}")
    return data, grid


def write_curves(path, data: np.ndarray, grid: np.ndarray | None = None) -> None:
    buf = io.StringIO()
    if grid is not None:
        buf.write("# grid: " + ",".join(format(float(g), ".17g") for g in grid) + "\n")
    for row in data:
        buf.write(",".join(format(float(v), ".17g") for v in row) + "\n")
    _write_text(path, buf.getvalue())


def _write_text(path, text: str) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise _io_error("write", f"cannot write {path}: {exc.strerror or exc}")


def _rounded(obj):
    if isinstance(obj, dict):
        return {str(k): _rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_rounded(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _rounded(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return float(f"{x:.{SIG_DIGITS}g}")
    return obj


def dump_json(obj) -> str:
    """Deterministic JSON; results are rounded, an embedded ``config`` keeps full precision."""
    out = _rounded(obj)
    if isinstance(obj, dict) and "config" in obj:
        out["config"] = obj["config"]
    return json.dumps(out, indent=2, sort_keys=True) + "\n"


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    x = float(x)
    if math.isnan(x):
        return ""
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.{SIG_DIGITS}g}"


def write_table(path, header: list[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, (str, int)) and not isinstance(v, bool) else _fmt(v)
                    for v in row])
    _write_text(path, buf.getvalue())


def _basis_for(cfg: RunConfig, grid: np.ndarray) -> BasisSpec:
    domain = (float(grid[0]), float(grid[-1]))
    if cfg.basis == "raw":
        return BasisSpec.raw_grid(grid)
    if cfg.basis == "bspline":
        return BasisSpec.bspline(cfg.basis_dim, domain)
    return BasisSpec.fourier(cfg.basis_dim, domain)


def load_series(path, cfg: RunConfig) -> FunctionalSeries:
    data, grid = read_curves(path)
    if grid is None:
        grid = np.linspace(0.0, 1.0, data.shape[1])
    if data.shape[0] < 2:
        raise _io_error("load", f"{path}: need at least 2 rows")
    if not np.all(np.isfinite(data)):
        raise _io_error("load", f"{path}: non-finite values")
    if np.any(np.diff(grid) <= 0):
        raise _io_error("load", f"{path}: grid must be strictly increasing")
    try:
        basis = _basis_for(cfg, grid)
        return project_to_basis(data, basis, grid)
    except BasisError as exc:
        raise _config_error("basis_dim", f"{exc} ({data.shape[1]} grid points)")


def load_volume(path) -> SeparableSeries3D:
    path = Path(path)
    side = path.with_suffix(".json")
    if not side.exists():
        raise _config_error("axes", f"axis metadata missing: expected sidecar {side.name}")
    try:
        meta = json.loads(side.read_text())
        shape = tuple(int(s) for s in meta["shape"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise _config_error("axes", f"unreadable axis metadata in {side.name}: {exc}")
    data, _ = read_curves(path)
    try:
        return SeparableSeries3D(data, shape)
    except ValueError as exc:
        raise _config_error("axes", f"{path.name}: {exc}")


def _pivot(cfg: RunConfig, workers: int):
    cache = Path(cfg.cache_dir).expanduser()
    try:
        sample, hit = cached_pivot(cache, cfg.nu_n, cfg.pivot_paths, cfg.pivot_steps, cfg.seed,
                                   cfg.pivot_method, workers)
    except OSError as exc:
        raise _io_error("pivot", f"cache directory {cache} not usable: {exc}")
    log.info("pivot cache %s", "hit" if hit else "miss")
    return sample, hit


def _out_dir(args) -> Path | None:
    return Path(args.out) if getattr(args, "out", None) else None


# -- subcommands ---------------------------------------------------------------------

def cmd_estimate(args) -> int:
    cfg = resolve_config(args)
    X = load_series(args.input, cfg)
    est = cfg.estimation()
    try:
        if est.center:
            X = center(X)
        n_freq = 1 if cfg.band[0] == cfg.band[1] else cfg.n_freq
        surf = spectral_surface(X, cfg.band, n_freq, None, est.window, est.bandwidth)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, "estimate", str(exc))
    ops = surf.ops[0]
    top = min(args.top, X.d)
    vals, _ = batched_eigh(ops, top)
    hs = np.sum(np.abs(ops) ** 2, axis=(-2, -1))
    if not (np.all(np.isfinite(vals)) and np.all(np.isfinite(hs))):
        raise CliError(EXIT_NUMERIC, "estimate", "non-finite spectral estimate")
    mean_vals = [float(band_mean(vals[:, j], surf.freqs, cfg.band, cfg.measure)) for j in range(top)]
    summary = {
        "config": cfg.to_dict(),
        "T": X.T, "d": X.d, "bandwidth": surf.b,
        "reconstruction_error": X.reconstruction_error,
        "mean_eigenvalues": mean_vals,
        "hs_norm_sq": {"freqs": surf.freqs, "values": hs},
    }
    out = _out_dir(args)
    if out is not None:
        write_table(out / "spectrum.csv", ["freq", "hs_norm_sq"] + [f"lambda_{j + 1}" for j in range(top)],
                    [[w, h, *v] for w, h, v in zip(surf.freqs, hs, vals)])
        write_table(out / "eigenvalues.csv", ["k", "mean_eigenvalue"],
                    [[j + 1, v] for j, v in enumerate(mean_vals)])
        _write_text(out / "estimate.json", dump_json(summary))
        if args.dump_operators:
            np.savez(out / "operators.npz", freqs=surf.freqs, ops=ops)
    print(f"T={X.T} d={X.d} b={_fmt(surf.b)} band=[{_fmt(cfg.band[0])}, {_fmt(cfg.band[1])}]")
    for j, v in enumerate(mean_vals):
        print(f"lambda_{j + 1:<3d} {_fmt(v)}")
    return EXIT_OK


def format_result(res, spec: HypothesisSpec) -> str:
    rows = [
        ("hypothesis", f"{spec.kind}" + ("" if spec.kind == "operator" else f" (k={spec.k})")),
        ("band", f"[{_fmt(spec.band[0])}, {_fmt(spec.band[1])}]"),
        ("distance", _fmt(res.distance)),
        ("normalizer", _fmt(res.normalizer)),
        ("threshold", _fmt(res.delta)),
        ("statistic", _fmt(res.statistic)),
        (f"quantile {1 - spec.alpha:g}", _fmt(res.quantile)),
        ("p-value", _fmt(res.p_value)),
        ("decision", res.decision + (" (degenerate)" if res.degenerate else "")),
    ]
    warn = res.diagnostics.get("eigengap_warnings")
    if warn and any(warn.values()):
        rows.append(("eigengap warnings", ", ".join(f"{k}: {v}" for k, v in sorted(warn.items()))))
    width = max(len(r[0]) for r in rows)
    return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def cmd_test(args) -> int:
    cfg = resolve_config(args)
    X = load_series(args.input_x, cfg)
    Y = load_series(args.input_y, cfg)
    if np.array_equal(X.coeffs, Y.coeffs):
        Y = X
    spec = cfg.hypothesis_spec()
    pivot, _ = _pivot(cfg, args.threads)
    try:
        res = relevant_test(X, Y, spec, pivot, cfg.estimation())
    except SpecError as exc:
        raise CliError(EXIT_CONFIG, "test", str(exc))
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, "test", str(exc))
    if math.isnan(res.statistic) or not math.isfinite(res.distance):
        raise CliError(EXIT_NUMERIC, "test", "statistic is not a number")
    doc = {"config": cfg.to_dict(), "result": res.to_dict()}
    out = _out_dir(args)
    if out is not None:
        _write_text(out / "test_result.json", dump_json(doc))
    print(dump_json(doc) if args.json else format_result(res, spec))
    return EXIT_OK


def cmd_pivot(args) -> int:
    cfg = resolve_config(args)
    alphas = args.alphas or [cfg.alpha]
    for a in alphas:
        if not 0 < a < 1:
            raise _config_error("alphas", f"{a} not in (0, 1)")
    sample, hit = _pivot(cfg, args.threads)
    table = [{"alpha": a, "quantile": quantile(sample, 1 - a)} for a in alphas]
    doc = {"config": cfg.to_dict(), "pivot": sample.provenance(), "quantiles": table}
    out = _out_dir(args)
    if out is not None:
        _write_text(out / "pivot.json", dump_json(doc))
    print(f"pivot: nu_n={cfg.nu_n} paths={cfg.pivot_paths} steps={cfg.pivot_steps} "
          f"method={cfg.pivot_method} seed={cfg.seed} ({'cache hit' if hit else 'simulated'})")
    for row in table:
        print(f"alpha={row['alpha']:<8g} q={_fmt(row['quantile'])}")
    return EXIT_OK


def _experiment_fingerprint(doc: dict) -> str:
    return hashlib.sha256(json.dumps(_rounded(doc), sort_keys=True).encode()).hexdigest()[:16]


def cmd_experiment(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args)
    if out is None:
        raise _config_error("out", "experiment needs an output directory")
    try:
        probe = [ScenarioSpec(args.scenario, T, p) for p in args.params for T in args.Ts]
    except ValueError as exc:
        raise _config_error("scenario", str(exc))
    if not probe:
        raise _config_error("params", "empty scenario grid")
    if args.reps < 50:
        raise _config_error("reps", "must be >= 50")
    for T in args.Ts:
        if T < 16:
            raise _config_error("Ts", f"T={T} too small")
    delta = cfg.delta
    if args.delta_at is not None:
        try:
            delta = population_threshold(args.scenario, args.delta_at, cfg.hypothesis_spec().kind,
                                         cfg.k, cfg.band, cfg.n_freq, cfg.measure)
        except ValueError as exc:
            raise _config_error("delta_at", str(exc))
        cfg = replace(cfg, delta=delta)
    spec = cfg.hypothesis_spec()
    setup = {"config": cfg.to_dict(), "scenario": args.scenario, "params": args.params,
             "Ts": args.Ts, "reps": args.reps, "delta_at": args.delta_at}
    fingerprint = _experiment_fingerprint(setup)
    progress = out / "experiment.progress.jsonl"
    done = {}
    if progress.exists():
        lines = progress.read_text().splitlines()
        try:
            stored = json.loads(lines[0]).get("fingerprint") if lines else None
        except (ValueError, AttributeError):
            stored = None
        if stored == fingerprint:
            for ln in lines[1:]:
                try:
                    pt = GridPointResult(**json.loads(ln))
                except (ValueError, TypeError):
                    continue  # torn final line after an interrupt
                if pt.error is None:
                    done[(pt.param, pt.T)] = pt
        else:
            log.warning("progress file belongs to a different setup; starting over")
            progress.unlink()
    # rewrite so that a torn trailing line from an interrupt is dropped
    _write_text(progress, "".join([json.dumps({"fingerprint": fingerprint}) + "\n"]
                                  + [json.dumps(_rounded(asdict(pt)), sort_keys=True) + "\n"
                                     for pt in done.values()]))

    def record(pt):
        with progress.open("a") as fh:
            fh.write(json.dumps(_rounded(asdict(pt)), sort_keys=True) + "\n")

    pivot, _ = _pivot(cfg, args.threads)
    report = rejection_experiment(args.scenario, args.params, args.Ts, spec, args.reps, pivot,
                                  cfg.seed, cfg.estimation(), args.threads, done, record)
    doc = dict(setup, fingerprint=fingerprint, hypothesis=report.hypothesis,
               estimation=report.estimation, pivot=report.pivot,
               points=[asdict(p) for p in report.points])
    _write_text(out / "experiment.json", dump_json(doc))
    write_table(out / "experiment.csv",
                ["param", "T", "reps", "rejections", "rate", "se", "mean_distance", "error"],
                [[p.param, p.T, p.reps, p.rejections, p.rate, p.se, p.mean_distance, p.error or ""]
                 for p in report.points])
    for p in report.points:
        status = f"error: {p.error}" if p.error else f"rate={_fmt(p.rate)} se={_fmt(p.se)}"
        print(f"param={p.param:g} T={p.T} {status}")
    log.info("experiment runtime %.1fs", report.runtime)
    ok = any(p.error is None for p in report.points)
    return EXIT_OK if ok else EXIT_NUMERIC


def _parse_pairs(text: str | None, n: int) -> list[tuple[int, int]]:
    if not text:
        return [(i, j) for i in range(n) for j in range(i + 1, n)]
    pairs = []
    for item in text.split(","):
        try:
            i, j = (int(v) for v in item.split("-"))
        except ValueError:
            raise _config_error("pairs", f"cannot parse pair {item!r}")
        if not (0 <= i < n and 0 <= j < n and i != j):
            raise _config_error("pairs", f"pair {item!r} outside 0..{n - 1}")
        pairs.append((min(i, j), max(i, j)))
    return sorted(set(pairs))


def cmd_separable(args) -> int:
    cfg = resolve_config(args)
    paths = [Path(p) for p in args.input]
    if len(paths) < 1:
        raise _config_error("input", "need at least one subject")
    subjects = [load_volume(p) for p in paths]
    if args.detrend is not None:
        subjects = [s.detrended(args.detrend) for s in subjects]
    shapes = {s.shape for s in subjects}
    if len(shapes) != 1:
        raise _config_error("axes", "subjects differ in axis sizes")
    pairs = _parse_pairs(args.pairs, len(subjects))
    est = cfg.estimation()
    etas = eta_grid(cfg.nu_n)
    n_freq = 1 if cfg.band[0] == cfg.band[1] else cfg.n_freq
    try:
        surfaces = [separable_surface(s.centered() if est.center else s, cfg.band, n_freq, etas,
                                      est.window, est.bandwidth(s.T)) for s in subjects]
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, "separable", str(exc))
    names = [p.stem for p in paths]
    out = _out_dir(args)
    pivot, _ = _pivot(cfg, args.threads)

    # Kronecker eigenvalue tables: triple products merged per frequency at eta = 1,
    # then averaged rank by rank over the band
    kron = {}
    for name, surf, s in zip(names, surfaces, subjects):
        per = int(np.floor(s.T ** (1.0 / 3.0) + 1e-9))
        per = min([per] + [A.shape[-1] for A in surf.ops])
        dir_vals = [np.clip(batched_eigh(A[-1], per)[0], 0.0, None) for A in surf.ops]
        merged = [kronecker_eigensystem(tuple(v[j] for v in dir_vals), top_n=per ** 3)
                  for j in range(surf.freqs.size)]
        values = np.array([m.values for m in merged])  # (n_freq, per^3)
        mean_vals = np.atleast_1d(band_mean(values.T, surf.freqs, cfg.band, cfg.measure))
        triples = []
        for r in range(per ** 3):
            seen = [tuple(int(i) for i in m.indices[r]) for m in merged]
            triples.append(max(sorted(set(seen)), key=seen.count))
        kron[name] = {"values": mean_vals, "indices": triples}
        hs_dir = [np.sum(np.abs(A[-1]) ** 2, axis=(-2, -1)) for A in surf.ops]
        if out is not None:
            write_table(out / f"kronecker_{name}.csv", ["rank", "j", "k", "l", "eigenvalue"],
                        [[r + 1, *t, v] for r, (t, v) in enumerate(zip(triples, mean_vals))])
            write_table(out / f"directional_{name}.csv",
                        ["freq", "hs_norm_sq_1", "hs_norm_sq_2", "hs_norm_sq_3", "hs_norm_sq"],
                        [[w, a, b, c, a * b * c] for w, a, b, c in zip(surf.freqs, *hs_dir)])

    deltas = cfg.deltas or (cfg.delta,) * 3
    kinds = [("operator", 1), ("eigenprojector", cfg.k), ("eigenvalue", cfg.k)]
    matrices = {}
    for (kind, k), delta in zip(kinds, deltas):
        spec = replace(cfg.hypothesis_spec(), kind=kind, k=k, delta=delta)
        mat = [[None] * len(subjects) for _ in subjects]
        for i, j in pairs:
            try:
                res = separable_test(subjects[i], subjects[j], spec, pivot, est,
                                     surfaces=(surfaces[i], surfaces[j]))
            except SpecError as exc:
                raise CliError(EXIT_CONFIG, "separable", str(exc))
            mat[i][j] = res.p_value
        matrices[kind] = mat
        if out is not None:
            write_table(out / f"pvalues_{kind}.csv", [""] + names,
                        [[names[i]] + [("" if v is None else v) for v in row]
                         for i, row in enumerate(mat)])
    doc = {"config": cfg.to_dict(), "subjects": names, "pairs": pairs,
           "p_values": matrices,
           "kronecker": kron}
    if out is not None:
        _write_text(out / "separable.json", dump_json(doc))
    for kind, mat in matrices.items():
        print(f"{kind} p-values")
        print("\t" + "\t".join(names))
        for i, row in enumerate(mat):
            print(names[i] + "\t" + "\t".join("" if v is None else _fmt(v) for v in row))
    return EXIT_OK


def cmd_generate(args) -> int:
    try:
        spec = ScenarioSpec(args.scenario, args.T, args.param)
    except ValueError as exc:
        raise _config_error("scenario", str(exc))
    if args.grid_size < spec.d:
        raise _config_error("grid_size", f"must be >= basis dimension {spec.d}")
    ss = child_seed(np.random.SeedSequence(args.seed), GENERATION_STREAM)
    X, Y = scenario_series(spec, ss)
    series = X if args.which == "x" else Y
    grid = np.linspace(0.0, 1.0, args.grid_size)
    write_curves(args.out, series.reconstruct(grid), grid)
    print(f"wrote {series.T} curves on {grid.size} grid points to {args.out}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser, estimation=True, testing=True):
    p.add_argument("--config", help="re-use the configuration embedded in a result file")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1, help="worker processes (output does not depend on it)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--cache-dir", dest="cache_dir")
    p.add_argument("--nu-n", dest="nu_n", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--pivot-paths", dest="pivot_paths", type=int)
    p.add_argument("--pivot-steps", dest="pivot_steps", type=int)
    p.add_argument("--pivot-method", dest="pivot_method", choices=["skeleton", "full"])
    if estimation:
        p.add_argument("--band", type=parse_band, help="frequency band a:b, e.g. 0:pi/2")
        p.add_argument("--window", choices=["daniell", "bartlett", "parzen"])
        p.add_argument("--bandwidth-exp", dest="bandwidth_exp", type=float)
        p.add_argument("--nfreq", type=int)
        p.add_argument("--measure", choices=["uniform", "lebesgue"])
        p.add_argument("--no-center", dest="no_center", action="store_const", const=True)
        p.add_argument("--basis", choices=["fourier", "bspline", "raw"])
        p.add_argument("--basis-dim", dest="basis_dim", type=int)
    if testing:
        p.add_argument("--delta", type=float)
        p.add_argument("--hypothesis", choices=["operator", "projector", "eigenvalue"])
        p.add_argument("--k", type=int)
        p.add_argument("--dependent", action="store_const", const=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relspec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="spectral density operator summary of one sample")
    p.add_argument("--input", required=True)
    p.add_argument("--top", type=int, default=5, help="number of eigenvalues to report")
    p.add_argument("--dump-operators", action="store_true")
    _add_common(p, testing=False)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("test", help="relevant-difference test between two samples")
    p.add_argument("--input-x", dest="input_x", required=True)
    p.add_argument("--input-y", dest="input_y", required=True)
    p.add_argument("--json", action="store_true", help="print JSON instead of the table")
    _add_common(p)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("pivot", help="simulate or load pivot quantiles")
    p.add_argument("--alphas", type=_float_list)
    _add_common(p, estimation=False, testing=False)
    p.set_defaults(func=cmd_pivot)

    p = sub.add_parser("experiment", help="rejection rates over a scenario grid")
    p.add_argument("--scenario", required=True,
                   choices=["bb-shift", "bb-amplitude", "ar-shift", "ar-dependence"])
    p.add_argument("--params", type=_float_list, required=True)
    p.add_argument("--T", dest="Ts", type=_int_list, required=True)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--delta-at", dest="delta_at", type=float,
                   help="use the population distance at this parameter as threshold")
    _add_common(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("separable", help="pairwise tests between separable 3-D subjects")
    p.add_argument("--input", action="append", required=True,
                   help="subject CSV (repeat); axis sizes in a sidecar .json")
    p.add_argument("--pairs", help="e.g. 0-1,0-2 (default: all pairs)")
    p.add_argument("--deltas", type=lambda t: tuple(_float_list(t)),
                   help="thresholds for the operator, projector and eigenvalue tests")
    p.add_argument("--detrend", type=int, help="remove a per-voxel polynomial trend of this order")
    _add_common(p)
    p.set_defaults(func=cmd_separable)

    p = sub.add_parser("generate", help="write simulated curves as CSV")
    p.add_argument("--scenario", required=True,
                   choices=["bb-shift", "bb-amplitude", "ar-shift", "ar-dependence"])
    p.add_argument("--param", type=float, default=0.0)
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--which", choices=["x", "y"], default="y")
    p.add_argument("--grid-size", dest="grid_size", type=int, default=101)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1, help="accepted for uniformity; unused")
    p.add_argument("--out", required=True, help="output CSV file")
    p.set_defaults(func=cmd_generate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with code 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("error [config]: field 'threads': must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error [{args.command}/{exc.stage}]: {exc.message}", file=sys.stderr)
        return exc.code
    except (np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
        print(f"error [{args.command}/compute]: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
