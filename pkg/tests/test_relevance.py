import numpy as np
import pytest

from relspec.core import BasisSpec, FunctionalSeries
from relspec.eigen import SeparableSeries3D
from relspec.pivot import simulate_pivot
from relspec.relevance import (DistanceCurve, EstimationConfig, HypothesisSpec, SpecError,
                               band_integrate, band_mean, decide, relevant_test,
                               self_normalizer, separable_distance_curve, separable_surface,
                               separable_test)
from relspec.simlab import ScenarioSpec, scenario_series
from relspec.spectral import eta_grid, frequency_grid


def test_band_integrate_analytic():
    w = frequency_grid((0, np.pi), 2001)
    assert band_integrate(np.sin(w), w) == pytest.approx(2.0, abs=1e-6)
    assert band_integrate(np.full(64, 3.0), frequency_grid((0, np.pi), 64), (0, np.pi)) == pytest.approx(3 * np.pi)
    w = frequency_grid((0.5, 1.5), 1001)
    assert band_integrate(w ** 2, w, (0.5, 1.5)) == pytest.approx((1.5 ** 3 - 0.5 ** 3) / 3, abs=1e-6)


def test_band_mean_and_point_band():
    w = frequency_grid((0, np.pi / 2), 33)
    assert band_mean(np.full(33, 2.0), w, (0, np.pi / 2)) == pytest.approx(2.0)
    assert band_mean(np.full(33, 2.0), w, (0, np.pi / 2), "lebesgue") == pytest.approx(np.pi)
    assert band_integrate(np.array([[4.0]]), np.array([1.0]), (1.0, 1.0))[0] == 4.0
    with pytest.raises(ValueError, match="not covered"):
        band_integrate(np.ones(5), np.linspace(0, 1, 5), (0, 2))


def test_self_normalizer_hand_computed():
    etas = eta_grid(4)
    B = np.array([0.1, 0.3, 0.2, 1.0])
    curve = DistanceCurve("operator", etas, np.array([0.0, 1.0]), np.repeat(B[:, None], 2, axis=1))
    expected = np.sqrt(np.mean((B[:3] - etas[:3] ** 2 * 1.0) ** 2))
    assert self_normalizer(curve, (0.0, 1.0)) == pytest.approx(expected)


def test_decide(pivot):
    stat, q, p, dec, deg = decide(2.0, 0.1, 1.0, pivot, 0.05)
    assert stat == pytest.approx(10.0) and not deg
    assert dec == ("reject" if 10.0 > q else "accept")
    assert p == pivot.tail_probability(10.0)
    assert decide(0.0, 0.0, 0.5, pivot, 0.05)[3:] == ("accept", True)
    s, _, p, dec, deg = decide(1.0, 0.0, 0.5, pivot, 0.05)
    assert (s, p, dec, deg) == (np.inf, 0.0, "reject", True)
    assert decide(1.0, 1e-15, 0.5, pivot, 0.05)[4]


def test_hypothesis_validation():
    assert HypothesisSpec(kind="projector").kind == "eigenprojector"
    for bad in [dict(kind="x"), dict(k=0), dict(delta=-1), dict(band=(2, 1)), dict(band=(0, 4)),
                dict(alpha=1), dict(nu_n=2), dict(measure="count")]:
        with pytest.raises(SpecError):
            HypothesisSpec(**bad)


def _pair(T=128, param=0.0, scen="ar-shift", seed=0):
    return scenario_series(ScenarioSpec(scen, T, param), seed)


@pytest.mark.parametrize("kind", ["operator", "eigenprojector", "eigenvalue"])
@pytest.mark.parametrize("delta", [1e-8, 0.1, 5.0])
def test_identical_samples_degenerate_accept(pivot, kind, delta):
    X, _ = _pair()
    res = relevant_test(X, X, HypothesisSpec(kind=kind, delta=delta), pivot)
    assert res.degenerate and res.decision == "accept" and res.p_value == 1.0
    assert res.to_dict()["statistic"] == "-inf"


def test_scale_invariance_operator(pivot):
    X, Y = _pair(param=0.2)
    spec = HypothesisSpec()
    a = relevant_test(X, Y, spec, pivot)
    b = relevant_test(X.scaled(3.0), Y.scaled(3.0), spec, pivot)
    assert b.statistic == pytest.approx(a.statistic, rel=1e-9)
    assert b.distance == pytest.approx(81 * a.distance, rel=1e-9)


def test_large_difference_rejected(pivot):
    X, Y = _pair(T=256, param=0.25)
    res = relevant_test(X, Y, HypothesisSpec(kind="eigenprojector", k=1, delta=0.5), pivot)
    assert res.reject and res.p_value < 0.05


def test_errors(pivot):
    X, Y = _pair()
    with pytest.raises(SpecError, match="ratio-rate"):
        relevant_test(X, _pair(T=140)[1], HypothesisSpec(dependence="dependent"), pivot)
    with pytest.raises(SpecError, match="nu_n"):
        relevant_test(X, Y, HypothesisSpec(nu_n=10), pivot)
    with pytest.raises(SpecError, match="exceeds"):
        relevant_test(X, Y, HypothesisSpec(kind="eigenvalue", k=5), pivot)
    Z = FunctionalSeries(np.zeros((128, 3)), BasisSpec.fourier(3))
    with pytest.raises(SpecError):
        relevant_test(X, Z, HypothesisSpec(), pivot)


def test_dependent_mode_runs(pivot):
    X, Y = _pair(T=128, param=0.1)
    res = relevant_test(X, Y, HypothesisSpec(dependence="dependent", delta=1.0), pivot)
    assert np.isfinite(res.statistic)


def test_eigengap_warnings_recorded(pivot):
    rng = np.random.default_rng(0)
    X = FunctionalSeries(rng.standard_normal((128, 3)), BasisSpec.fourier(3))
    Y = FunctionalSeries(rng.standard_normal((128, 3)), BasisSpec.fourier(3))
    res = relevant_test(X, Y, HypothesisSpec(kind="eigenprojector", k=1, delta=0.5), pivot,
                        EstimationConfig(gap_tol=0.5))
    assert res.diagnostics["eigengap_warnings"]["X"] > 0


def test_point_band(pivot):
    X, Y = _pair(param=0.2)
    res = relevant_test(X, Y, HypothesisSpec(band=(1.0, 1.0), delta=0.1), pivot)
    assert res.diagnostics["n_freq"] == 1 and np.isfinite(res.statistic)


def _volume(rng, T=64, shape=(4, 4, 4)):
    return SeparableSeries3D(rng.standard_normal((T, int(np.prod(shape)))), shape)


@pytest.mark.parametrize("kind,k", [("operator", 1), ("eigenprojector", 1), ("eigenprojector", 3),
                                    ("eigenvalue", 2)])
def test_separable_distance_matches_kronecker_matrices(kind, k):
    rng = np.random.default_rng(7)
    spec = HypothesisSpec(kind=kind, k=k)
    etas = eta_grid(20)
    sx = separable_surface(_volume(rng).centered(), spec.band, 5, etas)
    sy = separable_surface(_volume(rng).centered(), spec.band, 5, etas)
    curve = separable_distance_curve(sx, sy, spec)
    for i, j in [(19, 0), (10, 3)]:
        A = np.kron(np.kron(sx.ops[0][i, j], sx.ops[1][i, j]), sx.ops[2][i, j])
        B = np.kron(np.kron(sy.ops[0][i, j], sy.ops[1][i, j]), sy.ops[2][i, j])
        if kind == "operator":
            ref = np.sum(np.abs(A - B) ** 2)
        else:
            la, va = np.linalg.eigh(A)
            lb, vb = np.linalg.eigh(B)
            ref = ((la[-k] - lb[-k]) ** 2 if kind == "eigenvalue"
                   else 2 - 2 * abs(np.vdot(vb[:, -k], va[:, -k])) ** 2)
        assert curve.values[i, j] == pytest.approx(etas[i] ** 2 * ref, rel=1e-8, abs=1e-14)


@pytest.mark.parametrize("kind", ["operator", "eigenprojector", "eigenvalue"])
def test_separable_identical_subjects(pivot, kind):
    X = _volume(np.random.default_rng(2))
    res = separable_test(X, X, HypothesisSpec(kind=kind, delta=0.01), pivot,
                         EstimationConfig(n_freq=8))
    assert res.degenerate and res.p_value == 1.0 and res.decision == "accept"
