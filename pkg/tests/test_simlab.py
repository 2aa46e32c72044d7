import numpy as np
import pytest

from relspec.core import center
from relspec.relevance import HypothesisSpec
from relspec.simlab import (ScenarioSpec, bb_population_operator, binomial_se, gen_bb_series,
                            gen_far_series, population_threshold, rejection_experiment,
                            run_grid_point, scenario_series)


# Thresholds induced by the reference parameter values (uniform band measure on [0, pi]).
@pytest.mark.parametrize("scenario,param,kind,k,expected,rel", [
    ("bb-amplitude", 3, "operator", 1, 0.044, 0.05),
    ("bb-amplitude", 3, "eigenvalue", 1, 0.040, 0.05),
    ("bb-amplitude", 3, "eigenvalue", 2, 0.0025, 0.05),
    ("ar-shift", 0.075, "operator", 1, 0.81, 0.05),
    ("ar-shift", 0.075, "eigenprojector", 1, 0.89, 0.05),
    ("ar-shift", 0.075, "eigenprojector", 2, 0.89, 0.05),
    ("ar-dependence", 0.28, "operator", 1, 0.36, 0.05),
    ("ar-dependence", 0.28, "eigenvalue", 2, 0.07, 0.05),
    ("bb-shift", 0.05, "eigenprojector", 1, 0.047, 0.05),
])
def test_reference_thresholds(scenario, param, kind, k, expected, rel):
    assert population_threshold(scenario, param, kind, k) == pytest.approx(expected, rel=rel)


@pytest.mark.parametrize("k", [3, 4])
def test_unchanged_projectors_have_zero_threshold(k):
    assert population_threshold("ar-shift", 0.075, "eigenprojector", k) == pytest.approx(0, abs=1e-20)


@pytest.mark.xfail(strict=True, reason="published threshold not reproduced; see decisions ledger")
@pytest.mark.parametrize("scenario,param,kind,k,expected", [
    ("bb-shift", 0.05, "operator", 1, 0.00047),
    ("bb-shift", 0.05, "eigenprojector", 2, 0.040),
    ("ar-dependence", 0.28, "eigenvalue", 1, 0.21),
])
def test_unreproduced_thresholds(scenario, param, kind, k, expected):
    assert population_threshold(scenario, param, kind, k) == pytest.approx(expected, rel=0.05)


def test_projector_orthogonality_points():
    # third eigenvalue of Y crosses 1.5 where 6 - sqrt(36 - 32 cos^2(2 pi iota)) = 1.5
    iota3 = np.arccos(np.sqrt(15.75 / 32)) / (2 * np.pi)
    iota4 = np.arccos(np.sqrt(5.75 / 32)) / (2 * np.pi)
    assert 0.125 < iota3 < 0.150 and 0.175 < iota4 < 0.200
    assert population_threshold("ar-shift", iota3 - 1e-3, "eigenprojector", 3) == pytest.approx(0, abs=1e-12)
    assert population_threshold("ar-shift", iota3 + 1e-3, "eigenprojector", 3) == pytest.approx(2)
    assert population_threshold("ar-shift", iota4 + 1e-3, "eigenprojector", 4) == pytest.approx(2)


def test_bb_population_eigenvalues():
    lam = np.sort(np.linalg.eigvalsh(bb_population_operator(21)))[::-1]
    k = np.arange(1, 6)
    np.testing.assert_allclose(lam[:5], 1 / (np.pi * k) ** 2, rtol=1e-3)


def test_bb_sample_covariance_matches_population():
    X = gen_bb_series(20_000, seed=1)
    emp = X.coeffs.T @ X.coeffs / X.T / (2 * np.pi)
    F = bb_population_operator(21)
    assert np.linalg.norm(emp - F) / np.linalg.norm(F) < 0.03


def test_far_stationary_variance():
    X = gen_far_series(40_000, 0.5, 0.0, seed=2)
    np.testing.assert_allclose(np.var(X.coeffs, axis=0), [4, 8, 0.5, 1.5], rtol=0.05)
    with pytest.raises(ValueError):
        gen_far_series(10, 1.0)


def test_scenario_series_deterministic_and_distinct():
    spec = ScenarioSpec("bb-amplitude", 64, 2)
    X1, Y1 = scenario_series(spec, 5)
    X2, Y2 = scenario_series(spec, np.random.SeedSequence(5))
    np.testing.assert_array_equal(X1.coeffs, X2.coeffs)
    np.testing.assert_array_equal(Y1.coeffs, Y2.coeffs)
    assert not np.allclose(X1.coeffs, Y1.coeffs / 1.44)
    ss = np.random.SeedSequence(9)
    a = scenario_series(spec, ss)[0].coeffs
    np.testing.assert_array_equal(a, scenario_series(spec, ss)[0].coeffs)


@pytest.mark.parametrize("bad", [dict(id="bb-shift", param=0.3), dict(id="bb-amplitude", param=1.5),
                                 dict(id="ar-dependence", param=0.7), dict(id="other")])
def test_scenario_validation(bad):
    with pytest.raises(ValueError):
        ScenarioSpec(T=64, **{"param": 0.0, **bad})


def test_grid_point_se_and_worker_independence(pivot):
    hyp = HypothesisSpec(kind="eigenvalue", k=1, delta=population_threshold("ar-dependence", 0.3, "eigenvalue"))
    a = run_grid_point("ar-dependence", 0.3, 64, hyp, 50, pivot, seed=3)
    b = run_grid_point("ar-dependence", 0.3, 64, hyp, 50, pivot, seed=3, workers=2)
    assert a == b
    assert a.se == pytest.approx(np.sqrt(a.rate * (1 - a.rate) / 50))
    assert binomial_se(0.5, 100) == 0.05
    with pytest.raises(ValueError):
        run_grid_point("ar-dependence", 0.3, 64, hyp, 10, pivot)


def test_experiment_resume_and_errors(pivot):
    hyp = HypothesisSpec(delta=0.5)
    seen = []
    full = rejection_experiment("ar-shift", [0.0, 0.1], [64], hyp, 50, pivot, seed=1, on_point=seen.append)
    assert len(seen) == 2
    done = {(0.0, 64): full.points[0]}
    again = rejection_experiment("ar-shift", [0.0, 0.1], [64], hyp, 50, pivot, seed=1, done=done)
    assert again.points == full.points
    bad = rejection_experiment("ar-shift", [0.1, 0.9], [64], hyp, 50, pivot, seed=1)
    assert bad.points[0].error is None and "0.9" in bad.points[1].error


@pytest.mark.slow
def test_bb_shift_rejection_monotone(pivot):
    delta = population_threshold("bb-shift", 0.05)
    rep = rejection_experiment("bb-shift", [0.0, 0.05, 0.10], [128], HypothesisSpec(delta=delta),
                               100, pivot, seed=4)
    rates = [p.rate for p in rep.points]
    assert rates[0] <= rates[1] <= rates[2] and rates[2] > rates[0]


def test_centering_leaves_bb_data_mean_zero():
    X = center(gen_bb_series(128, seed=0))
    np.testing.assert_allclose(X.coeffs.mean(axis=0), 0, atol=1e-14)
