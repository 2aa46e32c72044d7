import logging

import numpy as np
import pytest

from relspec.pivot import (PivotSample, cache_key, cached_pivot, load_pivot, pivot_from_paths,
                           quantile, simulate_pivot)

# Produced by tests/oracles/pivot_golden.py (MT19937, bridge construction, 1e6 paths).
GOLDEN_Q95 = 9.8915


def test_pivot_from_paths_hand_computed():
    nodes = np.array([[1.0, 0.0, 1.0, 2.0]])  # nu_n = 4, B(1) = 2
    eta = np.array([0.25, 0.5, 0.75])
    inner = eta ** 2 * (np.array([1.0, 0.0, 1.0]) - eta * 2.0) ** 2
    assert pivot_from_paths(nodes, 4)[0] == pytest.approx(2.0 / np.sqrt(inner.mean()))


def test_sample_properties(pivot):
    q95 = quantile(pivot, 0.95)
    assert abs(np.median(pivot.draws)) <= 0.02 * q95
    assert q95 == pytest.approx(GOLDEN_Q95, rel=0.02)
    assert abs(quantile(pivot, 0.5)) < 0.05
    assert pivot.tail_probability(-np.inf) == 1.0
    assert pivot.tail_probability(np.inf) == 0.0
    assert pivot.tail_probability(q95) == pytest.approx(0.05, abs=1e-4)


def test_reproducible_and_worker_independent():
    a = simulate_pivot(n_paths=25_000, seed=3)
    b = simulate_pivot(n_paths=25_000, seed=3, workers=2)
    np.testing.assert_array_equal(a.draws, b.draws)
    assert not np.array_equal(a.draws, simulate_pivot(n_paths=25_000, seed=4).draws)


def test_quantile_stable_across_seeds():
    qs = [quantile(simulate_pivot(seed=s), 0.95) for s in (1, 2, 3)]
    assert max(qs) / min(qs) - 1 < 0.02


def test_full_paths_agree_with_skeleton():
    full = simulate_pivot(n_paths=20_000, n_steps=2000, seed=9, method="full")
    skel = simulate_pivot(n_paths=20_000, n_steps=2000, seed=9)
    assert quantile(full, 0.95) == pytest.approx(quantile(skel, 0.95), rel=0.06)
    assert quantile(full, 0.95) == pytest.approx(GOLDEN_Q95, rel=0.06)


@pytest.mark.parametrize("kw", [dict(n_steps=10_001), dict(n_paths=10), dict(nu_n=2),
                                dict(method="exact")])
def test_invalid_parameters(kw):
    with pytest.raises(ValueError):
        simulate_pivot(**kw)


def test_sample_validation():
    with pytest.raises(ValueError):
        PivotSample(np.array([1.0, np.inf]), 20, 2, 20, 0)
    with pytest.raises(ValueError):
        quantile(np.arange(10.0), 1.0)


def test_cache_hit_and_corruption(tmp_path, caplog):
    s1, hit1 = cached_pivot(tmp_path, n_paths=5000, seed=1)
    s2, hit2 = cached_pivot(tmp_path, n_paths=5000, seed=1)
    assert (hit1, hit2) == (False, True)
    np.testing.assert_array_equal(s1.draws, s2.draws)
    path = tmp_path / f"pivot-{cache_key(20, 5000, 10_000, 1)}.npz"
    assert load_pivot(path).provenance() == s1.provenance()
    path.write_bytes(b"garbage")
    with caplog.at_level(logging.WARNING):
        s3, hit3 = cached_pivot(tmp_path, n_paths=5000, seed=1)
    assert not hit3 and "regenerating" in caplog.text
    np.testing.assert_array_equal(s3.draws, s1.draws)
