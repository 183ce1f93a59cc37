import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ngmfit import montecarlo
from ngmfit.montecarlo import ScenarioSpec, build_truth, draw_seasons, mse, observe_seasons, run_scenario
from ngmfit.epi import effective_r
from ngmfit.observe import NoiseParams
from oracles import mse_loop

TRUTH = np.array([[2.5, 0.75], [1.0, 1.5]])


def test_mse_hand_cases():
    assert mse([TRUTH] * 5, TRUTH) == 0.0
    assert mse([TRUTH + 0.1] * 5, TRUTH) == pytest.approx(4 * 0.01)
    est = [TRUTH + 0.1, TRUTH - 0.1]
    assert mse(est, TRUTH) == pytest.approx(4 * 0.01)


def test_single_replicate_is_squared_bias():
    est = TRUTH + np.array([[0.1, -0.2], [0.0, 0.3]])
    assert mse([est], TRUTH) == pytest.approx(0.01 + 0.04 + 0.09)


@given(arrays(float, (7, 2, 2), elements=st.floats(-5, 5)))
def test_mse_matches_loop(est):
    assert mse(est, TRUTH) == pytest.approx(mse_loop(est.tolist(), TRUTH.tolist()), rel=1e-10, abs=1e-10)


def test_mse_rejects_empty():
    with pytest.raises(ValueError):
        mse(np.zeros((0, 2, 2)), TRUTH)


def test_spec_validation():
    with pytest.raises(ValueError):
        ScenarioSpec(scenario="v")
    with pytest.raises(ValueError):
        ScenarioSpec(replicates=0)
    with pytest.raises(ValueError):
        ScenarioSpec(scenario="iii", n_years=1)


def test_season_draws_hit_target_re():
    spec = ScenarioSpec(scenario="iii", n_years=10)
    re, s0, r = draw_seasons(spec, np.random.default_rng(4))
    assert r[0] == 1.0
    assert np.all((re[1:] >= 1.01) & (re[1:] <= 1.6))
    for y in range(1, 10):
        assert effective_r(spec.beta, s0[y], r[y]) == pytest.approx(re[y], rel=1e-9)


def test_observe_seasons_deterministic():
    truth = build_truth(ScenarioSpec(scenario="iii", n_years=3))
    a = observe_seasons(truth.incidence, NoiseParams(10, 0.1), 5)
    b = observe_seasons(truth.incidence, NoiseParams(10, 0.1), 5)
    c = observe_seasons(truth.incidence, NoiseParams(10, 0.1), 6)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(a[0], c[0])


def test_run_is_deterministic_and_ordered():
    spec = ScenarioSpec(replicates=4, seed=11)
    a, b = run_scenario(spec), run_scenario(spec)
    assert np.array_equal(a.estimates, b.estimates)
    assert a.indices.tolist() == [0, 1, 2, 3]
    assert a.mse == pytest.approx(mse(a.estimates, a.truth.beta))
    d = a.to_dict()
    assert d["replicates_ok"] == 4 and d["failures"] == []


def test_parallel_matches_serial():
    spec = ScenarioSpec(replicates=4, seed=2)
    serial = run_scenario(spec)
    par = run_scenario(ScenarioSpec(replicates=4, seed=2, workers=2))
    assert np.array_equal(serial.estimates, par.estimates)


def test_failures_are_recorded(monkeypatch):
    real = montecarlo.two_stage_fit

    def flaky(problem, opts=None):
        if problem.observed[0][0, 5] > np.median(problem.observed[0][0]):
            raise RuntimeError("boom")
        return real(problem, opts)

    monkeypatch.setattr(montecarlo, "two_stage_fit", flaky)
    spec = ScenarioSpec(replicates=6, seed=0)
    with pytest.warns(RuntimeWarning):
        out = run_scenario(spec)
    assert out.failures and all("boom" in e for _, e in out.failures)
    assert len(out.indices) + len(out.failures) == 6
