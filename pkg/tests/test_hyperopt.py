import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from oracles import branin, grid_minimum
from perovnet.hyperopt import (
    DIVERGED,
    ERROR,
    OK,
    TIMEOUT,
    HyperDim,
    HyperoptError,
    HyperSpace,
    Trial,
    TrialTimeout,
    append_trial,
    default_space,
    expected_improvement,
    fit_surrogate,
    propose,
    read_trials,
    tune,
)
from perovnet.nn.layers import NumericalError

LINE = HyperSpace((HyperDim("x", 0.0, 1.0),))


def branin_params(p):
    return float(branin((p["x1"], p["x2"])))


BRANIN_SPACE = HyperSpace((HyperDim("x1", -5.0, 10.0), HyperDim("x2", 0.0, 15.0)))


def test_ei_closed_form_units():
    assert expected_improvement(1.0, 0.0, 1.0) == 0.0
    assert expected_improvement(0.0, 0.0, 1.0) == 1.0
    assert abs(expected_improvement(1.0, 1.0, 1.0) - 1 / math.sqrt(2 * math.pi)) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(st.floats(-10, 10), st.floats(0, 5), st.floats(-10, 10))
def test_ei_non_negative(mu, sigma, best):
    assert expected_improvement(mu, sigma, best) >= 0


def test_ei_matches_formula():
    mu, s, best = np.array([0.3, -1.0]), np.array([0.7, 2.0]), 0.1
    z = (best - mu) / s
    ref = (best - mu) * norm.cdf(z) + s * norm.pdf(z)
    assert np.allclose(expected_improvement(mu, s, best), ref, rtol=0, atol=1e-15)


def test_noise_free_gp_interpolates():
    rng = np.random.default_rng(0)
    X = rng.random((8, 3))
    y = np.sin(3 * X).sum(1)
    sur = fit_surrogate(list(zip(X, y)), noise_var=0.0)
    mu, var = sur.predict(X)
    assert np.abs(mu - y).max() <= 1e-6
    assert var.max() <= 1e-9 and var.min() >= 0
    # the incumbent training point has zero EI
    assert sur.expected_improvement(X[np.argmin(y)][None], y.min())[0] <= 1e-9


def test_far_field_reverts_to_prior():
    sur = fit_surrogate([([0.0], 0.0), ([0.1], 1.0), ([0.2], 0.5)], noise_var=0.0)
    far = 0.2 + 10 * sur.length_scales[0] + 1.0
    mu, var = sur.predict([[far]], standardized=True)
    assert abs(mu[0]) <= 1e-6
    assert abs(var[0] - sur.signal_var) <= 1e-6


def test_two_point_toy_midpoint_inside():
    sur = fit_surrogate([([0.0], 0.0), ([1.0], 1.0)], noise_var=0.0)
    mu, _ = sur.predict([[0.5]])
    assert 0 < mu[0] < 1


def test_posterior_variance_non_negative():
    rng = np.random.default_rng(1)
    sur = fit_surrogate(list(zip(rng.random((10, 2)), rng.random(10))))
    _, var = sur.predict(rng.random((500, 2)))
    assert np.all(var >= 0)


def test_fit_errors():
    with pytest.raises(HyperoptError, match="all trials failed"):
        fit_surrogate([([0.0], math.nan), ([1.0], math.nan)])
    with pytest.raises(HyperoptError, match="identical"):
        fit_surrogate([([0.5], 1.0), ([0.5], 2.0)])
    with pytest.raises(HyperoptError):
        fit_surrogate([([0.5], 1.0)])


def test_failed_trials_imputed_at_worst():
    sur = fit_surrogate([([0.0], 1.0), ([0.5], 3.0), ([1.0], math.nan)], noise_var=0.0)
    mu, _ = sur.predict([[1.0]])
    assert abs(mu[0] - 3.0) <= 1e-6


def test_v_shape_proposal_is_interior():
    f = lambda x: abs(x - 0.4)
    sur = fit_surrogate([([0.0], f(0.0)), ([1.0], f(1.0))], noise_var=0.0)
    best = f(0.0)
    grid = np.linspace(0, 1, 10001)[:, None]
    ei = sur.expected_improvement(grid, best)
    assert 0 < grid[np.argmax(ei), 0] < 1
    x = propose(sur, LINE, np.random.default_rng(0), best=best, exclude=[[0.0], [1.0]])["x"]
    assert 0 < x < 1
    assert sur.expected_improvement([[x]], best)[0] >= ei.max() - 1e-6


def test_integer_dims_round():
    sp = HyperSpace((HyperDim("a", 1, 3, integer=True), HyperDim("b", 1, 3, integer=True)))
    trials = [Trial(i, {"a": a, "b": b}, float(a * b)) for i, (a, b) in enumerate([(1, 1), (3, 1), (2, 3)])]
    sur = fit_surrogate(trials, sp)
    for s in range(5):
        p = propose(sur, sp, np.random.default_rng(s), exclude=[sp.to_unit(t.params) for t in trials])
        assert p["a"] in (1, 2, 3) and p["b"] in (1, 2, 3)


def test_zero_ei_falls_back_to_random_in_bounds():
    sp = default_space()
    rng = np.random.default_rng(2)
    trials = [Trial(i, sp.from_unit(rng.random(7)), float(i)) for i in range(4)]
    sur = fit_surrogate(trials, sp)
    p = propose(sur, sp, rng, best=-1e12)
    for d in sp.dims:
        assert d.lower <= p[d.name] <= d.upper


def test_budget_three_is_warmup_only():
    seen = []

    def ev(p):
        seen.append(p["x"])
        return (p["x"] - 0.3) ** 2

    res = tune(LINE, 3, ev, seed=0)
    assert len(res.history) == 3 and len(seen) == 3
    assert res.best.objective == min(t.objective for t in res.history)


def test_budget_validation():
    with pytest.raises(ValueError):
        tune(LINE, 2, lambda p: 0.0)


def test_branin_single_seed():
    res = tune(BRANIN_SPACE, 40, branin_params, seed=0)
    assert res.best.objective - grid_minimum(branin, [(-5, 10), (0, 15)]) <= 0.5


def test_resume_reproduces_uninterrupted_run(tmp_path):
    f = lambda p: (p["x1"] - 2) ** 2 + abs(p["x2"] - 5)
    full = tune(BRANIN_SPACE, 9, f, seed=3, log_path=tmp_path / "full.csv")
    tune(BRANIN_SPACE, 5, f, seed=3, log_path=tmp_path / "part.csv")
    resumed = tune(BRANIN_SPACE, 9, f, seed=3, log_path=tmp_path / "part.csv")
    assert [t.params for t in resumed.history] == [t.params for t in full.history]
    assert [t.objective for t in resumed.history] == [t.objective for t in full.history]
    assert len(read_trials(tmp_path / "part.csv", BRANIN_SPACE)) == 9


def test_failures_recorded_and_bounds_respected():
    sp = default_space()
    calls = []

    def ev(p):
        calls.append(p)
        k = len(calls)
        if k == 2:
            raise NumericalError("loss became nan")
        if k == 4:
            raise TrialTimeout()
        if k == 5:
            raise KeyError("boom")
        return p["momentum"] + math.log(p["initial_learning_rate"])

    res = tune(sp, 8, ev, seed=1)
    status = [t.status for t in res.history]
    assert status[1] == DIVERGED and status[3] == TIMEOUT and status[4] == ERROR
    assert status.count(OK) == 5
    for t in res.history:
        assert math.isfinite(t.objective) == (t.status == OK)
        for d in sp.dims:
            v = t.params[d.name]
            assert d.lower <= v <= d.upper
            if d.integer:
                assert v == int(v)
    bsf = res.best_so_far
    assert all(b <= a for a, b in zip(bsf, bsf[1:]))


def test_single_ok_trial_uses_fallback():
    n = []

    def ev(p):
        n.append(1)
        if len(n) in (1, 2):
            raise RuntimeError("fails")
        return p["x"]

    res = tune(LINE, 5, ev, seed=0)
    assert len(res.history) == 5
    assert all(0 <= t.params["x"] <= 1 for t in res.history)


def test_every_trial_failing_is_error():
    def ev(p):
        raise RuntimeError("always")

    with pytest.raises(HyperoptError, match="every trial failed"):
        tune(LINE, 3, ev)


def test_trial_log_round_trip(tmp_path):
    sp = default_space()
    t = Trial(0, sp.from_unit(np.full(7, 0.25)), 12.5, OK, 1.25)
    append_trial(tmp_path / "log.csv", sp, t)
    append_trial(tmp_path / "log.csv", sp, Trial(1, t.params, math.nan, DIVERGED, 0.5))
    back = read_trials(tmp_path / "log.csv", sp)
    assert back[0].params == t.params and back[0].objective == 12.5 and back[0].ok
    assert back[1].status == DIVERGED and not back[1].ok
    with pytest.raises(HyperoptError, match="header"):
        read_trials(tmp_path / "log.csv", LINE)


def test_frozen_dims_held_fixed():
    sp = default_space().with_frozen(lr_drop_factor=0.5, lr_drop_period=10)
    res = tune(sp, 5, lambda p: p["momentum"], seed=0)
    assert all(t.params["lr_drop_factor"] == 0.5 and t.params["lr_drop_period"] == 10 for t in res.history)


def test_space_validation():
    with pytest.raises(ValueError):
        HyperDim("a", 1.0, 1.0)
    with pytest.raises(ValueError):
        HyperDim("a", 0.0, 1.0, scale="log")
    with pytest.raises(ValueError):
        default_space().with_frozen(nope=1)
