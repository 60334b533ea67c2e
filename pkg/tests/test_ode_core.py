import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cosim.ode_core import (AB2History, IntegrationError, MicroTrajectory, StepControl,
                            StepSizeUnderflow, fixed_step_count, integrate, step_ab2, step_euler,
                            step_rk4, step_rk45)


def zero(t, x):
    return [0.0] * len(x)


def grow(t, x):
    return [x[0]]


def spring(t, x):
    return [x[1], -x[0]]


# --- single steps

def test_euler_zero_field():
    assert np.array_equal(step_euler(zero, 0.0, [1.0, 2.0], 0.5), [1.0, 2.0])


def test_euler_definition():
    assert step_euler(grow, 0.0, [1.0], 0.1)[0] == pytest.approx(1.1, abs=1e-15)


def test_euler_spring_mass_step():
    assert np.allclose(step_euler(spring, 0.0, [1.0, 0.0], 0.1), [1.0, -0.1], atol=1e-15)


def test_euler_counts_one_evaluation():
    calls = []

    def f(t, x):
        calls.append(t)
        return [1.0]

    step_euler(f, 0.0, [0.0], 0.1)
    assert len(calls) == 1


def test_euler_nonfinite_names_time():
    with pytest.raises(IntegrationError, match="t=0.3"):
        step_euler(lambda t, x: [math.inf], 0.3, [0.0], 0.1)


def test_rk4_trivial_cases():
    assert np.array_equal(step_rk4(zero, 0.0, [3.0], 0.2), [3.0])
    assert step_rk4(lambda t, x: [1.0], 0.0, [0.0], 0.2)[0] == pytest.approx(0.2, abs=1e-16)


def test_rk4_one_step_exp():
    # 1 + h + h^2/2 + h^3/6 + h^4/24 at h = 0.1
    x = step_rk4(grow, 0.0, [1.0], 0.1)[0]
    assert x == pytest.approx(1.1051708333333334, abs=1e-15)
    assert abs(x - math.exp(0.1)) < 1e-7


def test_rk4_counts_four_evaluations():
    calls = []

    def f(t, x):
        calls.append(t)
        return [x[0]]

    step_rk4(f, 0.0, [1.0], 0.1)
    assert len(calls) == 4


def test_rk45_zero_field_grows_step():
    ctrl = StepControl("rk45", h_max=1.0)
    x, h_used, h_next, err = step_rk45(zero, 0.0, [1.0], 0.1, ctrl)
    assert np.array_equal(x, [1.0]) and err == 0.0
    assert h_used == 0.1 and h_next == pytest.approx(0.5)
    ctrl = StepControl("rk45", h_max=0.3)
    assert step_rk45(zero, 0.0, [1.0], 0.1, ctrl)[2] == pytest.approx(0.3)


def test_rk45_accepts_only_small_error():
    ctrl = StepControl("rk45", rel_tol=1e-8, abs_tol=1e-8)
    x, h_used, h_next, err = step_rk45(grow, 0.0, [1.0], 1.0, ctrl)
    assert err <= 1.0 and h_used < 1.0
    assert abs(x[0] - math.exp(h_used)) < 1e-7


def test_rk45_underflow():
    ctrl = StepControl("rk45", rel_tol=1e-10, abs_tol=1e-10, h_min=1e-2)
    with pytest.raises(StepSizeUnderflow):
        step_rk45(lambda t, x: [-1e4 * x[0]], 0.0, [1.0], 0.5, ctrl)


def test_ab2_zero_field_and_constant():
    assert np.array_equal(step_ab2(zero, None, 0.0, [2.0], 0.1), [2.0])
    hist = AB2History(-0.1, (0.0,), (1.0,))
    assert step_ab2(lambda t, x: [1.0], hist, 0.0, [0.0], 0.1)[0] == pytest.approx(0.1, abs=1e-16)


def test_ab2_formula():
    hist = AB2History(-0.1, (0.9,), (0.9,))
    x = step_ab2(grow, hist, 0.0, [1.0], 0.1)[0]
    assert x == pytest.approx(1.0 + 0.1 * (1.5 * 1.0 - 0.5 * 0.9))


def test_ab2_startup_methods():
    assert np.allclose(step_ab2(grow, None, 0.0, [1.0], 0.1), step_euler(grow, 0.0, [1.0], 0.1))
    assert np.allclose(step_ab2(grow, None, 0.0, [1.0], 0.1, startup="rk4"),
                       step_rk4(grow, 0.0, [1.0], 0.1))


def test_ab2_spacing_mismatch():
    hist = AB2History(-0.05, (1.0,), (1.0,))
    with pytest.raises(IntegrationError, match="spacing"):
        step_ab2(grow, hist, 0.0, [1.0], 0.1)


# --- control validation

@pytest.mark.parametrize("kw", [
    dict(method="bogus"),
    dict(method="euler"),
    dict(method="rk45", rel_tol=0.0),
    dict(method="rk45", h_min=1.0, h_max=0.5),
    dict(method="ab2", h_fixed=0.1, startup="rk45"),
])
def test_step_control_rejects(kw):
    with pytest.raises(ValueError):
        StepControl(**kw)


# --- integrate

@pytest.mark.parametrize("method", ["euler", "rk4", "ab2"])
def test_integrate_zero_field(method):
    tr = integrate(zero, [1.0, -2.0], (0.0, 1.0), StepControl(method, h_fixed=0.25))
    assert np.all(tr.states == [1.0, -2.0])


def test_integrate_rk45_zero_field():
    tr = integrate(zero, [1.0], (0.0, 1.0), StepControl("rk45"))
    assert np.all(tr.states == 1.0)


def test_single_macro_step_has_two_nodes():
    tr = integrate(grow, [1.0], (0.0, 0.25), StepControl("euler", h_fixed=0.25))
    assert len(tr.times) == 2


def test_fixed_step_count_matches_ceil():
    tr = integrate(grow, [1.0], (0.0, 1.0), StepControl("rk4", h_fixed=0.3))
    assert len(tr.times) - 1 == math.ceil(1.0 / 0.3) == fixed_step_count(1.0, 0.3)
    assert fixed_step_count(1.0, 0.1) == 10


def test_rk4_integrate_exp():
    tr = integrate(grow, [1.0], (0.0, 1.0), StepControl("rk4", h_fixed=0.01))
    assert abs(tr.final_state[0] - math.e) <= 1e-8


def test_rk45_integrate_exp():
    tr = integrate(grow, [1.0], (0.0, 1.0), StepControl("rk45", rel_tol=1e-12, abs_tol=1e-12))
    assert abs(tr.final_state[0] - math.e) <= 1e-9


def test_rk45_spring_mass_period():
    ctrl = StepControl("rk45", rel_tol=1e-12, abs_tol=1e-12)
    tr = integrate(spring, [1.0, 0.0], (0.0, 2 * math.pi), ctrl)
    assert np.max(np.abs(tr.final_state - [1.0, 0.0])) <= 1e-8


def test_derivs_are_rhs_at_nodes():
    tr = integrate(spring, [1.0, 0.0], (0.0, 1.0), StepControl("rk45"))
    for x, d in zip(tr.states, tr.derivs):
        assert np.allclose(d, spring(0.0, x), atol=1e-15)


def test_error_carries_step_index():
    def bad(t, x):
        return [math.nan] if t > 0.35 else [1.0]

    with pytest.raises(IntegrationError) as info:
        integrate(bad, [0.0], (0.0, 1.0), StepControl("euler", h_fixed=0.1))
    assert info.value.step == 4


def test_empty_interval_rejected():
    with pytest.raises(ValueError):
        integrate(grow, [1.0], (1.0, 1.0), StepControl("euler", h_fixed=0.1))


def test_micro_trajectory_lengths_checked():
    with pytest.raises(ValueError):
        MicroTrajectory(np.array([0.0]), np.zeros((1, 1)), np.zeros((1, 1)))


def test_ab2_rejects_clipped_last_step():
    with pytest.raises(IntegrationError, match="uniform"):
        integrate(grow, [1.0], (0.0, 1.0), StepControl("ab2", h_fixed=0.3))


def test_ab2_history_carries_across_intervals():
    ctrl = StepControl("ab2", h_fixed=0.1)
    whole = integrate(grow, [1.0], (0.0, 1.0), ctrl)
    first = integrate(grow, [1.0], (0.0, 0.5), ctrl)
    second = integrate(grow, first.final_state, (0.5, 1.0), ctrl, history=first.ab2_history())
    assert abs(second.final_state[0] - whole.final_state[0]) < 1e-14


def _order(method, hs):
    errs = []
    for h in hs:
        tr = integrate(grow, [1.0], (0.0, 1.0), StepControl(method, h_fixed=h))
        errs.append(abs(tr.final_state[0] - math.e))
    return np.polyfit(np.log(hs), np.log(errs), 1)[0]


def test_observed_orders():
    hs = [0.1 * 2.0 ** -k for k in range(5)]
    assert _order("euler", hs) == pytest.approx(1.0, abs=0.1)
    assert _order("rk4", hs) == pytest.approx(4.0, abs=0.2)
    assert _order("ab2", hs) == pytest.approx(2.0, abs=0.2)


def test_rk45_tolerance_contract():
    prev = None
    for tol in [1e-4 * 2.0 ** -k for k in range(12)]:
        tr = integrate(grow, [1.0], (0.0, 1.0), StepControl("rk45", rel_tol=tol, abs_tol=tol))
        err = abs(tr.final_state[0] - math.e)
        if prev is not None:
            assert err <= 2 * prev + 1e-15
        prev = err


@settings(max_examples=60, deadline=None)
@given(st.floats(-5, 5), st.floats(0.01, 3.0), st.sampled_from(["euler", "rk4", "ab2", "rk45"]),
       st.floats(0.001, 0.7))
def test_time_tiling_exact(ta, span, method, h):
    tb = ta + span
    if method == "ab2":
        h = span / max(1, round(span / h))
    ctrl = StepControl(method, h_fixed=None if method == "rk45" else h, h_max=h if method == "rk45" else math.inf)
    tr = integrate(spring, [1.0, 0.5], (ta, tb), ctrl)
    assert tr.times[0] == ta and tr.times[-1] == tb
    assert np.all(np.diff(tr.times) > 0)


@settings(max_examples=25, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.sampled_from(["euler", "rk4", "ab2", "rk45"]))
def test_deterministic(s0, v0, method):
    ctrl = StepControl(method, h_fixed=None if method == "rk45" else 0.05)
    a = integrate(spring, [s0, v0], (0.0, 1.0), ctrl)
    b = integrate(spring, [s0, v0], (0.0, 1.0), ctrl)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.times, b.times)
