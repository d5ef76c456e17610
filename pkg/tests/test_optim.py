import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synthgrad.errors import DimensionError, NumericError, ParameterError
from synthgrad.optim import (
    Adam,
    AdamState,
    AlternationPolicy,
    GradientMode,
    RestartSchedule,
    adam_apply,
    advance_epoch,
    clip_global_norm,
    lr_at,
)


def test_adam_zero_gradient_leaves_param():
    p = np.array([1.0, -2.0])
    s = AdamState.like(p)
    for _ in range(5):
        adam_apply(s, p, np.zeros(2), 0.1)
    np.testing.assert_array_equal(p, [1.0, -2.0])


def test_adam_first_step_hand_value():
    p = np.array([0.0])
    s = AdamState.like(p)
    adam_apply(s, p, np.array([1.0]), 0.1)
    assert abs(p[0] - (-0.1 / (1.0 + 1e-8))) <= 1e-15


def test_adam_second_step_hand_value():
    p = np.array([0.0])
    s = AdamState.like(p)
    adam_apply(s, p, np.array([1.0]), 0.1)
    adam_apply(s, p, np.array([-2.0]), 0.1)
    m = 0.9 * 0.1 + 0.1 * -2.0
    v = 0.999 * 0.001 + 0.001 * 4.0
    m_hat, v_hat = m / (1 - 0.81), v / (1 - 0.999 ** 2)
    want = -0.1 / (1.0 + 1e-8) - 0.1 * m_hat / (math.sqrt(v_hat) + 1e-8)
    assert p[0] == pytest.approx(want, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=6))
def test_adam_identical_params_stay_identical(grads):
    p = np.full((2, 1), 0.3)
    s = AdamState.like(p)
    for g in grads:
        adam_apply(s, p, np.array([[g], [g]]), 0.01)
    assert p[0, 0] == p[1, 0]


def test_adam_no_momentum_is_sign_descent():
    p = np.array([0.0, 0.0, 0.0])
    s = AdamState.like(p, beta1=0.0, beta2=0.0, eps=0.0)
    adam_apply(s, p, np.array([3.0, -0.5, 2.0]), 0.1)
    np.testing.assert_allclose(p, [-0.1, 0.1, -0.1], rtol=1e-15)


def test_adam_errors():
    p = np.zeros(2)
    s = AdamState.like(p)
    with pytest.raises(DimensionError):
        adam_apply(s, p, np.zeros(3), 0.1)
    with pytest.raises(ParameterError):
        adam_apply(s, p, np.zeros(2), 0.0)
    with pytest.raises(NumericError):
        adam_apply(s, p, np.array([np.nan, 0.0]), 0.1)


def test_adam_reset_and_state_roundtrip():
    params = {"w": np.zeros(3)}
    opt = Adam(params)
    opt.step(params, {"w": np.ones(3)}, 0.1)
    arrays = {k: v.copy() for k, v in opt.state_arrays("base").items()}
    steps = opt.steps()
    opt.reset()
    assert opt.steps() == {"w": 0} and not opt.states["w"].m.any()
    opt.load("base", arrays, steps)
    assert opt.steps() == {"w": 1}
    np.testing.assert_allclose(opt.states["w"].m, 0.1, rtol=1e-15)


def test_clip_global_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert clip_global_norm(g, 1.0) == 5.0
    assert math.isclose(math.hypot(g["a"][0], g["b"][0]), 1.0)
    g = {"a": np.array([0.3])}
    clip_global_norm(g, 1.0)
    assert g["a"][0] == 0.3


def test_lr_endpoints_and_midpoint():
    s = RestartSchedule(e_base=4, eta_max=1.0, eta_min=0.1)
    assert lr_at(s) == 1.0
    s.e_cur = 2
    assert lr_at(s) == pytest.approx(0.55, abs=1e-15)
    s.e_cur = 4
    assert lr_at(s) == pytest.approx(0.1, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.floats(1e-4, 1.0), st.floats(0.0, 1.0), st.integers(0, 100))
def test_lr_stays_within_bounds(e_base, eta_max, frac, epochs):
    s = RestartSchedule(e_base=e_base, eta_max=eta_max, eta_min=eta_max * frac)
    policy = AlternationPolicy.alternating()
    for _ in range(epochs):
        assert s.eta_min - 1e-15 <= lr_at(s) <= s.eta_max + 1e-15
        advance_epoch(s, policy)


def _simulate(e_base, budget, policy):
    s = RestartSchedule(e_base=e_base, eta_max=1.0)
    modes, restarts = [], []
    for epoch in range(1, budget + 1):
        modes.append(policy(s.run_index))
        if advance_epoch(s, policy) is not None:
            restarts.append(epoch)
    return modes, restarts, s


def test_run_lengths_and_restart_epochs():
    modes, restarts, _ = _simulate(2, 30, AlternationPolicy.alternating())
    assert restarts == [2, 6, 14, 30]
    R, S = GradientMode.REAL, GradientMode.SYNTHETIC
    assert modes == [R] * 2 + [S] * 4 + [R] * 8 + [S] * 16


def test_budget_truncates_last_run():
    _, restarts, s = _simulate(10, 320, AlternationPolicy.alternating())
    assert restarts == [10, 30, 70, 150, 310]
    assert s.run_index == 5 and s.e_cur == 10 and s.run_length == 320


def test_constant_policy():
    modes, restarts, _ = _simulate(2, 14, AlternationPolicy.constant(GradientMode.SYNTHETIC))
    assert set(modes) == {GradientMode.SYNTHETIC}
    assert restarts == [2, 6, 14]


def test_disabled_schedule_keeps_lr_and_never_restarts():
    s = RestartSchedule(e_base=2, eta_max=0.5, enabled=False)
    for _ in range(20):
        assert lr_at(s) == 0.5
        assert advance_epoch(s, AlternationPolicy.alternating()) is None
    assert s.run_index == 0


def test_schedule_validation():
    with pytest.raises(ParameterError):
        RestartSchedule(e_base=0, eta_max=1.0)
    with pytest.raises(ParameterError):
        RestartSchedule(e_base=1, eta_max=0.1, eta_min=0.2)
