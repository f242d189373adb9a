import pytest
from hypothesis import given, settings, strategies as st

from valverl.classic import (PidController, PidGains, PidState, TwoMoveController,
                             TwoMoveParams, pid_reset, pid_step, two_move_step)


def test_pid_equilibrium():
    s = PidState()
    assert all(pid_step(s, PidGains(), 0.0, 1.0) == 0.0 for _ in range(50))


def test_pid_integrator_closed_form():
    s, g = PidState(), PidGains(kp=1, ki=0.1, kd=0, n=0)
    for n in range(1, 21):
        assert pid_step(s, g, 1.0, 1.0) == pytest.approx(1 + 0.1 * n, abs=1e-12)


def test_pid_reset():
    s = PidState(3.0, -2.0)
    assert pid_reset(s) == PidState()
    assert pid_step(s, PidGains(), 0.0, 1.0) == 0.0


def test_pid_reset_matches_fresh_controller():
    errs = [5.0, 3.0, -1.0, 0.5, 2.0]
    used = PidController(ts=0.5)
    for e in (1.0, 7.0, -4.0):
        used(e, 0.0)
    used.reset()
    fresh = PidController(ts=0.5)
    assert [used(e, 0.0) for e in errs] == [fresh(e, 0.0) for e in errs]


@settings(max_examples=40)
@given(st.lists(st.tuples(st.floats(-100, 100), st.floats(-100, 100)), min_size=1, max_size=30))
def test_pid_superposition(pairs):
    g = PidGains()
    s1, s2, s12 = PidState(), PidState(), PidState()
    for e1, e2 in pairs:
        u1, u2 = pid_step(s1, g, e1, 0.1), pid_step(s2, g, e2, 0.1)
        assert pid_step(s12, g, e1 + e2, 0.1) == pytest.approx(u1 + u2, rel=1e-9, abs=1e-9)


def test_pid_derivative_vanishes_with_n():
    errs = [1.0, 4.0, -2.0, 3.0]
    base = PidGains(kp=0.5, ki=0.01, kd=0.0, n=0.0)

    def run(gains):
        s = PidState()
        return [pid_step(s, gains, e, 1.0) for e in errs]

    assert run(PidGains(0.5, 0.01, -1.72, 0.0)) == run(base)
    gaps = []
    for n in (1e-1, 1e-2, 1e-3, 1e-4):
        gaps.append(max(abs(a - b) for a, b in zip(run(PidGains(0.5, 0.01, -1.72, n)), run(base))))
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 1e-3


def test_pid_rejects_bad_inputs():
    with pytest.raises(ValueError):
        pid_step(PidState(), PidGains(), 1.0, 0.0)
    with pytest.raises(ValueError):
        pid_step(PidState(), PidGains(), float("inf"), 1.0)
    with pytest.raises(ValueError):
        PidGains(n=-1)


def test_two_move_examples():
    p = TwoMoveParams(fs_hat=8.4, fd_hat=3.524, a=1.0, x_ss_hat=26.2)
    assert two_move_step(p, 30, "first") == pytest.approx(38.4)
    assert two_move_step(p, 20, "second") == pytest.approx(29.724)
    assert two_move_step(p, 20, "first") == pytest.approx(11.6)
    assert two_move_step(p, 30, "second") == pytest.approx(22.676)


def test_two_move_hold_constant():
    p = TwoMoveParams(8.4, 3.524, 1.5, 26.2)
    held = two_move_step(p, 20, "second")
    assert {two_move_step(p, 20, "hold", held) for _ in range(10)} == {held}


def test_two_move_errors():
    p = TwoMoveParams(8.4, 3.524, 1.0, 26.2)
    with pytest.raises(ValueError):
        two_move_step(p, 0, "third")
    with pytest.raises(ValueError):
        two_move_step(p, 0, "hold")
    with pytest.raises(ValueError):
        TwoMoveParams(-1, 0, 1, 0)


def test_two_move_controller_sequence():
    c = TwoMoveController(fs_hat=8.4, fd_hat=3.524, a=1.0, k_hat=3.8163)
    x_ss = 100 / 3.8163
    us = [c(100.0, 0.0) for _ in range(5)]
    assert us[0] == pytest.approx(-8.4)  # start 0 is below target: lower branch
    assert us[1] == pytest.approx(x_ss + 3.524)
    assert us[2:] == [us[1]] * 3
    # a new reference retriggers from the last command
    u = c(50.0, 0.0)
    assert u == pytest.approx(us[1] + 8.4 if us[1] >= 50 / 3.8163 else us[1] - 8.4)
