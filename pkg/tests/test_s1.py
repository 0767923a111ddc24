import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wavemaps.errors import DegreeMismatch, InvariantError, NotConverged
from wavemaps.grid import TWO_PI, ControlRegion, FieldState, Grid, winding_number
from wavemaps.control.s1 import (
    angle_rate,
    lift_angle,
    reduced_angle,
    s1_polar_control,
    sharp_time,
    simulate_s1,
)


def angle_state(grid, theta, theta_t=None):
    phi = np.column_stack([np.cos(theta), np.sin(theta)])
    v = None if theta_t is None else np.asarray(theta_t)[:, None] * np.column_stack([-np.sin(theta), np.cos(theta)])
    return FieldState.from_samples(grid, phi, v)


def test_sharp_time_values():
    assert sharp_time(ControlRegion(0.0, math.pi)) == pytest.approx(math.pi)
    assert sharp_time(ControlRegion.full()) == 0.0
    assert sharp_time(ControlRegion(1.0, 1.0 + 1.5 * math.pi)) == pytest.approx(math.pi / 2)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, TWO_PI), st.floats(0.05, TWO_PI - 0.05))
def test_sharp_time_is_worst_forward_distance(start, length):
    # brute force: for each point the forward distance to the arc, maximized over a fine grid
    r = ControlRegion(start, start + length)
    x = np.linspace(0.0, TWO_PI, 20001, endpoint=False)
    u = r.local(x)
    forward = np.where(u < length, 0.0, TWO_PI - u)
    assert sharp_time(r) == pytest.approx(float(forward.max()), abs=1e-3)


@settings(max_examples=30, deadline=None)
@given(st.integers(-3, 3), st.floats(0.0, 1.2), st.floats(-10.0, 10.0))
def test_lift_angle_recovers_smooth_angle(N, amp, anchor):
    g = Grid(128)
    theta = N * g.x + amp * np.sin(2 * g.x) + 0.4
    lifted = lift_angle(np.column_stack([np.cos(theta), np.sin(theta)]), anchor=anchor)
    shift = lifted - theta
    assert np.ptp(shift) < 1e-12
    assert abs(shift[0] / TWO_PI - round(shift[0] / TWO_PI)) < 1e-12
    assert abs(lifted[0] - anchor) <= math.pi + 1e-9


def test_angle_rate_and_reduced_angle():
    g = Grid(64)
    theta = 2 * g.x + 0.3 * np.cos(g.x)
    s = angle_state(g, theta, 0.5 * np.sin(g.x))
    assert np.allclose(angle_rate(s), 0.5 * np.sin(g.x), atol=1e-12)
    th, _ = reduced_angle(s, 2, reference=0.3 * np.cos(g.x))
    assert np.max(np.abs(th - 0.3 * np.cos(g.x))) < 1e-12


def test_degree_mismatch():
    g = Grid(64)
    with pytest.raises(DegreeMismatch):
        s1_polar_control(angle_state(g, g.x), angle_state(g, 2 * g.x), 4.0, ControlRegion(0.0, math.pi))


def test_needs_circle_target():
    g = Grid(16)
    phi = np.tile([1.0, 0.0, 0.0], (16, 1))
    s3 = FieldState(g, phi, np.zeros_like(phi))
    with pytest.raises(InvariantError):
        s1_polar_control(s3, s3, 1.0, ControlRegion(0.0, math.pi))


def test_long_horizon_control_steers_and_keeps_winding():
    # well above the sharp time the discrete Gramian is comfortably conditioned
    g = Grid(64)
    region = ControlRegion(0.0, math.pi)
    start = angle_state(g, g.x)
    final = angle_state(g, g.x + 0.3 * np.sin(g.x))
    sig, rep = s1_polar_control(start, final, 2 * math.pi, region)
    assert rep.converged and rep.residual <= 1e-3
    assert np.all(sig.values[:, ~region.contains(g.x)] == 0.0)
    traj = simulate_s1(start, sig, save_every=16)
    assert all(winding_number(s) == 1 for s in traj.states)
    end = traj.final
    assert np.max(np.abs(end.phi - final.phi)) < 1e-3


def test_full_circle_control_at_short_time():
    g = Grid(64)
    start = angle_state(g, g.x)
    final = angle_state(g, g.x + 0.2 * np.cos(3 * g.x), 0.1 * np.sin(g.x))
    sig, rep = s1_polar_control(start, final, 1.0, ControlRegion.full())
    assert rep.residual <= 1e-3


def test_not_converged_reports():
    g = Grid(32)
    start = angle_state(g, g.x)
    final = angle_state(g, g.x + 0.3 * np.sin(g.x))
    with pytest.raises(NotConverged) as exc:
        s1_polar_control(start, final, 1.0, ControlRegion(0.0, 1.0), max_iter=2)
    assert not exc.value.report.converged
