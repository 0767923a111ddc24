"""Exact control of wave maps into the circle through the angle variable.

Writing phi = (cos theta, sin theta), the controlled equation with forcing
f = h J phi (J the quarter turn) becomes the linear wave equation for theta
with source -h.  A winding number N is removed by working with
theta - N x.  The discrete wave maps scheme differs from the linear wave
equation at O(h^2), so the control is refined by re-solving on the defect of
the simulated nonlinear run.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from ..errors import DegreeMismatch, InvariantError, NotConverged
from ..grid import ControlRegion, FieldState, TWO_PI, h1l2_norm, winding_number
from ..solver import ControlSignal, Trajectory, evolve, uniform_dt
from .hum import CTRL_TOL, MAX_ITER, REG_EPS, GramianSolveReport, hum_solve


def sharp_time(region: ControlRegion) -> float:
    """max over x of the forward distance from x into the region.

    For a single open arc of length L the worst point sits just past the end
    of the arc and needs 2 pi - L; the full circle gives 0.
    """
    if region.is_full:
        return 0.0
    return TWO_PI - region.length


def lift_angle(phi, anchor: Optional[float] = None) -> np.ndarray:
    """Continuous angle along the grid from cumulative principal increments.

    The value at x_0 is the principal angle, or the branch nearest ``anchor``.
    """
    phi = np.asarray(phi, dtype=float)
    theta = np.arctan2(phi[:, 1], phi[:, 0])
    inc = np.diff(theta)
    inc = (inc + math.pi) % TWO_PI - math.pi
    lifted = theta[0] + np.concatenate([[0.0], np.cumsum(inc)])
    if anchor is not None:
        lifted += TWO_PI * round((anchor - lifted[0]) / TWO_PI)
    return lifted


def angle_rate(state: FieldState) -> np.ndarray:
    """theta_t = phi_t . J phi with J phi = (-phi_1, phi_0)."""
    return -state.phi_t[:, 0] * state.phi[:, 1] + state.phi_t[:, 1] * state.phi[:, 0]


def reduced_angle(state: FieldState, N: int, reference: Optional[np.ndarray] = None):
    """(theta - N x, theta_t); the 2 pi branch is chosen nearest to ``reference`` in mean."""
    th = lift_angle(state.phi) - N * state.grid.x
    if reference is not None:
        th += TWO_PI * round((np.mean(reference) - np.mean(th)) / TWO_PI)
    return th, angle_rate(state)


def s1_polar_control(
    initial: FieldState,
    final: FieldState,
    T: float,
    region: ControlRegion,
    dt: Optional[float] = None,
    ctrl_tol: float = CTRL_TOL,
    reg_eps: float = REG_EPS,
    max_iter: int = MAX_ITER,
    max_refine: int = 8,
):
    """Scalar control h in the region steering ``initial`` to ``final`` at time T.

    Returns (ControlSignal with one component, GramianSolveReport).  The
    report's residual is the H^1 x L^2 distance between the simulated final
    state and ``final``; its curvature estimates come from the first HUM
    solve.  Raises DegreeMismatch for states of different winding and
    NotConverged when the HUM solve or the refinement fails.
    """
    if initial.k != 1 or final.k != 1:
        raise InvariantError("s1_polar_control needs k = 1 states")
    if initial.grid != final.grid:
        raise InvariantError("initial and final states must share a grid")
    N0, N1 = winding_number(initial), winding_number(final)
    if N0 != N1:
        raise DegreeMismatch(f"degree mismatch: initial winding {N0}, final winding {N1}")
    if not T > 0:
        raise InvariantError("control time must be positive")
    grid = initial.grid
    if dt is None:
        dt = uniform_dt(T, grid)
    start = initial.with_time(0.0)
    th1, th1_t = reduced_angle(final, N0)
    n_t = int(round(T / dt)) + 1
    times = np.linspace(0.0, T, n_t)
    p = np.zeros((n_t, grid.n_points))
    first = None
    iterations = 0
    inner_tol = 0.25 * ctrl_tol

    def simulate(p):
        sig = ControlSignal(grid, times, p[:, :, None], region)
        return sig, evolve(start, T, forcing=sig, dt=dt, save_every=10**9)

    sig, traj = simulate(p)
    for _ in range(max_refine + 1):
        end = traj.final
        resid = h1l2_norm(grid, end.phi - final.phi, end.phi_t - final.phi_t)
        if resid <= ctrl_tol:
            break
        th, th_t = reduced_angle(end, N0, reference=th1)
        sol = hum_solve(grid, th1 - th, th1_t - th_t, region, T, 0.0, dt, inner_tol, reg_eps, max_iter)
        iterations += sol.report.iterations
        if first is None:
            first = sol.report
        if sol.report.residual > ctrl_tol:
            rep = GramianSolveReport(
                iterations, resid, sig.norm(), first.min_curvature_estimate, False, first.max_curvature_estimate
            )
            raise NotConverged(f"not converged: HUM defect {sol.report.residual:.3e} above tolerance", rep)
        p = p + sol.p
        sig, traj = simulate(p)
    else:
        end = traj.final
        resid = h1l2_norm(grid, end.phi - final.phi, end.phi_t - final.phi_t)
    lo = first.min_curvature_estimate if first is not None else float("nan")
    hi = first.max_curvature_estimate if first is not None else float("nan")
    rep = GramianSolveReport(iterations, resid, sig.norm(), lo, resid <= ctrl_tol, hi)
    if resid > ctrl_tol:
        raise NotConverged(f"not converged: steering residual {resid:.3e} > {ctrl_tol:g}", rep)
    return sig, rep


def simulate_s1(initial: FieldState, control: ControlSignal, save_every: int = 1) -> Trajectory:
    """Run the k = 1 wave maps equation under a scalar control from t = 0."""
    T = control.T
    return evolve(initial.with_time(0.0), T, forcing=control, dt=control.dt, save_every=save_every)
