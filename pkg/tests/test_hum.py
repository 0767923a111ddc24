import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad_vec
from scipy.linalg import expm

from wavemaps.errors import InvariantError, NotConverged
from wavemaps.grid import TWO_PI, ControlRegion, Grid
from wavemaps.control.hum import (
    GramianSolveReport,
    ScalarField,
    _LinearWave,
    hum_solve,
    kg_exact_control,
    kg_solve,
    quadratic_form,
)
from wavemaps.solver import ControlSignal, sample_times, uniform_dt


def ode_control_oracle(mass, T, target):
    """Least-L^2 control of v'' = mass v - g from rest to ``target`` (continuous time).

    For spatially constant targets and a full-circle region the minimum-norm
    control is spatially constant, so this two-point ODE problem is the exact
    continuum answer.
    """
    A = np.array([[0.0, 1.0], [mass, 0.0]])
    B = np.array([0.0, -1.0])
    W, _ = quad_vec(lambda s: np.outer(expm(A * s) @ B, expm(A * s) @ B), 0.0, T, epsabs=1e-13)
    lam = np.linalg.solve(W, np.asarray(target, dtype=float))
    return lambda t: float(B @ expm(A.T * (T - t)) @ lam)


@pytest.mark.parametrize("mass", [0.0, 1.0, 4.0])
def test_full_circle_control_matches_ode_oracle(mass):
    errs = []
    for n in (64, 128):
        g = Grid(n)
        sig, rep = kg_exact_control(ScalarField.constant(g, -1.0), ControlRegion.full(), TWO_PI, mass=mass)
        oracle = ode_control_oracle(mass, TWO_PI, [-1.0, 0.0])
        og = np.array([oracle(t) for t in sig.times])
        errs.append(float(np.max(np.abs(sig.values[:, :, 0] - og[:, None]))) / float(np.max(np.abs(og))))
        assert rep.converged and rep.residual <= 1e-3
        norm = math.sqrt(TWO_PI * np.trapezoid(og**2, sig.times))
        assert rep.control_norm == pytest.approx(norm, rel=5e-3)
    assert errs[0] < 5e-3
    assert 3.0 <= errs[0] / errs[1] <= 5.0


def test_adjoint_is_transpose_of_forward():
    g = Grid(16)
    rng = np.random.default_rng(0)
    wave = _LinearWave(g, 1.0, 1.0, uniform_dt(1.0, g))
    s = rng.standard_normal((wave.n_steps + 1, 16))
    U, V = rng.standard_normal(16), rng.standard_normal(16)
    u, v = wave.forward(np.zeros(16), np.zeros(16), s)
    lhs = float(U @ u + V @ v)
    rhs = float(np.sum(wave.adjoint(U, V) * s))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_linear_wave_requires_dividing_dt():
    with pytest.raises(InvariantError):
        _LinearWave(Grid(16), 1.0, 1.0, 0.3)


def _manufactured_error(n, mass=1.0, T=2.0):
    # v = sin(t) cos(2x) with g = -v_tt + v_xx + mass v
    g = Grid(n)
    x = g.x
    dt = uniform_dt(T, g)
    times = sample_times(T, dt)
    src = np.outer(np.sin(times), np.cos(2 * x)) * (1.0 - 4.0 + mass)
    sig = ControlSignal(g, times, src[:, :, None], ControlRegion.full())
    run = kg_solve(ScalarField(g, np.zeros(n), np.cos(2 * x)), sig, T, dt=dt, mass=mass)
    return float(np.max(np.abs(run.final.v - math.sin(T) * np.cos(2 * x))))


def test_kg_solve_manufactured_solution_second_order():
    e1, e2 = _manufactured_error(64), _manufactured_error(128)
    assert e1 < 1e-2
    assert 3.5 <= e1 / e2 <= 4.5


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 4.0))
def test_quadratic_form_changes_by_minus_work(seed, mass):
    rng = np.random.default_rng(seed)
    g = Grid(64)
    T = 2.0
    dt = uniform_dt(T, g)
    times = sample_times(T, dt)
    env = np.sin(math.pi * times / T) ** 2
    prof = rng.standard_normal() * np.cos(g.x) + rng.standard_normal() * np.sin(2 * g.x) + rng.standard_normal()
    sig = ControlSignal(g, times, (env[:, None] * prof[None, :])[:, :, None], ControlRegion(0.0, 4.0))
    run = kg_solve(ScalarField.zero(g), sig, T, dt=dt, mass=mass)
    scale = max(1.0, float(np.max(np.abs(run.F))))
    assert abs(run.F[-1] - run.F[0] + run.work[-1]) < 2e-2 * scale


def test_quadratic_form_of_constant():
    g = Grid(32)
    assert quadratic_form(g, -np.ones(32), np.zeros(32), 1.0) == pytest.approx(-TWO_PI)
    assert quadratic_form(g, np.zeros(32), np.ones(32), 1.0) == pytest.approx(TWO_PI)


def test_zero_target_gives_zero_control():
    g = Grid(32)
    sig, rep = kg_exact_control(ScalarField.zero(g), ControlRegion(0.0, math.pi), TWO_PI)
    assert rep.iterations == 0 and rep.control_norm == 0.0
    assert np.all(sig.values == 0.0)


def test_localized_control_steers_and_lowers_F():
    g = Grid(64)
    region = ControlRegion(0.0, 1.5 * math.pi)
    sig, rep = kg_exact_control(ScalarField.constant(g, -1.0), region, TWO_PI)
    assert rep.converged and rep.residual <= 1e-3
    assert np.all(sig.values[:, ~region.contains(g.x)] == 0.0)
    run = kg_solve(ScalarField.zero(g), sig, TWO_PI, dt=sig.dt, save_every=10**9)
    assert np.max(np.abs(run.final.v + 1.0)) < 1e-2
    drop = run.F[-1] - run.F[0]
    assert drop / TWO_PI == pytest.approx(-1.0, abs=0.02)
    assert 0 < rep.min_curvature_estimate <= rep.max_curvature_estimate


def test_initial_state_is_accounted_for():
    # steering from (-1, 0) to (-1, 0) for the massless equation needs no control
    g = Grid(32)
    start = ScalarField.constant(g, -1.0)
    sig, rep = kg_exact_control(start, ControlRegion(0.0, math.pi), TWO_PI, initial=start, mass=0.0)
    assert rep.iterations == 0 and np.all(sig.values == 0.0)


def test_not_converged_carries_report():
    g = Grid(32)
    with pytest.raises(NotConverged) as exc:
        kg_exact_control(ScalarField.constant(g, -1.0), ControlRegion(0.0, 0.5), 1.0, max_iter=3)
    rep = exc.value.report
    assert isinstance(rep, GramianSolveReport)
    assert not rep.converged and rep.iterations == 3 and rep.residual > 1e-3


def test_hum_report_lines():
    rep = GramianSolveReport(3, 1e-4, 2.0, 0.5, True, 4.0)
    lines = rep.lines()
    assert lines[0] == "iterations=3" and lines[-1] == "converged=true"
    assert any(l.startswith("min_curvature_estimate=") for l in lines)


def test_hum_solve_raw_output_shapes():
    g = Grid(16)
    sol = hum_solve(g, -np.ones(16), np.zeros(16), ControlRegion.full(), 1.0)
    assert sol.p.shape == (len(sol.times), 16)
    assert sol.times[-1] == pytest.approx(1.0)


def test_scalar_field_validation():
    g = Grid(8)
    with pytest.raises(InvariantError):
        ScalarField(g, np.zeros(4), np.zeros(4))
    with pytest.raises(InvariantError):
        ScalarField(g, np.full(8, np.nan), np.zeros(8))
