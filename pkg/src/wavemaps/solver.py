"""Time integration of the forced, damped wave maps equation on the circle.

The update is a velocity-Verlet scheme on (phi, phi_t).  The sphere constraint
enters through the multiplier term, which is handled by projecting the
discrete Laplacian onto the tangent plane, renormalizing positions after each
drift and re-projecting the velocity.  Every operation is built from
inner products and the periodic second difference, so the scheme commutes with
orthogonal maps of the target exactly up to rounding.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import BlowUp, CFLViolation, InvariantError
from .grid import (
    ControlRegion,
    EnergyTrace,
    FieldState,
    Grid,
    TWO_PI,
    _frozen,
    energy,
    write_state,
)

CFL_RATIO = 0.5


@dataclass(frozen=True, eq=False)
class DampingProfile:
    """Nonnegative damping coefficient a(x) supported in a control region."""

    grid: Grid
    a: np.ndarray
    region: ControlRegion

    def __post_init__(self):
        a = _frozen(self.a)
        if a.shape != (self.grid.n_points,):
            raise InvariantError(f"damping samples have shape {a.shape}")
        if not np.all(np.isfinite(a)) or np.any(a < 0):
            raise InvariantError("damping must be finite and nonnegative")
        if np.any(a[~self.region.contains(self.grid.x)] != 0.0):
            raise InvariantError("damping must vanish outside its region")
        if not np.any(a > 0):
            raise InvariantError("damping profile is identically zero")
        object.__setattr__(self, "a", a)

    @classmethod
    def smooth(cls, grid: Grid, region: ControlRegion, a_max: float = 1.0) -> "DampingProfile":
        """a = a_max * chi_omega."""
        if a_max <= 0:
            raise InvariantError("a_max must be positive")
        return cls(grid, a_max * region.cutoff(grid.x), region)


@dataclass(frozen=True, eq=False)
class ControlSignal:
    """Forcing samples f(t_i, x_j) on a uniform time grid.

    ``values`` has shape (n_times, n_points, c).  By default the values are
    multiplied by the region's smooth cutoff; pass ``smooth_cutoff=False`` for
    data that is already supported in the region (then support is checked).
    Between samples the signal is linear in time; outside the sampled window
    it is zero.
    """

    grid: Grid
    times: np.ndarray
    values: np.ndarray
    region: ControlRegion
    smooth_cutoff: bool = True

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.array(self.values, dtype=float)
        if values.ndim == 2:
            values = values[:, :, None]
        n = self.grid.n_points
        if times.ndim != 1 or len(times) < 2:
            raise InvariantError("control needs at least two sample times")
        if values.shape[:2] != (len(times), n):
            raise InvariantError(f"control values have shape {values.shape}, expected ({len(times)}, {n}, c)")
        steps = np.diff(times)
        if np.any(steps <= 0) or np.max(np.abs(steps - steps[0])) > 1e-9 * max(1.0, abs(steps[0])):
            raise InvariantError("control sample times must be uniform and increasing")
        if not np.all(np.isfinite(values)):
            raise InvariantError("control values must be finite")
        inside = self.region.contains(self.grid.x)
        if self.smooth_cutoff:
            values = values * self.region.cutoff(self.grid.x)[None, :, None]
        elif np.any(values[:, ~inside, :] != 0.0):
            raise InvariantError("control values must vanish outside the region")
        object.__setattr__(self, "times", _frozen(times))
        object.__setattr__(self, "values", _frozen(values))

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def components(self) -> int:
        return self.values.shape[2]

    def at(self, t: float) -> np.ndarray:
        t0, dtc = float(self.times[0]), self.dt
        u = (t - t0) / dtc
        last = len(self.times) - 1
        if u < -1e-9 or u > last + 1e-9:
            return np.zeros(self.values.shape[1:])
        i = min(max(int(math.floor(u + 1e-9)), 0), last)
        w = u - i
        if i == last or abs(w) <= 1e-9:
            return np.array(self.values[i])
        return (1.0 - w) * self.values[i] + w * self.values[i + 1]

    def rotated(self, A) -> "ControlSignal":
        A = np.asarray(A, dtype=float)
        return ControlSignal(self.grid, self.times, self.values @ A.T, self.region, smooth_cutoff=False)

    def scaled(self, c: float) -> "ControlSignal":
        return ControlSignal(self.grid, self.times, c * self.values, self.region, smooth_cutoff=False)

    def norm(self) -> float:
        """L^2 norm over space-time with trapezoid weights in time."""
        w = np.full(len(self.times), self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return float(math.sqrt(np.sum(w[:, None, None] * self.values**2) * self.grid.spacing))


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: tuple
    trace: EnergyTrace
    dt: float
    n_points: int
    damping: Optional[DampingProfile] = None
    forcing: Optional[ControlSignal] = None

    @property
    def final(self) -> FieldState:
        return self.states[-1]

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.states])


@dataclass(frozen=True)
class RadialSchedule:
    """Latitude schedule theta(t) on [0, T] with theta(0) = theta'(0) = theta'(T) = 0."""

    T: float
    theta: Callable[[np.ndarray], np.ndarray]
    theta_t: Callable[[np.ndarray], np.ndarray]
    theta_tt: Callable[[np.ndarray], np.ndarray]
    bc_tol: float = field(default=1e-12, repr=False)

    def __post_init__(self):
        if not self.T > 0:
            raise InvariantError("schedule time T must be positive")
        th0 = float(self.theta(0.0))
        thd0 = float(self.theta_t(0.0))
        thdT = float(self.theta_t(self.T))
        thT = float(self.theta(self.T))
        if abs(th0) > self.bc_tol or abs(thd0) > self.bc_tol or abs(thdT) > self.bc_tol:
            raise InvariantError(
                f"schedule violates boundary conditions: theta(0)={th0:.3g}, "
                f"theta'(0)={thd0:.3g}, theta'(T)={thdT:.3g}"
            )
        if not 0.0 <= thT < math.pi:
            raise InvariantError(f"theta(T)={thT:.3g} must lie in [0, pi)")

    @classmethod
    def smoothstep(cls, T: float, theta_f: float) -> "RadialSchedule":
        """theta = theta_f (3 s^2 - 2 s^3) with s = t/T."""
        T = float(T)

        def th(t):
            s = np.asarray(t, dtype=float) / T
            return theta_f * s * s * (3.0 - 2.0 * s)

        def th_t(t):
            s = np.asarray(t, dtype=float) / T
            return theta_f * 6.0 * s * (1.0 - s) / T

        def th_tt(t):
            s = np.asarray(t, dtype=float) / T
            return theta_f * (6.0 - 12.0 * s) / T**2

        return cls(T, th, th_t, th_tt)

    @property
    def theta_final(self) -> float:
        return float(self.theta(self.T))


# ---------------------------------------------------------------------------
# time stepping


def _as_field(f, phi):
    # a single-component forcing on a circle target acts along J phi = (-phi_1, phi_0)
    if f is not None and f.shape[1] == 1 and phi.shape[1] == 2:
        return f * np.column_stack([-phi[:, 1], phi[:, 0]])
    return f


def _tangent_laplacian(grid: Grid, phi, f):
    lap = grid.laplacian(phi)
    f = _as_field(f, phi)
    if f is not None:
        lap = lap - f
    return lap - np.sum(lap * phi, axis=1, keepdims=True) * phi


def _advance(grid, phi, v, dt, f0, f1, a):
    acc = _tangent_laplacian(grid, phi, f0) - np.sum(v * v, axis=1, keepdims=True) * phi
    if a is not None:
        acc -= a[:, None] * v
    vh = v + 0.5 * dt * acc
    phi1 = phi + dt * vh
    phi1 /= np.linalg.norm(phi1, axis=1, keepdims=True)
    v1 = vh + 0.5 * dt * _tangent_laplacian(grid, phi1, f1)
    if a is not None:
        v1 /= (1.0 + 0.5 * dt * a)[:, None]
    v1 -= np.sum(v1 * phi1, axis=1, keepdims=True) * phi1
    return phi1, v1


def _check_dt(grid: Grid, dt: float, cfl_ratio: float):
    if not dt > 0:
        raise InvariantError("dt must be positive")
    if dt > cfl_ratio * grid.spacing * (1.0 + 1e-12):
        raise CFLViolation(dt, grid.spacing, cfl_ratio)


def _forcing_pair(forcing, k):
    if forcing is None:
        return None, None
    if isinstance(forcing, tuple):
        f0, f1 = forcing
    else:
        f0 = f1 = forcing
    f0 = None if f0 is None else np.asarray(f0, dtype=float)
    f1 = None if f1 is None else np.asarray(f1, dtype=float)
    for f in (f0, f1):
        if f is not None and f.shape[1] != k + 1 and not (k == 1 and f.shape[1] == 1):
            raise InvariantError(f"forcing has {f.shape[1]} components, state has {k + 1}")
    return f0, f1


def step(
    state: FieldState,
    dt: float,
    forcing=None,
    damping: Optional[DampingProfile] = None,
    cfl_ratio: float = CFL_RATIO,
) -> FieldState:
    """Advance one time step.

    ``forcing`` is None, an (n_points, k+1) array used at both ends of the
    step, or a pair (f_now, f_next).
    """
    grid = state.grid
    _check_dt(grid, dt, cfl_ratio)
    f0, f1 = _forcing_pair(forcing, state.k)
    if damping is not None and damping.grid != grid:
        raise InvariantError("damping grid does not match state grid")
    for f in (f0, f1):
        if f is not None and f.shape[0] != grid.n_points:
            raise InvariantError("forcing grid does not match state grid")
    a = None if damping is None else damping.a
    phi, v = _advance(grid, state.phi, state.phi_t, dt, f0, f1, a)
    if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(v))):
        raise BlowUp(f"NaN detected at t={state.time + dt:.6g}")
    return FieldState(grid, phi, v, state.time + dt, state.tang_tol)


def evolve(
    initial: FieldState,
    T: float,
    forcing: Optional[ControlSignal] = None,
    damping: Optional[DampingProfile] = None,
    dt: Optional[float] = None,
    save_every: int = 1,
    until: Optional[Callable[[FieldState], bool]] = None,
    cfl_ratio: float = CFL_RATIO,
) -> Trajectory:
    """Integrate from ``initial.time`` for a duration ``T``.

    The trace records energy, cumulative dissipation 2 int int a|phi_t|^2 and
    cumulative forcing work 2 int int phi_t . f_perp at every step (trapezoid
    rule in time).  States are stored every ``save_every`` steps and at the
    end.  When ``until`` is given it is evaluated on each stored state and the
    run stops at the first state for which it returns True.
    """
    grid = initial.grid
    if not T > 0:
        raise InvariantError("evolve needs T > 0")
    if dt is None:
        dt = T / math.ceil(T / (cfl_ratio * grid.spacing) - 1e-9)
    _check_dt(grid, dt, cfl_ratio)
    if damping is not None and damping.grid != grid:
        raise InvariantError("damping grid does not match state grid")
    if forcing is not None:
        if forcing.grid != grid:
            raise InvariantError("forcing grid does not match state grid")
        if forcing.components != initial.k + 1 and not (initial.k == 1 and forcing.components == 1):
            raise InvariantError("forcing components do not match target dimension")
    a = None if damping is None else damping.a
    h = grid.spacing
    t0 = initial.time
    n_full = int(math.floor(T / dt + 1e-9))
    step_sizes = [dt] * n_full
    rest = T - n_full * dt
    if rest > 1e-9 * dt:
        step_sizes.append(rest)

    def force(t):
        return None if forcing is None else forcing.at(t - t0)

    def rates(phi, v, f):
        diss = 0.0 if a is None else 2.0 * float(np.sum(a[:, None] * v * v)) * h
        work = 0.0
        f = _as_field(f, phi)
        if f is not None:
            fp = f - np.sum(f * phi, axis=1, keepdims=True) * phi
            work = 2.0 * float(np.sum(v * fp)) * h
        return diss, work

    phi, v = initial.phi, initial.phi_t
    t = t0
    f_now = force(t)
    times = [t]
    energies = [energy(initial)]
    diss_rate, work_rate = rates(phi, v, f_now)
    dissipation = [0.0]
    work = [0.0]
    tang = [initial.tangency_error()]
    states = [initial]
    stopped = until is not None and until(initial)

    for i, dt_i in enumerate(step_sizes):
        if stopped:
            break
        f_next = force(t + dt_i)
        phi, v = _advance(grid, phi, v, dt_i, f_now, f_next, a)
        t = t0 + (i + 1) * dt if i < n_full else t0 + T
        e = float((np.sum(grid.dx(phi) ** 2) + np.sum(v * v)) * h)
        if not math.isfinite(e):
            raise BlowUp(f"NaN detected at t={t:.6g}")
        d_new, w_new = rates(phi, v, f_next)
        dissipation.append(dissipation[-1] + 0.5 * dt_i * (diss_rate + d_new))
        work.append(work[-1] + 0.5 * dt_i * (work_rate + w_new))
        diss_rate, work_rate = d_new, w_new
        times.append(t)
        energies.append(e)
        unit = np.max(np.abs(np.sum(phi * phi, axis=1) - 1.0))
        tang.append(float(max(unit, np.max(np.abs(np.sum(phi * v, axis=1))))))
        f_now = f_next
        last = i == len(step_sizes) - 1
        if (i + 1) % save_every == 0 or last:
            s = FieldState(grid, phi, v, t, initial.tang_tol)
            states.append(s)
            if until is not None and until(s):
                stopped = True
    if states[-1].time != times[-1]:
        states.append(FieldState(grid, phi, v, times[-1], initial.tang_tol))

    trace = EnergyTrace(
        np.array(times), np.array(energies), np.array(dissipation), np.array(work), np.array(tang)
    )
    return Trajectory(tuple(states), trace, dt, grid.n_points, damping, forcing)


# ---------------------------------------------------------------------------
# energy identities


def energy_balance_residual(traj: Trajectory, damping: DampingProfile) -> float:
    """max_t |E(t) - E(0) + 2 int_0^t int a |phi_t|^2|."""
    if not isinstance(damping, DampingProfile):
        raise InvariantError("energy_balance_residual needs a nonzero DampingProfile")
    if traj.damping is None or not np.array_equal(traj.damping.a, damping.a):
        raise InvariantError("trajectory was not produced with this damping profile")
    tr = traj.trace
    return float(np.max(np.abs(tr.energy - tr.energy[0] + tr.dissipation)))


def forced_energy_rate_residual(traj: Trajectory, forcing: Optional[ControlSignal]) -> float:
    """max_t |E(t) - E(0) + 2 int_0^t int phi_t . f_perp|."""
    if traj.damping is not None:
        raise InvariantError("forced_energy_rate_residual needs an undamped trajectory")
    if forcing is not traj.forcing and not (
        forcing is not None
        and traj.forcing is not None
        and np.array_equal(forcing.values, traj.forcing.values)
    ):
        raise InvariantError("trajectory was not produced with this forcing")
    tr = traj.trace
    return float(np.max(np.abs(tr.energy - tr.energy[0] + tr.forcing_work)))


# ---------------------------------------------------------------------------
# closed-form radial trajectory


def radial_state(grid: Grid, theta: float, theta_t: float, time: float = 0.0) -> FieldState:
    x = grid.x
    c, s = math.cos(theta), math.sin(theta)
    phi = np.column_stack([c * np.cos(x), c * np.sin(x), np.full_like(x, s)])
    phi_t = theta_t * np.column_stack([-s * np.cos(x), -s * np.sin(x), np.full_like(x, c)])
    return FieldState(grid, phi, phi_t, time)


def closed_form_radial(schedule: RadialSchedule, grid: Grid, dt: Optional[float] = None, save_every: int = 1):
    """Exact latitude trajectory and the full-circle control that drives it.

    Returns (Trajectory, ControlSignal).  The control is sampled on the same
    uniform time grid as the trajectory, so a simulation with this ``dt``
    sees the exact samples at step times.
    """
    T = schedule.T
    if dt is None:
        dt = T / math.ceil(T / (CFL_RATIO * grid.spacing) - 1e-9)
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-9 * T:
        raise InvariantError("dt must divide T for the sampled radial control")
    times = np.linspace(0.0, T, n_steps + 1)
    th = np.asarray(schedule.theta(times), dtype=float) * np.ones_like(times)
    th_t = np.asarray(schedule.theta_t(times), dtype=float) * np.ones_like(times)
    th_tt = np.asarray(schedule.theta_tt(times), dtype=float) * np.ones_like(times)
    w = -th_tt + np.sin(th) * np.cos(th)
    x = grid.x
    values = np.empty((len(times), grid.n_points, 3))
    values[:, :, 0] = -(w * np.sin(th))[:, None] * np.cos(x)[None, :]
    values[:, :, 1] = -(w * np.sin(th))[:, None] * np.sin(x)[None, :]
    values[:, :, 2] = (w * np.cos(th))[:, None]
    control = ControlSignal(grid, times, values, ControlRegion.full(), smooth_cutoff=False)
    states = []
    for i in range(0, len(times), save_every):
        states.append(radial_state(grid, th[i], th_t[i], times[i]))
    if states[-1].time != times[-1]:
        states.append(radial_state(grid, th[-1], th_t[-1], times[-1]))
    E = TWO_PI * (th_t**2 + np.cos(th) ** 2)
    work = np.concatenate([[0.0], np.cumsum(-np.diff(E))])
    trace = EnergyTrace(times, E, np.zeros_like(times), work, np.zeros_like(times))
    return Trajectory(tuple(states), trace, dt, grid.n_points, None, control), control


# ---------------------------------------------------------------------------
# text export


def write_trace(trace: EnergyTrace, path, header: str = "") -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(header)
        fh.write("time,energy,cumulative_dissipation,tangency_error\n")
        tang = trace.tangency_error if trace.tangency_error is not None else np.zeros(len(trace))
        for row in zip(trace.times, trace.energy, trace.dissipation, tang):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def export(traj: Trajectory, directory, prefix: str = "state", header: str = "") -> list:
    """Write one state file per saved state plus ``trace.csv``; returns the paths."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for i, s in enumerate(traj.states):
        p = os.path.join(directory, f"{prefix}_{i:05d}.txt")
        write_state(s, p, header_extra=header)
        paths.append(p)
    p = os.path.join(directory, "trace.csv")
    write_trace(traj.trace, p, header)
    paths.append(p)
    return paths


def write_control(control: ControlSignal, path, header: str = "") -> None:
    """``# wavemap-control`` header then rows ``t x f_0 .. f_c`` grouped by time."""
    r = control.region
    with open(path, "w", encoding="ascii") as fh:
        fh.write(header)
        fh.write(
            f"# wavemap-control n={control.grid.n_points} dt={control.dt!r} region={r.start!r},{r.end!r}\n"
        )
        x = control.grid.x
        for t, block in zip(control.times, control.values):
            for xj, row in zip(x, block):
                fh.write(f"{t:.17g} {xj:.17g} " + " ".join(f"{v:.17g}" for v in row) + "\n")


def read_control(path) -> ControlSignal:
    header = None
    rows = []
    with open(path, encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("# wavemap-control"):
                header = dict(tok.split("=", 1) for tok in line.split()[2:])
            elif line and not line.startswith("#"):
                rows.append([float(tok) for tok in line.split()])
    if header is None:
        raise InvariantError("missing '# wavemap-control' header")
    n = int(header["n"])
    start, end = (float(v) for v in header["region"].split(","))
    data = np.array(rows)
    n_t = data.shape[0] // n
    data = data.reshape(n_t, n, -1)
    return ControlSignal(Grid(n), data[:, 0, 0], data[:, :, 2:], ControlRegion(start, end), smooth_cutoff=False)


def sample_times(T: float, dt: float) -> np.ndarray:
    n = int(round(T / dt))
    return np.linspace(0.0, T, n + 1)


def uniform_dt(T: float, grid: Grid, cfl_ratio: float = CFL_RATIO) -> float:
    """Largest dt <= cfl_ratio * spacing that divides T into whole steps."""
    return T / math.ceil(T / (cfl_ratio * grid.spacing) - 1e-9)
