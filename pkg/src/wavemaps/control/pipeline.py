"""Global steering: alternate damping with energy drops near harmonic maps.

Damping lowers the energy until the state is close to a harmonic map or the
energy is safely below 2 pi.  Near a geodesic of winding N >= 1 a drop
control pushes the energy below the level 2 pi N^2.  Once the energy is below
2 pi - margin, damping alone drives the state toward a constant; this final
phase replaces an exact steering step with approximate steering to
energy final_tol.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..errors import BudgetExceeded, DegenerateMode, DropIneffective, InvariantError, NotConverged
from ..grid import ControlRegion, EnergyTrace, FieldState, TWO_PI, energy
from ..harmonic import GeodesicMap, nearest_harmonic
from ..solver import CFL_RATIO, DampingProfile, Trajectory, evolve, uniform_dt
from .drop import DROP_TIME, energy_drop_control, rotation_align

NU1 = 0.05
MARGIN = 0.1
FINAL_TOL = 1e-2
DEFAULT_EPS_SCHEDULE = (0.1, 0.05, 0.025, 0.0125)


@dataclass(frozen=True, eq=False)
class PhaseRecord:
    kind: str
    t_start: float
    duration: float
    E_start: float
    E_end: float
    harmonic: Optional[GeodesicMap] = None
    rotation: Optional[np.ndarray] = None
    eps: Optional[float] = None
    distance: Optional[float] = None
    attempts: int = 1


@dataclass(frozen=True, eq=False)
class PipelineReport:
    phases: tuple
    success: bool

    def __post_init__(self):
        for a, b in zip(self.phases, self.phases[1:]):
            if a.E_end != b.E_start:
                raise InvariantError("phase energies must chain")
        if any(p.E_start < 0 or p.E_end < 0 for p in self.phases):
            raise InvariantError("phase energies must be nonnegative")

    @property
    def drop_count(self) -> int:
        return sum(1 for p in self.phases if p.kind == "drop")

    @property
    def final_energy(self) -> float:
        return self.phases[-1].E_end if self.phases else float("nan")

    def lines(self) -> list:
        out = [f"success={str(self.success).lower()}", f"phases={len(self.phases)}", f"drops={self.drop_count}"]
        for i, p in enumerate(self.phases):
            parts = [
                f"phase{i}.kind={p.kind}",
                f"phase{i}.t_start={p.t_start:.17g}",
                f"phase{i}.duration={p.duration:.17g}",
                f"phase{i}.E_start={p.E_start:.17g}",
                f"phase{i}.E_end={p.E_end:.17g}",
            ]
            if p.kind == "drop":
                parts += [
                    f"phase{i}.N={p.harmonic.N}",
                    f"phase{i}.mu={','.join(f'{v:.17g}' for v in p.harmonic.mu)}",
                    f"phase{i}.nu={','.join(f'{v:.17g}' for v in p.harmonic.nu)}",
                    f"phase{i}.rotation={','.join(f'{v:.17g}' for v in p.rotation.ravel())}",
                    f"phase{i}.eps={p.eps:.17g}",
                    f"phase{i}.distance={p.distance:.17g}",
                    f"phase{i}.attempts={p.attempts}",
                ]
            out += parts
        return out


def _detect(state: FieldState, nu1: float):
    try:
        g, d = nearest_harmonic(state)
    except DegenerateMode:
        return None, float("inf")
    return (g, d) if d <= nu1 else (None, d)


class _Recorder:
    """Concatenates phase trajectories into one global trajectory."""

    def __init__(self, initial: FieldState):
        self.states = [initial]
        self.times = [initial.time]
        self.energy = [energy(initial)]
        self.diss = [0.0]
        self.work = [0.0]
        self.tang = [initial.tangency_error()]

    def add(self, traj: Trajectory):
        tr = traj.trace
        d0, w0 = self.diss[-1], self.work[-1]
        self.times += list(tr.times[1:])
        self.energy += list(tr.energy[1:])
        self.diss += list(d0 + tr.dissipation[1:])
        self.work += list(w0 + tr.forcing_work[1:])
        self.tang += list(tr.tangency_error[1:])
        self.states += list(traj.states[1:])

    def trace(self) -> EnergyTrace:
        return EnergyTrace(
            np.array(self.times), np.array(self.energy), np.array(self.diss), np.array(self.work), np.array(self.tang)
        )


def global_pipeline(
    initial: FieldState,
    damping: DampingProfile,
    eps_schedule: Sequence[float] = DEFAULT_EPS_SCHEDULE,
    budget: float = 2000.0,
    control_region: Optional[ControlRegion] = None,
    nu1: float = NU1,
    margin: float = MARGIN,
    final_tol: float = FINAL_TOL,
    check_every: float = 1.0,
    max_energy: float = 2.0 * math.pi * 25,
    dt_ratio: float = CFL_RATIO,
):
    """Run damp / drop phases until E < 2 pi - margin, then damp to final_tol.

    Each drop phase tries the values of ``eps_schedule`` in order (the retry
    sequence) and keeps the first whose run lowers the energy.  Returns
    (Trajectory, PipelineReport).  ``budget`` bounds the total simulated time.
    """
    if initial.k < 2:
        raise InvariantError("global_pipeline needs k >= 2")
    if not eps_schedule or any(e <= 0 for e in eps_schedule):
        raise InvariantError("eps_schedule must be a nonempty list of positive values")
    E0 = energy(initial)
    if E0 > max_energy:
        raise InvariantError(f"initial energy {E0:.4g} exceeds the configured bound {max_energy:.4g}")
    grid = initial.grid
    region = control_region if control_region is not None else damping.region
    dt = uniform_dt(DROP_TIME, grid, dt_ratio)
    save_every = max(1, int(round(check_every / dt)))
    t0 = initial.time
    rec = _Recorder(initial)
    phases = []
    state = initial

    def remaining():
        return budget - (state.time - t0)

    def report(success):
        return PipelineReport(tuple(phases), success)

    def damp(kind, stop):
        nonlocal state
        if stop(state):
            return
        if remaining() <= 0:
            raise BudgetExceeded("budget exceeded", report(False))
        E_start = energy(state)
        traj = evolve(state, remaining(), damping=damping, dt=dt, save_every=save_every, until=stop)
        rec.add(traj)
        s_end = traj.final
        phases.append(PhaseRecord(kind, state.time, s_end.time - state.time, E_start, energy(s_end)))
        state = s_end
        if not stop(state):
            raise BudgetExceeded("budget exceeded", report(False))

    low = TWO_PI - margin
    while energy(state) >= low:
        damp("damp", lambda s: energy(s) < low or _detect(s, nu1)[0] is not None)
        if energy(state) < low:
            break
        g, dist = _detect(state, nu1)
        if g.N == 0:
            break
        if remaining() < DROP_TIME:
            raise BudgetExceeded("budget exceeded", report(False))
        E_start = energy(state)
        A = rotation_align(g)
        accepted = None
        for attempt, eps in enumerate(eps_schedule, start=1):
            try:
                f = energy_drop_control(g, eps, region, grid, DROP_TIME, dt, initial=state)
            except NotConverged:
                continue
            traj = evolve(state, DROP_TIME, forcing=f, dt=dt, save_every=save_every)
            if energy(traj.final) < E_start:
                accepted = (traj, eps, attempt)
                break
        if accepted is None:
            raise DropIneffective(
                f"drop ineffective near the level 2 pi {g.N}^2 after {len(eps_schedule)} attempts", report(False)
            )
        traj, eps, attempt = accepted
        rec.add(traj)
        phases.append(
            PhaseRecord("drop", state.time, DROP_TIME, E_start, energy(traj.final), g, A, eps, dist, attempt)
        )
        state = traj.final

    damp("final-damp", lambda s: energy(s) < final_tol)
    rep = report(True)
    traj = Trajectory(tuple(rec.states), rec.trace(), dt, grid.n_points, damping, None)
    return traj, rep
