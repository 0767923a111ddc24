"""Named experiments driven by an ExperimentConfig.

Each runner writes plain-text artifacts into ``cfg.output_dir`` (every file
starts with the config header) and returns an ExperimentResult whose summary
is also written to ``summary.txt``.  Library failures propagate as
WavemapsError after the partial report, if any, has been written.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Callable, Dict

import numpy as np

from .config import ExperimentConfig, validate
from .control.drop import (
    DROP_TIME,
    energy_drop_control,
    raw_profile_integral,
    small_time_negative_construction,
    small_time_positive_check,
)
from .control.hum import ScalarField, kg_exact_control, kg_solve
from .control.pipeline import global_pipeline
from .control.s1 import s1_polar_control, sharp_time
from .errors import NotConverged, WavemapsError
from .grid import TWO_PI, FieldState, Grid, energy, h1l2_norm
from .harmonic import GeodesicMap, energy_gap, is_approx_harmonic, nearest_harmonic, diagnostics, write_diagnostics
from .obstruction import (
    DECAY_HEADER,
    DEGREE_HEADER,
    HomotopyFamily,
    family_degree,
    family_energy_curve,
    nonuniform_decay_experiment,
)
from .solver import (
    DampingProfile,
    RadialSchedule,
    closed_form_radial,
    energy_balance_residual,
    evolve,
    uniform_dt,
    write_trace,
)


@dataclass
class ExperimentResult:
    summary: Dict[str, object] = field(default_factory=dict)
    files: list = field(default_factory=list)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return str(v)


class _Out:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.dir = cfg.output_dir
        os.makedirs(self.dir, exist_ok=True)
        self.result = ExperimentResult()

    def path(self, name: str) -> str:
        p = os.path.join(self.dir, name)
        self.result.files.append(p)
        return p

    def text(self, name: str, lines) -> None:
        with open(self.path(name), "w", encoding="ascii") as fh:
            fh.write(self.cfg.header())
            for line in lines:
                fh.write(line + "\n")

    def trace(self, name: str, trace) -> None:
        write_trace(trace, self.path(name), self.cfg.header())

    def summary(self, **kw) -> ExperimentResult:
        self.result.summary.update(kw)
        self.text("summary.txt", [f"{k}={_fmt(v)}" for k, v in self.result.summary.items()])
        return self.result


def _grid(cfg: ExperimentConfig) -> Grid:
    return Grid(cfg.n_points)


def _dt(cfg: ExperimentConfig, T: float, grid: Grid) -> float:
    return uniform_dt(T, grid, cfg.dt_ratio)


def _damping(cfg: ExperimentConfig, grid: Grid) -> DampingProfile:
    return DampingProfile.smooth(grid, cfg.damping_region, cfg.damping_amplitude)


def _pad(phi, k: int) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    if phi.shape[1] == k + 1:
        return phi
    out = np.zeros((phi.shape[0], k + 1))
    out[:, : phi.shape[1]] = phi
    return out


def equator_geodesic(k: int, N: int) -> GeodesicMap:
    """x -> (cos Nx, sin Nx, 0, ...)."""
    mu = np.zeros(k + 1)
    nu = np.zeros(k + 1)
    mu[0] = 1.0
    nu[1] = -1.0
    return GeodesicMap(mu, nu, N)


def latitude_state(grid: Grid, k: int, E0: float) -> FieldState:
    """Latitude circle (sin s cos x, sin s sin x, cos s) with 2 pi sin^2 s = E0."""
    s = math.asin(math.sqrt(min(max(E0 / TWO_PI, 0.0), 1.0)))
    fam = HomotopyFamily.standard(2)
    return FieldState.from_samples(grid, _pad(fam([s], grid.x), k))


def normal_kick(grid: Grid, g: GeodesicMap, E_target: float) -> FieldState:
    """(gamma, c e_k) with the constant normal velocity c fixed by the energy."""
    st = g.state(grid)
    extra = E_target - energy(st)
    if extra < 0:
        raise WavemapsError("target energy below the geodesic energy")
    v = np.zeros_like(st.phi)
    v[:, -1] = math.sqrt(extra / TWO_PI)
    return FieldState(grid, st.phi, v, 0.0)


def perturbed_state(grid: Grid, g: GeodesicMap, size: float, rng: np.random.Generator, modes: int = 4) -> FieldState:
    """Geodesic plus a random smooth normal perturbation of H^1 x L^2 size ``size``.

    The position and velocity parts are low Fourier modes along the last axis;
    after projection to the sphere the size is rescaled by bisection so the
    distance to (gamma, 0) equals ``size`` to 1e-12 relative accuracy.
    """
    base = g.samples(grid.x)
    x = grid.x
    m = np.arange(modes + 1)

    def series():
        c = rng.standard_normal((2, modes + 1))
        return np.cos(np.outer(x, m)) @ c[0] + np.sin(np.outer(x, m)) @ c[1]

    wu, wv = series(), series()

    def build(scale):
        phi = base.copy()
        phi[:, -1] += scale * wu
        phi /= np.linalg.norm(phi, axis=1, keepdims=True)
        v = np.zeros_like(phi)
        v[:, -1] = scale * wv
        v -= np.sum(v * phi, axis=1, keepdims=True) * phi
        return phi, v

    def dist(scale):
        phi, v = build(scale)
        return h1l2_norm(grid, phi - base, v)

    if size == 0.0:
        return FieldState(grid, base, np.zeros_like(base), 0.0)
    lo, hi = 0.0, 1.0
    while dist(hi) < size:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if dist(mid) < size:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * hi:
            break
    phi, v = build(hi)
    return FieldState(grid, phi, v, 0.0)


# ---------------------------------------------------------------------------
# runners


def run_damp_decay(cfg: ExperimentConfig) -> ExperimentResult:
    out = _Out(cfg)
    grid = _grid(cfg)
    T = cfg.T if cfg.T is not None else 20.0
    E0 = cfg.initial_energy if cfg.initial_energy is not None else math.pi
    damping = _damping(cfg, grid)
    start = latitude_state(grid, cfg.k, E0)
    traj = evolve(start, T, damping=damping, dt=_dt(cfg, T, grid), save_every=cfg.save_every)
    out.trace("trace.csv", traj.trace)
    tr = traj.trace
    E = tr.energy
    below = np.flatnonzero(E <= 0.01 * E[0])
    hit = float(tr.times[below[0]]) if len(below) else float("nan")
    end = below[0] if len(below) else len(E) - 1
    sel = slice(0, end + 1)
    rate, r2 = log_linear_fit(tr.times[sel], E[sel])
    return out.summary(
        E0=float(E[0]),
        E_final=float(E[-1]),
        T=T,
        energy_balance_residual=energy_balance_residual(traj, damping),
        hit_time_1pct=hit,
        decay_rate=rate,
        r_squared=r2,
    )


def log_linear_fit(t, E):
    """(rate, R^2) of a least-squares fit log E = c - rate t."""
    t = np.asarray(t, dtype=float)
    y = np.log(np.asarray(E, dtype=float))
    if len(t) < 3:
        return float("nan"), float("nan")
    c = np.polyfit(t, y, 1)
    pred = np.polyval(c, t)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum((y - pred) ** 2)) / ss if ss > 0 else float("nan")
    return float(-c[0]), r2


def run_harmonic_detect(cfg: ExperimentConfig) -> ExperimentResult:
    out = _Out(cfg)
    grid = _grid(cfg)
    T = cfg.T if cfg.T is not None else 300.0
    N = cfg.N
    E_target = cfg.initial_energy if cfg.initial_energy is not None else TWO_PI * N * N + 0.15
    low = TWO_PI - 0.1
    nu = 0.05
    damping = _damping(cfg, grid)
    start = normal_kick(grid, equator_geodesic(cfg.k, N), E_target)

    def trapped(s):
        if not is_approx_harmonic(s, nu):
            return False
        g, _ = nearest_harmonic(s)
        return g.N == N and energy_gap(energy(s))[0] <= nu

    traj = evolve(
        start,
        T,
        damping=damping,
        dt=_dt(cfg, T, grid),
        save_every=cfg.save_every,
        until=lambda s: energy(s) < low or trapped(s),
    )
    rows = diagnostics(traj)
    write_diagnostics(rows, out.path("diagnostics.csv"), cfg.header())
    end = traj.final
    E_end = energy(end)
    if E_end < low:
        outcome = "dropped"
    elif trapped(end):
        outcome = "trapped"
    else:
        outcome = "neither"
    last = rows[-1]
    return out.summary(
        E0=energy(start),
        outcome=outcome,
        t_stop=end.time,
        E_final=E_end,
        nearest_N=last.nearest_N,
        distance=last.distance,
        delta_star=last.delta_star,
    )


def run_energy_drop(cfg: ExperimentConfig) -> ExperimentResult:
    out = _Out(cfg)
    grid = _grid(cfg)
    T = cfg.T if cfg.T is not None else DROP_TIME
    g = equator_geodesic(cfg.k, cfg.N)
    rng = np.random.default_rng(cfg.seed)
    start = perturbed_state(grid, g, cfg.perturbation, rng)
    target = g if cfg.perturbation == 0.0 else nearest_harmonic(start)[0]
    dt = _dt(cfg, T, grid)
    f = energy_drop_control(
        target, cfg.eps, cfg.control_region, grid, T, dt, initial=start if cfg.deviation_aware else None
    )
    traj = evolve(start, T, forcing=f, dt=dt, save_every=cfg.save_every)
    out.trace("trace.csv", traj.trace)
    E0 = energy(start)
    E1 = energy(traj.final)
    dE = E1 - E0
    return out.summary(
        eps=cfg.eps,
        perturbation=h1l2_norm(grid, start.phi - g.samples(grid.x), start.phi_t),
        E0=E0,
        E_final=E1,
        delta_E=dE,
        delta_E_over_eps2=dE / cfg.eps**2,
        ratio_to_minus_2pi_N2=dE / (cfg.eps**2 * TWO_PI * cfg.N**2),
        below_level=bool(E1 < TWO_PI * cfg.N**2),
    )


def run_radial(cfg: ExperimentConfig) -> ExperimentResult:
    out = _Out(cfg)
    grid = _grid(cfg)
    T = cfg.T if cfg.T is not None else TWO_PI
    sched = RadialSchedule.smoothstep(T, cfg.theta_final)
    dt = _dt(cfg, T, grid)
    exact, control = closed_form_radial(sched, grid, dt)
    sim = evolve(exact.states[0], T, forcing=control, dt=dt, save_every=cfg.save_every)
    out.trace("trace.csv", sim.trace)
    err = float(np.max(np.abs(sim.final.phi - exact.final.phi)))
    scale = grid.spacing**2 + dt**2
    return out.summary(
        theta_final=cfg.theta_final,
        linf_error=err,
        error_over_h2_dt2=err / scale,
        E_final=energy(sim.final),
        E_closed_form=float(exact.trace.energy[-1]),
    )


def run_kg_control(cfg: ExperimentConfig) -> ExperimentResult:
    out = _Out(cfg)
    grid = _grid(cfg)
    T = cfg.T if cfg.T is not None else TWO_PI
    dt = _dt(cfg, T, grid)
    try:
        sig, rep = kg_exact_control(
            ScalarField.constant(grid, cfg.target), cfg.control_region, T, mass=cfg.mass, dt=dt
        )
    except NotConverged as exc:
        out.text("report.txt", exc.report.lines())
        out.summary(status="not-converged", **_report_dict(exc.report))
        raise
    run = kg_solve(ScalarField.zero(grid), sig, T, dt=dt, mass=cfg.mass, save_every=10**9)
    drop = float(run.F[-1] - run.F[0])
    out.text("report.txt", rep.lines())
    out.text("quadratic_form.csv", ["time,F"] + [f"{t:.17g},{F:.17g}" for t, F in zip(run.step_times, run.F)])
    return out.summary(status="converged", **_report_dict(rep), F_drop=drop, F_drop_over_2pi=drop / TWO_PI)


def _report_dict(rep) -> dict:
    return {k: v for k, v in (line.split("=", 1) for line in rep.lines())}


def run_pipeline(cfg: ExperimentConfig) -> ExperimentResult:
    out = _Out(cfg)
    grid = _grid(cfg)
    damping = _damping(cfg, grid)
    start = equator_geodesic(cfg.k, cfg.N).state(grid)
    try:
        traj, rep = global_pipeline(
            start,
            damping,
            eps_schedule=cfg.eps_schedule,
            budget=cfg.budget,
            control_region=cfg.control_region,
            dt_ratio=cfg.dt_ratio,
        )
    except WavemapsError as exc:
        report = getattr(exc, "report", None)
        if report is not None:
            out.text("report.txt", report.lines())
        raise
    out.text("report.txt", rep.lines())
    out.trace("trace.csv", traj.trace)
    ends = [p.E_end for p in rep.phases]
    monotone = all(b <= a for a, b in zip([rep.phases[0].E_start] + ends, ends))
    return out.summary(
        success=rep.success,
        E0=energy(start),
        E_final=rep.final_energy,
        drops=rep.drop_count,
        phases=len(rep.phases),
        t_final=traj.final.time,
        monotone=monotone,
    )


def run_s1_control(cfg: ExperimentConfig) -> ExperimentResult:
    out = _Out(cfg)
    grid = _grid(cfg)
    region = cfg.control_region
    T0 = sharp_time(region)
    T = cfg.T if cfg.T is not None else T0 + cfg.t_offset
    x = grid.x

    def state(theta):
        return FieldState.from_samples(grid, np.column_stack([np.cos(theta), np.sin(theta)]))

    start = state(cfg.N * x)
    final = state(cfg.N * x + cfg.amplitude * np.sin(x))
    try:
        _, rep = s1_polar_control(start, final, T, region, dt=_dt(cfg, T, grid))
    except NotConverged as exc:
        out.text("report.txt", exc.report.lines())
        out.summary(status="not-converged", T0=T0, T=T, **_report_dict(exc.report))
        raise
    out.text("report.txt", rep.lines())
    return out.summary(status="converged", T0=T0, T=T, **_report_dict(rep))


FAMILY_K = {"A": 2, "A2": 3, "A3": 4, "A4": 5}


def run_degree(cfg: ExperimentConfig) -> ExperimentResult:
    out = _Out(cfg)
    fam = HomotopyFamily.standard(FAMILY_K[cfg.family])
    deg = family_degree(fam, cfg.m)
    out.text("degree.csv", [DEGREE_HEADER, deg.row()])
    s = TWO_PI * np.arange(cfg.m) / cfg.m
    params = [[si] + [math.pi / 2] * (fam.dim - 1) for si in s]
    E = family_energy_curve(fam, params, cfg.n_points)
    ref = TWO_PI * np.sin(s) ** 2
    out.text("energy.csv", ["s,energy,reference"] + [f"{a:.17g},{b:.17g},{c:.17g}" for a, b, c in zip(s, E, ref)])
    r = deg.report
    return out.summary(
        family=cfg.family,
        m=cfg.m,
        raw_degree=r.raw,
        degree=r.degree,
        residual=r.residual,
        max_energy=float(np.max(E)),
        max_energy_error=float(np.max(np.abs(E - ref))),
    )


def run_nonuniform_decay(cfg: ExperimentConfig) -> ExperimentResult:
    out = _Out(cfg)
    grid = _grid(cfg)
    rows = nonuniform_decay_experiment(
        _damping(cfg, grid), cfg.s_values, cfg.energy_target, cfg.t_max, dt=_dt(cfg, 1.0, grid)
    )
    out.text("decay.csv", [DECAY_HEADER] + [r.row() for r in rows])
    hits = [r.hit_time for r in rows if not r.censored]
    mono = all(b >= a for a, b in zip(hits, hits[1:]))
    return out.summary(
        rows=len(rows),
        censored=sum(r.censored for r in rows),
        max_hit_time=max(hits) if hits else float("nan"),
        nondecreasing=mono,
    )


def run_small_time(cfg: ExperimentConfig) -> ExperimentResult:
    out = _Out(cfg)
    T = cfg.T if cfg.T is not None else math.pi / 8
    pos = small_time_positive_check(cfg.a, T, cfg.n_samples, cfg.seed, cfg.n_points)
    neg = small_time_negative_construction(cfg.a_negative, cfg.T_negative, cfg.n_points)
    a1 = cfg.a_negative + math.pi / 2
    out.text("positive.csv", ["sample,F_T"] + [f"{i},{F:.17g}" for i, F in enumerate(pos.F_values)])
    return out.summary(
        a=cfg.a,
        T=T,
        min_F=pos.min_F,
        cone_leak=pos.cone_leak,
        rejected=pos.n_rejected,
        a_negative=cfg.a_negative,
        T_negative=cfg.T_negative,
        F_negative=neg.F_T,
        a1=a1,
        raw_profile_integral=raw_profile_integral(a1),
        raw_profile_closed_form=0.5 * a1 * (math.pi**2 / a1**2 - 1.0),
    )


RUNNERS: Dict[str, Callable[[ExperimentConfig], ExperimentResult]] = {
    "damp-decay": run_damp_decay,
    "harmonic-detect": run_harmonic_detect,
    "energy-drop": run_energy_drop,
    "radial": run_radial,
    "kg-control": run_kg_control,
    "pipeline": run_pipeline,
    "s1-control": run_s1_control,
    "degree": run_degree,
    "nonuniform-decay": run_nonuniform_decay,
    "small-time": run_small_time,
}


def run(cfg: ExperimentConfig) -> ExperimentResult:
    """Validate and execute the configured experiment."""
    validate(cfg)
    return RUNNERS[cfg.experiment](cfg)
