"""Scalar linear wave equations u_tt = u_xx + c u - g and their exact controls.

c = 1 is the Klein-Gordon equation for the normal component about the
equator, c = N^2 the same about the N-fold equator, and c = 0 the free wave
equation for the angle of a circle-valued map.  Controls are synthesized by
the discrete Hilbert uniqueness method: conjugate gradients on the normal
equations of the exact discrete control-to-state map, whose adjoint is
written out step by step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import InvariantError, NotConverged
from ..grid import ControlRegion, Grid, _frozen
from ..solver import CFL_RATIO, ControlSignal, _check_dt, uniform_dt

CTRL_TOL = 1e-3
REG_EPS = 1e-10
MAX_ITER = 500


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    v: np.ndarray
    v_t: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        v = _frozen(self.v)
        v_t = _frozen(self.v_t)
        n = self.grid.n_points
        if v.shape != (n,) or v_t.shape != (n,):
            raise InvariantError(f"scalar field samples must have shape ({n},)")
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(v_t))):
            raise InvariantError("scalar field values must be finite")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "v_t", v_t)

    @classmethod
    def zero(cls, grid: Grid, time: float = 0.0) -> "ScalarField":
        return cls(grid, np.zeros(grid.n_points), np.zeros(grid.n_points), time)

    @classmethod
    def constant(cls, grid: Grid, value: float, rate: float = 0.0, time: float = 0.0) -> "ScalarField":
        return cls(grid, np.full(grid.n_points, float(value)), np.full(grid.n_points, float(rate)), time)


@dataclass(frozen=True, eq=False)
class ScalarTrajectory:
    """Stored samples of a scalar run plus the quadratic form at every step.

    ``F`` is int (v_x^2 + v_t^2 - c v^2) and ``work`` the cumulative
    2 int int v_t g, both on the step grid ``step_times``.
    """

    times: np.ndarray
    v: np.ndarray
    v_t: np.ndarray
    step_times: np.ndarray
    F: np.ndarray
    work: np.ndarray
    grid: Grid
    mass: float

    def state(self, i: int = -1) -> ScalarField:
        return ScalarField(self.grid, self.v[i], self.v_t[i], float(self.times[i]))

    @property
    def final(self) -> ScalarField:
        return self.state(-1)


@dataclass(frozen=True)
class GramianSolveReport:
    iterations: int
    residual: float
    control_norm: float
    min_curvature_estimate: float
    converged: bool = True
    max_curvature_estimate: float = float("nan")

    def lines(self) -> list:
        return [
            f"iterations={self.iterations}",
            f"residual={self.residual:.17g}",
            f"control_norm={self.control_norm:.17g}",
            f"min_curvature_estimate={self.min_curvature_estimate:.17g}",
            f"max_curvature_estimate={self.max_curvature_estimate:.17g}",
            f"converged={str(self.converged).lower()}",
        ]


def _lap(u, h2):
    out = np.empty_like(u)
    out[1:-1] = u[2:] - 2.0 * u[1:-1] + u[:-2]
    out[0] = u[1] - 2.0 * u[0] + u[-1]
    out[-1] = u[0] - 2.0 * u[-1] + u[-2]
    return out / h2


def quadratic_form(grid: Grid, v, v_t, mass: float = 1.0) -> float:
    """int (v_x^2 + v_t^2 - mass v^2) with central differences."""
    v = np.asarray(v, dtype=float)
    v_t = np.asarray(v_t, dtype=float)
    return float(np.sum(grid.dx(v) ** 2 + v_t**2 - mass * v**2) * grid.spacing)


class _LinearWave:
    """Velocity-Verlet map for u_tt = K u - s with K = L + c, and its adjoint."""

    def __init__(self, grid: Grid, mass: float, T: float, dt: float):
        self.grid = grid
        self.mass = float(mass)
        self.h2 = grid.spacing**2
        self.n_steps = int(round(T / dt))
        if abs(self.n_steps * dt - T) > 1e-9 * max(T, 1.0):
            raise InvariantError("dt must divide T")
        self.dt = dt
        self.T = T
        self.times = np.linspace(0.0, T, self.n_steps + 1)

    def K(self, u):
        return _lap(u, self.h2) + self.mass * u

    def forward(self, u, v, s):
        """Final (u, v) from (u, v) at t=0 under source samples s[n] (or None)."""
        dt, K = self.dt, self.K
        half = 0.5 * dt
        for n in range(self.n_steps):
            vh = v + half * K(u)
            if s is not None:
                vh -= half * s[n]
            u = u + dt * vh
            v = vh + half * K(u)
            if s is not None:
                v -= half * s[n + 1]
        return u, v

    def adjoint(self, U, V):
        """Gradient of <U, u_N> + <V, v_N> with respect to the sources s[n]."""
        dt, K = self.dt, self.K
        half = 0.5 * dt
        S = np.zeros((self.n_steps + 1, len(U)))
        for n in range(self.n_steps - 1, -1, -1):
            S[n + 1] -= half * V
            Ut = U + half * K(V)
            VH = V + dt * Ut
            S[n] -= half * VH
            U = Ut + half * K(VH)
            V = VH
        return S


def kg_solve(
    initial: ScalarField,
    g: Optional[ControlSignal],
    T: float,
    dt: Optional[float] = None,
    mass: float = 1.0,
    save_every: int = 1,
    cfl_ratio: float = CFL_RATIO,
) -> ScalarTrajectory:
    """Solve -v_tt + v_xx + mass v = g from ``initial`` over [t0, t0 + T].

    ``g`` is a one-component ControlSignal in local time (t = 0 at the start),
    linearly interpolated between its samples.
    """
    grid = initial.grid
    if dt is None:
        dt = uniform_dt(T, grid, cfl_ratio)
    _check_dt(grid, dt, cfl_ratio)
    if g is not None and (g.grid != grid or g.components != 1):
        raise InvariantError("kg_solve needs a one-component control on the same grid")
    n_steps = int(math.floor(T / dt + 1e-9))
    sizes = [dt] * n_steps
    if T - n_steps * dt > 1e-9 * dt:
        sizes.append(T - n_steps * dt)
    h2 = grid.spacing**2
    h = grid.spacing

    def src(t):
        return None if g is None else g.at(t)[:, 0]

    def K(u):
        return _lap(u, h2) + mass * u

    u, v = np.array(initial.v), np.array(initial.v_t)
    t = 0.0
    s0 = src(0.0)
    step_times = [initial.time]
    F = [quadratic_form(grid, u, v, mass)]
    work = [0.0]
    rate = 0.0 if s0 is None else 2.0 * float(np.sum(v * s0)) * h
    times, vs, vts = [initial.time], [u.copy()], [v.copy()]
    for i, d in enumerate(sizes):
        s1 = src(t + d)
        vh = v + 0.5 * d * K(u)
        if s0 is not None:
            vh -= 0.5 * d * s0
        u = u + d * vh
        v = vh + 0.5 * d * K(u)
        if s1 is not None:
            v -= 0.5 * d * s1
        t = (i + 1) * dt if i < n_steps else T
        new_rate = 0.0 if s1 is None else 2.0 * float(np.sum(v * s1)) * h
        work.append(work[-1] + 0.5 * d * (rate + new_rate))
        rate = new_rate
        F.append(quadratic_form(grid, u, v, mass))
        step_times.append(initial.time + t)
        s0 = s1
        if (i + 1) % save_every == 0 or i == len(sizes) - 1:
            times.append(initial.time + t)
            vs.append(u.copy())
            vts.append(v.copy())
    return ScalarTrajectory(
        np.array(times), np.array(vs), np.array(vts), np.array(step_times), np.array(F), np.array(work), grid, mass
    )


@dataclass(frozen=True, eq=False)
class HUMSolution:
    """Raw HUM output: source amplitude p with g = chi * p on the step grid."""

    p: np.ndarray
    chi: np.ndarray
    times: np.ndarray
    report: GramianSolveReport


def hum_solve(
    grid: Grid,
    defect_u,
    defect_v,
    region: ControlRegion,
    T: float,
    mass: float = 1.0,
    dt: Optional[float] = None,
    ctrl_tol: float = CTRL_TOL,
    reg_eps: float = REG_EPS,
    max_iter: int = MAX_ITER,
) -> HUMSolution:
    """Least-norm source steering (0, 0) to (defect_u, defect_v) at time T.

    CG runs on the operator S W^-1 S^T M in the M inner product, where
    M = diag(h (I - L), h I) turns the residual norm into the H^1 x L^2 norm
    of the steering defect and W holds the space-time quadrature weights.
    """
    if dt is None:
        dt = uniform_dt(T, grid)
    _check_dt(grid, dt, CFL_RATIO)
    wave = _LinearWave(grid, mass, T, dt)
    h = grid.spacing
    chi = region.cutoff(grid.x)
    wts = np.full(wave.n_steps + 1, dt)
    wts[0] = wts[-1] = 0.5 * dt
    Winv = 1.0 / (wts * h)

    def M(a, b):
        return h * (a - _lap(a, wave.h2)), h * b

    def inner(a, b, c, d):
        Mc, Md = M(c, d)
        return float(np.dot(a, Mc) + np.dot(b, Md))

    def source_of(mu_u, mu_v):
        zu, zv = M(mu_u, mu_v)
        return Winv[:, None] * (chi[None, :] * wave.adjoint(zu, zv))

    def apply(mu_u, mu_v):
        p = source_of(mu_u, mu_v)
        u, v = wave.forward(np.zeros(grid.n_points), np.zeros(grid.n_points), chi[None, :] * p)
        return u + reg_eps * mu_u, v + reg_eps * mu_v

    yu = np.asarray(defect_u, dtype=float)
    yv = np.asarray(defect_v, dtype=float)
    n = grid.n_points
    y = np.concatenate([yu, yv])
    mu = np.zeros(2 * n)

    def Mz(z):
        a, b = M(z[:n], z[n:])
        return np.concatenate([a, b])

    def Gz(z):
        a, b = apply(z[:n], z[n:])
        return np.concatenate([a, b])

    quotients = []
    it = 0
    # CG with full reorthogonalization of the residuals: without it the
    # recursion loses orthogonality on badly conditioned Gramians and stalls.
    # A restart recomputes the true residual if the recursive one drifted.
    for _restart in range(3):
        r = y - Gz(mu) if it else y.copy()
        Mr = Mz(r)
        rho = float(r @ Mr)
        basis, mbasis = [], []
        pdir = r.copy()
        while math.sqrt(max(rho, 0.0)) > ctrl_tol and it < max_iter:
            scale = 1.0 / math.sqrt(rho)
            basis.append(r * scale)
            mbasis.append(Mr * scale)
            q = Gz(pdir)
            pq = float(pdir @ Mz(q))
            quotients.append(pq / float(pdir @ Mz(pdir)))
            alpha = rho / pq
            mu += alpha * pdir
            r = r - alpha * q
            Q, MQ = np.array(basis), np.array(mbasis)
            for _ in range(2):
                r = r - Q.T @ (MQ @ r)
            Mr = Mz(r)
            rho_new = float(r @ Mr)
            pdir = r + (rho_new / rho) * pdir
            rho = rho_new
            it += 1
        if it >= max_iter:
            break
        d = y - Gz(mu)
        if math.sqrt(max(float(d @ Mz(d)), 0.0)) <= ctrl_tol:
            break
    mu_u, mu_v = mu[:n], mu[n:]
    p = source_of(mu_u, mu_v)
    u, v = wave.forward(np.zeros(grid.n_points), np.zeros(grid.n_points), chi[None, :] * p)
    du, dv = u - yu, v - yv
    resid = math.sqrt(max(inner(du, dv, du, dv), 0.0))
    g = chi[None, :] * p
    cnorm = math.sqrt(float(np.sum(wts[:, None] * g * g)) * h)
    lo = min(quotients) if quotients else float("nan")
    hi = max(quotients) if quotients else float("nan")
    report = GramianSolveReport(it, resid, cnorm, lo, resid <= ctrl_tol, hi)
    return HUMSolution(p, chi, wave.times, report)


def kg_exact_control(
    target: ScalarField,
    region: ControlRegion,
    T: float = 2.0 * math.pi,
    initial: Optional[ScalarField] = None,
    mass: float = 1.0,
    dt: Optional[float] = None,
    ctrl_tol: float = CTRL_TOL,
    reg_eps: float = REG_EPS,
    max_iter: int = MAX_ITER,
):
    """Least-norm control g supported in ``region`` steering to ``target`` at T.

    Returns (ControlSignal with one component, GramianSolveReport).  The
    signal is sampled at the step times of the uniform grid dt = T / n, so a
    solve with the same dt sees the samples exactly.  Raises NotConverged
    (with the report attached) when the steering defect stays above ctrl_tol.
    """
    grid = target.grid
    if not T > 0:
        raise InvariantError("control time must be positive")
    if dt is None:
        dt = uniform_dt(T, grid)
    yu, yv = np.array(target.v), np.array(target.v_t)
    if initial is not None:
        wave = _LinearWave(grid, mass, T, dt)
        fu, fv = wave.forward(np.array(initial.v), np.array(initial.v_t), None)
        yu, yv = yu - fu, yv - fv
    sol = hum_solve(grid, yu, yv, region, T, mass, dt, ctrl_tol, reg_eps, max_iter)
    # the constructor applies chi, reproducing g = chi * p
    signal = ControlSignal(grid, sol.times, sol.p[:, :, None], region)
    if not sol.report.converged:
        raise NotConverged(
            f"not converged: steering residual {sol.report.residual:.3e} > {ctrl_tol:g} "
            f"after {sol.report.iterations} iterations",
            sol.report,
        )
    return signal, sol.report

