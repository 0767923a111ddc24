"""Energy-lowering controls near closed geodesics.

Near the N-fold equator u_N(x) = (cos Nx, sin Nx, 0, ...) the normal
component v along e_3 obeys v_tt = v_xx + N^2 v - g to first order when the
forcing is eps (0, 0, g).  Steering v from (0, 0) to (-1, 0) over [0, 2 pi]
changes the quadratic form int (v_x^2 + v_t^2 - N^2 v^2) by -2 pi N^2, and
the nonlinear energy by eps^2 times that amount up to O(eps^3).  General
geodesics are handled by rotating the target sphere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad

from ..errors import InvariantError
from ..grid import ControlRegion, FieldState, Grid, TWO_PI, _frozen
from ..harmonic import GeodesicMap
from ..solver import CFL_RATIO, ControlSignal, _check_dt, uniform_dt
from .hum import (
    CTRL_TOL,
    MAX_ITER,
    REG_EPS,
    GramianSolveReport,
    ScalarField,
    kg_exact_control,
    quadratic_form,
)

EPS_MAX = 0.5
DROP_TIME = TWO_PI


def unshifted_frame(g: GeodesicMap):
    """(mu', nu') with gamma(x) = mu' cos Nx - nu' sin Nx."""
    c, s = math.cos(g.N * g.shift), math.sin(g.N * g.shift)
    return g.mu * c + g.nu * s, g.nu * c - g.mu * s


def rotation_align(g: GeodesicMap, check_tol: float = 1e-10) -> np.ndarray:
    """Orthogonal A with A gamma(x) = (cos Nx, sin Nx, 0, ..., 0) for all x."""
    if g.N < 1:
        raise InvariantError("rotation_align needs a geodesic with N >= 1")
    mu, nu = unshifted_frame(g)
    if abs(np.linalg.norm(mu) - 1) > 1e-10 or abs(np.linalg.norm(nu) - 1) > 1e-10 or abs(mu @ nu) > 1e-10:
        raise InvariantError("degenerate (mu, nu) pair")
    rows = [mu, -nu]
    dim = len(mu)
    for e in np.eye(dim):
        if len(rows) == dim:
            break
        w = e - sum((e @ r) * r for r in rows)
        if np.linalg.norm(w) > 1e-6:
            rows.append(w / np.linalg.norm(w))
    A = np.array(rows)
    # one more pass of Gram-Schmidt keeps A orthogonal to rounding level
    q, r = np.linalg.qr(A.T)
    A = (q * np.sign(np.diag(r))).T
    x = np.linspace(0.0, TWO_PI, 64, endpoint=False)
    ref = np.zeros((len(x), dim))
    ref[:, 0] = np.cos(g.N * x)
    ref[:, 1] = np.sin(g.N * x)
    err = np.max(np.abs(g.samples(x) @ A.T - ref))
    if err > check_tol:
        raise InvariantError(f"rotation_align verification failed (error {err:.2e})")
    return A


def discrete_mass(grid: Grid, N: int) -> float:
    """|D u_N|^2 as seen by the three-point stencil, (2 - 2 cos(N h)) / h^2.

    Using this in place of N^2 makes the scalar model the exact linearization
    of the discrete wave maps scheme about the N-fold equator.
    """
    h = grid.spacing
    return (2.0 - 2.0 * math.cos(N * h)) / h**2


@lru_cache(maxsize=32)
def _drop_profile(n_points: int, N: int, start: float, end: float, T: float, dt: float, ctrl_tol: float):
    grid = Grid(n_points)
    region = ControlRegion(start, end)
    target = ScalarField.constant(grid, -1.0)
    return kg_exact_control(target, region, T, mass=discrete_mass(grid, N), dt=dt, ctrl_tol=ctrl_tol)


def drop_profile(grid: Grid, N: int, region: ControlRegion, T: float = DROP_TIME, dt=None, ctrl_tol=CTRL_TOL):
    """Scalar control steering v_tt = v_xx + N^2 v - g from (0,0) to (-1,0); cached."""
    if dt is None:
        dt = uniform_dt(T, grid)
    return _drop_profile(grid.n_points, int(N), float(region.start), float(region.end), float(T), float(dt), ctrl_tol)


def normal_deviation(state: FieldState, A: np.ndarray):
    """Component of the rotated state along e_3 and its rate."""
    return state.phi @ A[2], state.phi_t @ A[2]


def drop_target(grid: Grid, N: int, eps: float, v0, v0_t) -> float:
    """Constant level c for the normal component so that F drops by 2 pi N^2 eps^2.

    With F = int (v_x^2 + v_t^2 - N^2 v^2) and F(c) = -2 pi N^2 c^2, the level
    solves c^2 = eps^2 - F(v0)/(2 pi N^2), floored at eps^2.  The sign follows
    the mean of v0 so the control pushes further along the existing offset.
    """
    mass = discrete_mass(grid, N)
    F0 = quadratic_form(grid, v0, v0_t, mass)
    c = math.sqrt(eps * eps + max(-F0, 0.0) / (TWO_PI * mass))
    return c if float(np.mean(v0)) > 0 else -c


def energy_drop_control(
    harmonic: GeodesicMap,
    eps: float,
    region: ControlRegion,
    grid: Grid,
    T: float = DROP_TIME,
    dt: Optional[float] = None,
    eps_max: float = EPS_MAX,
    initial: Optional[FieldState] = None,
    ctrl_tol: float = CTRL_TOL,
):
    """f = eps A^T (0, 0, g, 0, ...) with A = rotation_align(harmonic).

    Starting from (gamma, 0) this lowers the energy by about 2 pi N^2 eps^2
    over [0, T]; g steers the linearized normal component from (0, 0) to
    (-1, 0) and comes from a cached HUM solve.  When ``initial`` is given,
    g instead steers the measured normal deviation of that state (in units
    of eps) to the level from :func:`drop_target`, which keeps the drop
    well defined when the start is not exactly harmonic.
    """
    if not 0.0 < eps <= eps_max:
        raise InvariantError(f"eps must lie in (0, {eps_max}]")
    if harmonic.k < 2:
        raise InvariantError("energy_drop_control needs a target sphere of dimension k >= 2")
    A = rotation_align(harmonic)
    if initial is None:
        sig, _ = drop_profile(grid, harmonic.N, region, T, dt, ctrl_tol)
    else:
        v0, v0_t = normal_deviation(initial, A)
        c = drop_target(grid, harmonic.N, eps, v0, v0_t)
        sig, _ = kg_exact_control(
            ScalarField.constant(grid, c / eps),
            region,
            T,
            initial=ScalarField(grid, v0 / eps, v0_t / eps),
            mass=discrete_mass(grid, harmonic.N),
            dt=dt,
            ctrl_tol=ctrl_tol,
        )
    vals = np.zeros(sig.values.shape[:2] + (harmonic.k + 1,))
    vals[:, :, 2] = eps * sig.values[:, :, 0]
    return ControlSignal(grid, sig.times, vals @ A, region, smooth_cutoff=False)


# ---------------------------------------------------------------------------
# linearization about the reference equator


@dataclass(frozen=True, eq=False)
class LinearizedRun:
    """Stored phi_1 samples and the quadratic form F on the step grid."""

    times: np.ndarray
    phi1: np.ndarray
    phi1_t: np.ndarray
    step_times: np.ndarray
    F: np.ndarray
    work: np.ndarray


def reference_equator(grid: Grid, k: int = 2, N: int = 1) -> np.ndarray:
    phi0 = np.zeros((grid.n_points, k + 1))
    phi0[:, 0] = np.cos(N * grid.x)
    phi0[:, 1] = np.sin(N * grid.x)
    return phi0


def linearized_solve(
    f1: ControlSignal, T: float, dt: Optional[float] = None, N: int = 1, save_every: int = 1
) -> LinearizedRun:
    """First-order perturbation phi_1 about u_N driven by f1, from zero data.

    Solves phi_1tt = L phi_1 + N^2 phi_1 + 2 (phi_0x . phi_1x) phi_0 - f1_perp
    with velocity Verlet and records F = int |phi_1t|^2 + |phi_1x|^2 - N^2 |phi_1|^2
    (central differences).  ``work`` is the cumulative 2 int int phi_1t . f1_perp.
    """
    grid = f1.grid
    if dt is None:
        dt = uniform_dt(T, grid)
    _check_dt(grid, dt, CFL_RATIO)
    k = f1.components - 1
    phi0 = reference_equator(grid, k, N)
    phi0x = grid.dx(phi0)
    h = grid.spacing
    n_steps = int(math.floor(T / dt + 1e-9))
    sizes = [dt] * n_steps
    if T - n_steps * dt > 1e-9 * dt:
        sizes.append(T - n_steps * dt)
    mass = float(N * N)

    def perp(f):
        return f - np.sum(f * phi0, axis=1, keepdims=True) * phi0

    def acc(u, f):
        out = grid.laplacian(u) + mass * u + 2.0 * np.sum(phi0x * grid.dx(u), axis=1, keepdims=True) * phi0
        return out - perp(f)

    def form(u, v):
        return float(np.sum(v * v + grid.dx(u) ** 2 - mass * u * u) * h)

    u = np.zeros((grid.n_points, k + 1))
    v = np.zeros_like(u)
    t = 0.0
    f_now = f1.at(0.0)
    times, us, vs = [0.0], [u.copy()], [v.copy()]
    step_times, F, work = [0.0], [0.0], [0.0]
    rate = 0.0
    for i, d in enumerate(sizes):
        f_next = f1.at(t + d)
        vh = v + 0.5 * d * acc(u, f_now)
        u = u + d * vh
        v = vh + 0.5 * d * acc(u, f_next)
        t = (i + 1) * dt if i < n_steps else T
        new_rate = 2.0 * float(np.sum(v * perp(f_next))) * h
        work.append(work[-1] + 0.5 * d * (rate + new_rate))
        rate = new_rate
        step_times.append(t)
        F.append(form(u, v))
        f_now = f_next
        if (i + 1) % save_every == 0 or i == len(sizes) - 1:
            times.append(t)
            us.append(u.copy())
            vs.append(v.copy())
    return LinearizedRun(
        np.array(times), np.array(us), np.array(vs), np.array(step_times), np.array(F), np.array(work)
    )


# ---------------------------------------------------------------------------
# small-time experiments on the symmetric arc (-a, a)


def symmetric_arc(a: float) -> ControlRegion:
    return ControlRegion((-a) % TWO_PI, (-a) % TWO_PI + 2.0 * a)


@dataclass(frozen=True)
class SmallTimeResult:
    min_F: float
    F_values: tuple
    cone_leak: float
    n_rejected: int
    cone_margin: float


def random_control(
    grid: Grid, region: ControlRegion, T: float, dt: float, rng: np.random.Generator, k: int = 2, modes: int = 8
) -> ControlSignal:
    """Truncated Fourier series in x with unit-normal coefficients, times sin^2(pi t / T).

    Each of the k+1 components gets its own coefficients; the region cutoff
    is applied by the ControlSignal constructor.
    """
    x = grid.x
    m = np.arange(modes + 1)
    cos_c = rng.standard_normal((k + 1, modes + 1))
    sin_c = rng.standard_normal((k + 1, modes + 1))
    prof = np.cos(np.outer(x, m)) @ cos_c.T + np.sin(np.outer(x, m)) @ sin_c.T
    times = np.linspace(0.0, T, int(round(T / dt)) + 1)
    env = np.sin(math.pi * times / T) ** 2
    return ControlSignal(grid, times, env[:, None, None] * prof[None, :, :], region)


def small_time_positive_check(
    a: float,
    T: float,
    n_samples: int = 100,
    seed: int = 0,
    n_points: int = 256,
    cone_margin: Optional[float] = None,
    nontrivial_floor: float = 1e-6,
) -> SmallTimeResult:
    """Minimum of F(T) over random controls supported in (-a, a).

    Also measures the largest |phi_1| found outside the light cone
    |x| > a + t + cone_margin at every step time.  The default margin of eight
    grid cells absorbs the discrete stencil's sub-cell spreading.
    """
    if not 0.0 < a < math.pi / 2:
        raise InvariantError("positive check needs 0 < a < pi/2")
    if not 0.0 < T < math.pi / 2 - a:
        raise InvariantError("positive check needs 0 < T < pi/2 - a")
    grid = Grid(n_points)
    if cone_margin is None:
        cone_margin = 8.0 * grid.spacing
    dt = uniform_dt(T, grid)
    region = symmetric_arc(a)
    rng = np.random.default_rng(seed)
    dist = np.minimum(grid.x, TWO_PI - grid.x)
    Fs, leak, rejected = [], 0.0, 0
    while len(Fs) < n_samples:
        f1 = random_control(grid, region, T, dt, rng)
        if f1.norm() < nontrivial_floor:
            rejected += 1
            continue
        run = linearized_solve(f1, T, dt)
        for t, u in zip(run.times, run.phi1):
            outside = dist > a + t + cone_margin
            if np.any(outside):
                leak = max(leak, float(np.max(np.abs(u[outside]))))
        if np.max(np.abs(run.phi1[-1])) + np.max(np.abs(run.phi1_t[-1])) < nontrivial_floor:
            rejected += 1
            continue
        Fs.append(float(run.F[-1]))
    return SmallTimeResult(min(Fs), tuple(Fs), leak, rejected, cone_margin)


def raw_profile_integral(a1: float) -> float:
    """int (phi0_x^2 - phi0^2) for phi0 = cos(pi x / a1) on (-a1/2, a1/2), by quadrature."""
    k = math.pi / a1
    val, _ = quad(lambda x: (k * math.sin(k * x)) ** 2 - math.cos(k * x) ** 2, -a1 / 2, a1 / 2, epsabs=1e-13, epsrel=1e-13)
    return val


def smoothstep_b(T: float):
    """b(t) = 3 (t/T)^2 - 2 (t/T)^3 with its first two derivatives."""

    def b(t):
        s = np.asarray(t, dtype=float) / T
        return s * s * (3.0 - 2.0 * s)

    def b_t(t):
        s = np.asarray(t, dtype=float) / T
        return 6.0 * s * (1.0 - s) / T

    def b_tt(t):
        s = np.asarray(t, dtype=float) / T
        return (6.0 - 12.0 * s) / T**2

    return b, b_t, b_tt


def mollified_profile(grid: Grid, a: float) -> np.ndarray:
    """cos(pi x / a1) on (-a1/2, a1/2), a1 = a + pi/2, smoothed by a C^2 bump.

    The bump radius (a - a1/2)/2 keeps the support inside (-a, a).
    """
    a1 = a + math.pi / 2
    r = 0.5 * (a - a1 / 2)
    x = grid.x
    xs = np.where(x > math.pi, x - TWO_PI, x)
    raw = np.where(np.abs(xs) < a1 / 2, np.cos(math.pi * xs / a1), 0.0)
    kern = np.where(np.abs(xs) < r, (1.0 - (xs / r) ** 2) ** 3, 0.0)
    if np.count_nonzero(kern) < 5:
        raise InvariantError("mollification failure: bump radius below grid resolution")
    kern /= np.sum(kern)
    prof = np.real(np.fft.ifft(np.fft.fft(raw) * np.fft.fft(kern)))
    prof[np.abs(prof) < 1e-15] = 0.0
    support = np.abs(xs[prof != 0.0])
    if len(support) and np.max(support) >= a:
        raise InvariantError("mollification failure: support would exceed (-a, a)")
    return prof


@dataclass(frozen=True, eq=False)
class NegativeConstruction:
    control: ControlSignal
    F_T: float
    profile: np.ndarray


def small_time_negative_construction(
    a: float, T: float, n_points: int = 256, b: Optional[tuple] = None
) -> NegativeConstruction:
    """Explicit trajectory phi_1 = b(t) p(x) e_3 and its control, with F(T) < 0."""
    if not math.pi / 2 < a < math.pi:
        raise InvariantError("negative construction needs pi/2 < a < pi")
    if not T > 0:
        raise InvariantError("T must be positive")
    grid = Grid(n_points)
    bf, b_t, b_tt = b if b is not None else smoothstep_b(T)
    if abs(float(bf(0.0))) > 1e-12 or abs(float(b_t(0.0))) > 1e-12 or abs(float(b_t(T))) > 1e-12:
        raise InvariantError("b must satisfy b(0) = b'(0) = b'(T) = 0")
    dt = uniform_dt(T, grid)
    times = np.linspace(0.0, T, int(round(T / dt)) + 1)
    if np.max(np.abs(bf(times))) == 0.0:
        raise InvariantError("trivial trajectory: b vanishes identically")
    prof = mollified_profile(grid, a)
    lap = grid.laplacian(prof)
    vals = np.zeros((len(times), n_points, 3))
    vals[:, :, 2] = -np.outer(b_tt(times), prof) + np.outer(bf(times), lap + prof)
    control = ControlSignal(grid, times, vals, symmetric_arc(a), smooth_cutoff=False)
    bT, btT = float(bf(T)), float(b_t(T))
    F_T = float(np.sum(btT**2 * prof**2 + bT**2 * (grid.dx(prof) ** 2 - prof**2)) * grid.spacing)
    return NegativeConstruction(control, F_T, _frozen(prof))
