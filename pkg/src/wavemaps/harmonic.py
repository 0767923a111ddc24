"""Detection and reconstruction of (approximate) harmonic maps.

Harmonic maps from the circle are the closed geodesics
gamma(x) = mu cos(N x) - nu sin(N x) (energy 2 pi N^2) together with the
constant maps (N = 0).  The functions here time-average a trajectory against a
bump, measure the gap of the energy to the discrete levels 2 pi N^2, and
rebuild the nearest geodesic from the dominant Fourier mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateMode, InvariantError
from .grid import FieldState, Grid, TWO_PI, energy, fourier_coefficients, h1l2_norm

HARMONIC_FLOOR = 0.1
MODE_FLOOR = 0.05
MIN_WINDOW_SAMPLES = 32


@dataclass(frozen=True, eq=False)
class GeodesicMap:
    """gamma(x) = mu cos(N (x - shift)) - nu sin(N (x - shift)).

    ``shift`` is zero for maps built from Fourier data; it only appears when
    the sign convention flips (mu, nu), which leaves the sampled map unchanged.
    """

    mu: np.ndarray
    nu: np.ndarray
    N: int
    shift: float = 0.0

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float)
        nu = np.array(self.nu, dtype=float)
        mu.flags.writeable = False
        nu.flags.writeable = False
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "nu", nu)
        if int(self.N) != self.N or self.N < 0:
            raise InvariantError("N must be a nonnegative integer")
        object.__setattr__(self, "N", int(self.N))
        if abs(np.linalg.norm(mu) - 1.0) > 1e-12:
            raise InvariantError("mu must be a unit vector")
        if self.N >= 1:
            if nu.shape != mu.shape or abs(np.linalg.norm(nu) - 1.0) > 1e-12:
                raise InvariantError("nu must be a unit vector of the same size as mu")
            if abs(float(mu @ nu)) > 1e-12:
                raise InvariantError("mu and nu must be orthogonal")

    @property
    def k(self) -> int:
        return len(self.mu) - 1

    def samples(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.N == 0:
            return np.tile(self.mu, (len(x), 1))
        arg = self.N * (x - self.shift)
        return np.cos(arg)[:, None] * self.mu[None, :] - np.sin(arg)[:, None] * self.nu[None, :]

    def state(self, grid: Grid, time: float = 0.0) -> FieldState:
        """The static state (gamma, 0) on ``grid``, renormalized node-wise."""
        return FieldState.from_samples(grid, self.samples(grid.x), None, time)

    def canonical(self) -> "GeodesicMap":
        """Representative whose first nonzero component of mu is positive."""
        nz = np.flatnonzero(np.abs(self.mu) > 1e-12)
        if self.N == 0 or len(nz) == 0 or self.mu[nz[0]] > 0:
            return self
        return GeodesicMap(-self.mu, -self.nu, self.N, self.shift + math.pi / self.N)

    def transform(self, A) -> "GeodesicMap":
        A = np.asarray(A, dtype=float)
        nu = A @ self.nu if self.N >= 1 else self.nu
        return GeodesicMap(A @ self.mu, nu, self.N, self.shift)


@dataclass(frozen=True)
class BumpWindow:
    """psi(t) = c (1 - u^2)^3 with u = (2t - ta - tb)/(tb - ta), unit integral."""

    ta: float
    tb: float

    def __post_init__(self):
        if not self.tb > self.ta:
            raise InvariantError("bump window needs tb > ta")

    def psi(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        u = (2.0 * t - self.ta - self.tb) / (self.tb - self.ta)
        c = 35.0 / (16.0 * (self.tb - self.ta))
        return np.where(np.abs(u) < 1.0, c * (1.0 - u * u) ** 3, 0.0)


def time_average(traj, window: BumpWindow, min_samples: int = MIN_WINDOW_SAMPLES) -> np.ndarray:
    """Weighted average sum_i phi(t_i) psi(t_i) dt_i of the stored states.

    Weights use the trapezoid spacing of the stored times and are divided by
    their sum, so constant trajectories are reproduced exactly.
    """
    times = np.array([s.time for s in traj.states])
    if window.ta < times[0] - 1e-9 or window.tb > times[-1] + 1e-9:
        raise InvariantError("window unresolved: window lies outside the trajectory span")
    inside = np.flatnonzero((times > window.ta) & (times < window.tb))
    if len(inside) < min_samples:
        raise InvariantError(
            f"window unresolved: {len(inside)} stored samples inside window, need {min_samples}"
        )
    gaps = np.zeros_like(times)
    gaps[1:-1] = 0.5 * (times[2:] - times[:-2])
    gaps[0] = 0.5 * (times[1] - times[0])
    gaps[-1] = 0.5 * (times[-1] - times[-2])
    w = window.psi(times[inside]) * gaps[inside]
    phis = np.stack([traj.states[i].phi for i in inside])
    return np.tensordot(w, phis, axes=1) / np.sum(w)


def energy_gap(E: float):
    """(delta_star, N): distance from E to the nearest level 2 pi n^2 and that n."""
    if E < 0:
        raise InvariantError("energy must be nonnegative")
    lo = int(math.floor(math.sqrt(E / TWO_PI)))
    best = None
    for n in (lo, lo + 1):
        d = abs(E - TWO_PI * n * n)
        if best is None or d < best[0]:
            best = (d, n)
    return best


def nearest_harmonic(
    state: FieldState,
    harmonic_floor: float = HARMONIC_FLOOR,
    mode_floor: float = MODE_FLOOR,
):
    """Closest geodesic built from the dominant Fourier mode of phi.

    Returns (GeodesicMap, distance) where distance is the H^1 x L^2 norm of
    (phi - gamma, phi_t).  Low-energy states are compared with the constant
    map at their normalized mean.
    """
    grid = state.grid
    phi = state.phi
    if energy(state) <= harmonic_floor:
        m = phi.mean(axis=0)
        if np.linalg.norm(m) < 1e-12:
            raise DegenerateMode("degenerate mode: mean direction vanishes")
        g = GeodesicMap(m / np.linalg.norm(m), np.zeros_like(m), 0)
    else:
        table = fourier_coefficients(phi)
        n_max = grid.n_points // 2 - 1
        power = [
            float(np.sum(np.abs(table.coefficient(n)) ** 2 + np.abs(table.coefficient(-n)) ** 2))
            for n in range(1, n_max + 1)
        ]
        n0 = int(np.argmax(power)) + 1
        a = table.coefficient(n0)
        alpha, beta = a.real, a.imag
        if 2.0 * np.linalg.norm(alpha) < mode_floor:
            raise DegenerateMode(f"degenerate mode: |2 alpha_0| = {2 * np.linalg.norm(alpha):.3g}")
        mu = alpha / np.linalg.norm(alpha)
        b = beta - (beta @ mu) * mu
        if np.linalg.norm(b) < 1e-12:
            raise DegenerateMode("degenerate mode: beta_0 parallel to alpha_0")
        nu = b / np.linalg.norm(b)
        # re-orthogonalize to rounding level
        nu = nu - (nu @ mu) * mu
        nu /= np.linalg.norm(nu)
        g = GeodesicMap(mu, nu, n0)
    dist = h1l2_norm(grid, phi - g.samples(grid.x), state.phi_t)
    return g.canonical(), dist


def is_approx_harmonic(state: FieldState, eps: float) -> bool:
    if not 0.0 < eps < 1.0:
        raise InvariantError("eps must lie in (0, 1)")
    try:
        _, d = nearest_harmonic(state)
    except DegenerateMode:
        return False
    return d <= eps


def approximate_kg_residual(avg, E0: float) -> float:
    """max_j |avg_xx + (E0 / 2 pi) avg|_j with the three-point second difference."""
    avg = np.asarray(avg, dtype=float)
    if avg.ndim == 1:
        avg = avg[:, None]
    grid = Grid(avg.shape[0])
    r = grid.laplacian(avg) + (E0 / TWO_PI) * avg
    return float(np.max(np.linalg.norm(r, axis=1)))


@dataclass(frozen=True)
class DiagnosticRow:
    time: float
    energy: float
    delta_star: float
    nearest_N: int
    distance: float


def diagnostics(traj) -> list:
    """One row (time, energy, delta_star, nearest_N, distance) per stored state."""
    rows = []
    for s in traj.states:
        e = energy(s)
        ds, _ = energy_gap(e)
        try:
            g, d = nearest_harmonic(s)
            n, dist = g.N, d
        except DegenerateMode:
            n, dist = -1, float("nan")
        rows.append(DiagnosticRow(s.time, e, ds, n, dist))
    return rows


def write_diagnostics(rows, path, header: str = "") -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(header)
        fh.write("time,energy,delta_star,nearest_N,distance\n")
        for r in rows:
            fh.write(f"{r.time:.17g},{r.energy:.17g},{r.delta_star:.17g},{r.nearest_N},{r.distance:.17g}\n")
