"""Periodic grid on the circle, sphere-valued field states and their diagnostics.

Everything here is a pure function of immutable inputs.  Derivatives are
second-order central differences and integrals are the periodic midpoint rule
(sum times spacing).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, TextIO, Union

import numpy as np

from .errors import DegreeNotResolved, InvariantError, UnresolvedLoop

TWO_PI = 2.0 * math.pi
TANG_TOL = 1e-10
JUMP_MARGIN = 0.5


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid x_j = j * 2*pi/n on the circle."""

    n_points: int

    def __post_init__(self):
        n = self.n_points
        if int(n) != n or n < 8 or n % 2:
            raise InvariantError(f"n_points must be an even integer >= 8, got {n!r}")

    @property
    def spacing(self) -> float:
        return TWO_PI / self.n_points

    @cached_property
    def x(self) -> np.ndarray:
        return _frozen(np.arange(self.n_points) * self.spacing)

    def dx(self, f: np.ndarray) -> np.ndarray:
        """Central difference along axis 0."""
        return (np.roll(f, -1, axis=0) - np.roll(f, 1, axis=0)) / (2.0 * self.spacing)

    def laplacian(self, f: np.ndarray) -> np.ndarray:
        """Three-point second difference along axis 0."""
        return (np.roll(f, -1, axis=0) - 2.0 * f + np.roll(f, 1, axis=0)) / self.spacing**2

    def integrate(self, f: np.ndarray) -> float:
        return float(np.sum(f) * self.spacing)


@dataclass(frozen=True, eq=False)
class FieldState:
    """Pair (phi, phi_t) sampled on a grid with values in the tangent bundle of S^k.

    ``phi`` and ``phi_t`` have shape (n_points, k+1).  Construction checks
    |phi_j| = 1 and phi_j . phi_t_j = 0 to ``tang_tol``; use
    :meth:`from_samples` to normalize and project raw data first.
    """

    grid: Grid
    phi: np.ndarray
    phi_t: np.ndarray
    time: float = 0.0
    tang_tol: float = field(default=TANG_TOL, repr=False)

    def __post_init__(self):
        phi = _frozen(self.phi)
        phi_t = _frozen(self.phi_t)
        n = self.grid.n_points
        if phi.ndim != 2 or phi.shape[0] != n or phi.shape[1] < 2:
            raise InvariantError(f"phi must have shape ({n}, k+1) with k >= 1, got {phi.shape}")
        if phi_t.shape != phi.shape:
            raise InvariantError("phi_t must have the same shape as phi")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "phi_t", phi_t)
        object.__setattr__(self, "time", float(self.time))
        err = self.tangency_error()
        if not err <= self.tang_tol:
            raise InvariantError(f"state violates sphere/tangency invariants (error {err:.3e})")

    @classmethod
    def from_samples(cls, grid: Grid, phi, phi_t=None, time: float = 0.0) -> "FieldState":
        """Normalize positions node-wise and project velocities to the tangent planes."""
        phi = np.asarray(phi, dtype=float)
        phi = phi / np.linalg.norm(phi, axis=1, keepdims=True)
        if phi_t is None:
            phi_t = np.zeros_like(phi)
        else:
            phi_t = np.asarray(phi_t, dtype=float)
            phi_t = phi_t - np.sum(phi_t * phi, axis=1, keepdims=True) * phi
        return cls(grid, phi, phi_t, time)

    @property
    def k(self) -> int:
        return self.phi.shape[1] - 1

    def tangency_error(self) -> float:
        unit = np.max(np.abs(np.linalg.norm(self.phi, axis=1) - 1.0))
        tang = np.max(np.abs(np.sum(self.phi * self.phi_t, axis=1)))
        return float(max(unit, tang))

    def transform(self, A) -> "FieldState":
        """Apply an orthogonal matrix sample-wise."""
        A = np.asarray(A, dtype=float)
        return FieldState(self.grid, self.phi @ A.T, self.phi_t @ A.T, self.time, self.tang_tol)

    def with_time(self, time: float) -> "FieldState":
        return FieldState(self.grid, self.phi, self.phi_t, time, self.tang_tol)


@dataclass(frozen=True, eq=False)
class EnergyTrace:
    times: np.ndarray
    energy: np.ndarray
    dissipation: np.ndarray
    forcing_work: Optional[np.ndarray] = None
    tangency_error: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("times", "energy", "dissipation", "forcing_work", "tangency_error"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, _frozen(val))
        n = len(self.times)
        for name in ("energy", "dissipation", "forcing_work", "tangency_error"):
            val = getattr(self, name)
            if val is not None and len(val) != n:
                raise InvariantError(f"trace column {name} has length {len(val)} != {n}")
        if n > 1 and not np.all(np.diff(self.times) > 0):
            raise InvariantError("trace times must be strictly increasing")

    def __len__(self):
        return len(self.times)


@dataclass(frozen=True)
class ControlRegion:
    """Open arc from ``start`` to ``end`` (counterclockwise, wrapping allowed).

    An arc with ``end - start >= 2*pi`` is the whole circle.
    """

    start: float
    end: float

    def __post_init__(self):
        if not (np.isfinite(self.start) and np.isfinite(self.end)):
            raise InvariantError("region endpoints must be finite")
        if self.length <= 0.0:
            raise InvariantError(f"empty control region ({self.start}, {self.end})")

    @classmethod
    def full(cls) -> "ControlRegion":
        return cls(0.0, TWO_PI)

    @property
    def is_full(self) -> bool:
        return self.end - self.start >= TWO_PI - 1e-12

    @property
    def length(self) -> float:
        if self.end - self.start >= TWO_PI - 1e-12:
            return TWO_PI
        return float((self.end - self.start) % TWO_PI)

    def local(self, x) -> np.ndarray:
        """Arc-length coordinate measured from ``start``, in [0, 2*pi)."""
        return np.mod(np.asarray(x, dtype=float) - self.start, TWO_PI)

    def contains(self, x) -> np.ndarray:
        if self.is_full:
            return np.ones(np.shape(x), dtype=bool)
        u = self.local(x)
        return (u > 0.0) & (u < self.length)

    def distance(self, x) -> np.ndarray:
        """Distance along the circle from x to the closed arc."""
        if self.is_full:
            return np.zeros(np.shape(x))
        u = self.local(x)
        outside = u >= self.length
        d_after = u - self.length
        d_before = TWO_PI - u
        return np.where(outside, np.minimum(d_after, d_before), 0.0)

    def cutoff(self, x, plateau: float = 0.8) -> np.ndarray:
        """C^2 bump equal to 1 on the middle ``plateau`` fraction of the arc, 0 outside."""
        x = np.asarray(x, dtype=float)
        if self.is_full:
            return np.ones_like(x)
        L = self.length
        w = 0.5 * (1.0 - plateau) * L
        u = self.local(x)
        r = np.clip(np.minimum(u, L - u) / w, 0.0, 1.0)
        chi = r**3 * (10.0 - 15.0 * r + 6.0 * r * r)
        return np.where(u < L, chi, 0.0)


# ---------------------------------------------------------------------------
# pointwise geometry


def project_orthogonal(f, phi, tol: float = TANG_TOL) -> np.ndarray:
    """Return f - <f, phi> phi.  Works row-wise on (..., k+1) arrays."""
    f = np.asarray(f, dtype=float)
    phi = np.asarray(phi, dtype=float)
    norm_err = np.max(np.abs(np.linalg.norm(phi, axis=-1) - 1.0))
    if norm_err > tol:
        raise InvariantError(f"phi is not a unit vector (| |phi| - 1 | = {norm_err:.3e})")
    return f - np.sum(f * phi, axis=-1, keepdims=True) * phi


def energy(state: FieldState) -> float:
    """Discrete energy sum_j (|phi_x|^2 + |phi_t|^2) * spacing."""
    g = state.grid
    phi_x = g.dx(state.phi)
    return float((np.sum(phi_x * phi_x) + np.sum(state.phi_t * state.phi_t)) * g.spacing)


def h1l2_norm(grid: Grid, u, v=None) -> float:
    """sqrt(||u||^2 + ||u_x||^2 + ||v||^2) with discrete L^2 norms."""
    u = np.asarray(u, dtype=float)
    total = np.sum(u * u) + np.sum(grid.dx(u) ** 2)
    if v is not None:
        v = np.asarray(v, dtype=float)
        total = total + np.sum(v * v)
    return float(math.sqrt(total * grid.spacing))


# ---------------------------------------------------------------------------
# degrees


def _phi_array(state_or_phi) -> np.ndarray:
    if isinstance(state_or_phi, FieldState):
        return state_or_phi.phi
    return np.asarray(state_or_phi, dtype=float)


def winding_number(state, jump_margin: float = JUMP_MARGIN) -> int:
    """Degree of a sampled loop in S^1 from principal-branch angle increments."""
    phi = _phi_array(state)
    if phi.ndim != 2 or phi.shape[1] != 2:
        raise InvariantError("winding_number needs a k=1 state (two components)")
    theta = np.arctan2(phi[:, 1], phi[:, 0])
    inc = np.diff(np.append(theta, theta[0]))
    inc = (inc + math.pi) % TWO_PI - math.pi
    worst = float(np.max(np.abs(inc)))
    if worst >= math.pi - jump_margin:
        raise UnresolvedLoop(f"unresolved loop: adjacent angular jump {worst:.3f} rad")
    total = float(np.sum(inc)) / TWO_PI
    return int(round(total))


def sphere_volume(d: int) -> float:
    """Surface measure of the unit sphere S^d in R^{d+1}."""
    return 2.0 * math.pi ** ((d + 1) / 2.0) / math.gamma((d + 1) / 2.0)


@dataclass(frozen=True)
class DegreeReport:
    raw: float
    degree: int
    residual: float
    m: int
    dim: int


def _slab_density(center, below, above, h0, spacings):
    # columns: d/ds_0 (across slabs), d/ds_i (within slab, periodic), the map itself
    cols = [(above - below) / (2.0 * h0)]
    for axis, h in enumerate(spacings):
        cols.append((np.roll(center, -1, axis=axis) - np.roll(center, 1, axis=axis)) / (2.0 * h))
    cols.append(center)
    return np.linalg.det(np.stack(cols, axis=-1))


def degree_from_slabs(
    slab: Callable[[int], np.ndarray], m: int, dim: int, resolve_tol: float = 0.1
) -> DegreeReport:
    """Degree of a map from the dim-torus (m samples per axis) to S^dim.

    ``slab(i)`` returns the samples with first torus coordinate 2*pi*i/m, an
    array of shape (m,)*(dim-1) + (dim+1,).  Slabs are requested in order so
    only three are held at once.
    """
    h = TWO_PI / m
    cache = {}

    def get(i):
        i %= m
        if i not in cache:
            cache[i] = np.asarray(slab(i), dtype=float)
        return cache[i]

    total = 0.0
    for i in range(m):
        for key in [key for key in cache if key not in ((i - 1) % m, i, (i + 1) % m, 0, 1, m - 1)]:
            del cache[key]
        dens = _slab_density(get(i), get(i - 1), get(i + 1), h, [h] * (dim - 1))
        total += float(np.sum(dens))
    raw = total * h**dim / sphere_volume(dim)
    deg = int(round(raw))
    resid = abs(raw - deg)
    report = DegreeReport(raw=raw, degree=deg, residual=resid, m=m, dim=dim)
    if resid >= resolve_tol:
        raise DegreeNotResolved(f"degree not resolved: raw value {raw:.4f}")
    return report


def map_degree(samples, resolve_tol: float = 0.1) -> DegreeReport:
    """Degree of sampled map T^d -> S^d given as an array (m,)*d + (d+1,)."""
    samples = np.asarray(samples, dtype=float)
    dim = samples.ndim - 1
    m = samples.shape[0]
    if samples.shape != (m,) * dim + (dim + 1,):
        raise InvariantError(f"expected samples of shape {(m,) * dim + (dim + 1,)}, got {samples.shape}")
    norm_err = np.max(np.abs(np.linalg.norm(samples, axis=-1) - 1.0))
    if norm_err > 1e-8:
        raise InvariantError(f"samples are not on the sphere (error {norm_err:.2e})")
    return degree_from_slabs(lambda i: samples[i], m, dim, resolve_tol)


def surface_degree(samples, resolve_tol: float = 0.1) -> DegreeReport:
    """Degree of a map S^1 x S^1 -> S^2 sampled on an m x m grid (axes s, x)."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 3 or samples.shape[2] != 3 or samples.shape[0] != samples.shape[1]:
        raise InvariantError(f"surface_degree needs an (m, m, 3) array, got {samples.shape}")
    if samples.shape[0] < 64:
        raise InvariantError("surface_degree needs m >= 64")
    return map_degree(samples, resolve_tol)


# ---------------------------------------------------------------------------
# Fourier diagnostics


@dataclass(frozen=True, eq=False)
class FourierTable:
    """Coefficients c_n with field(x_j) = sum_n c_n exp(i n x_j), n = -N/2 .. N/2-1."""

    modes: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "modes", _frozen(self.modes, dtype=int))
        object.__setattr__(self, "coeffs", _frozen(self.coeffs, dtype=complex))

    def coefficient(self, n: int) -> np.ndarray:
        idx = int(n) - int(self.modes[0])
        if not 0 <= idx < len(self.modes):
            raise IndexError(f"mode {n} outside table")
        return self.coeffs[idx]


def fourier_coefficients(field_samples) -> FourierTable:
    f = np.asarray(field_samples, dtype=float)
    n = f.shape[0]
    c = np.fft.fftshift(np.fft.fft(f, axis=0) / n, axes=0)
    modes = np.arange(-n // 2, n // 2)
    return FourierTable(modes, c)


def inverse_fourier(table: FourierTable) -> np.ndarray:
    n = len(table.modes)
    c = np.fft.ifftshift(np.asarray(table.coeffs), axes=0)
    return np.real(np.fft.ifft(c * n, axis=0))


# ---------------------------------------------------------------------------
# text serialization


def _open_text(target, mode):
    if isinstance(target, (str, bytes)) or hasattr(target, "__fspath__"):
        return open(target, mode, encoding="ascii"), True
    return target, False


def write_state(state: FieldState, target: Union[str, TextIO], header_extra: str = "") -> None:
    """Columnar text: header then ``x phi_0..phi_k phit_0..phit_k`` per node."""
    fh, close = _open_text(target, "w")
    try:
        if header_extra:
            fh.write(header_extra)
        fh.write(f"# wavemap-state k={state.k} n={state.grid.n_points} t={state.time!r}\n")
        rows = np.column_stack([state.grid.x, state.phi, state.phi_t])
        for row in rows:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")
    finally:
        if close:
            fh.close()


def read_state(source: Union[str, TextIO]) -> FieldState:
    fh, close = _open_text(source, "r")
    try:
        text = fh.read()
    finally:
        if close:
            fh.close()
    header = None
    rows = []
    for line in io.StringIO(text):
        line = line.strip()
        if not line:
            continue
        if line.startswith("# wavemap-state"):
            header = dict(tok.split("=", 1) for tok in line.split()[2:])
        elif line.startswith("#"):
            continue
        else:
            rows.append([float(tok) for tok in line.split()])
    if header is None:
        raise InvariantError("missing '# wavemap-state' header")
    k, n, t = int(header["k"]), int(header["n"]), float(header["t"])
    data = np.array(rows, dtype=float)
    if data.shape != (n, 2 * (k + 1) + 1):
        raise InvariantError(f"state table has shape {data.shape}, expected {(n, 2 * k + 3)}")
    return FieldState(Grid(n), data[:, 1 : k + 2], data[:, k + 2 :], t)
