"""Topological obstruction experiments for damped wave maps into spheres.

The families A (into S^2) and their suspensions A_k (into S^k) are loops of
maps with energy at most 2 pi whose total degree is 2^(k-1).  A uniformly
stabilizing feedback would contract every such loop to a family of nearly
constant maps, which the capped homotopy turns into a map depending on s
only and hence of degree 0.  The damped flow shows the mechanism directly:
near the equator the decay time blows up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import CapUndefined, InvariantError
from .grid import TWO_PI, DegreeReport, FieldState, Grid, degree_from_slabs, energy
from .solver import DampingProfile, evolve, uniform_dt

SPHERE_TOL = 1e-12
T_MAX = 200.0
CAP_MARGIN = 1e-12


def _flip(s):
    # orientation flip on the second half of the parameter circle
    return np.where(np.mod(s, TWO_PI) > math.pi, -1.0, 1.0)


def _sincos(s):
    # exact zeros at multiples of pi / 2 so the equator s = pi / 2 is sampled
    # exactly; a 1e-16 polar component would otherwise seed its instability
    sn, cs = np.sin(s), np.cos(s)
    sn = np.where(np.abs(sn) < 1e-15, 0.0, sn)
    cs = np.where(np.abs(cs) < 1e-15, 0.0, cs)
    return sn, cs


def family_A(s, x) -> np.ndarray:
    """The degree-2 loop of circles on S^2, broadcast over s and x; shape (..., 3)."""
    s, x = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(x, dtype=float))
    sn, cs = _sincos(s)
    return np.stack([_flip(s) * sn * np.cos(x), sn * np.sin(x), cs], axis=-1)


def family_Ak(k: int, s: Sequence, x) -> np.ndarray:
    """Suspension family into S^k with k - 1 parameters; k = 2 is family_A.

    For s_1 in [0, pi] the point is (sin s_1 B, cos s_1) with B =
    family_Ak(k - 1, rest, x).  For s_1 in (pi, 2 pi) every component of B
    except the last is multiplied by -sin s_1 and the last by sin s_1.  This
    is the rule that produces family_A from the circle x -> (cos x, sin x),
    and it makes the second half a reflected copy so the degrees add up to
    2^(k-1).
    """
    if k < 2:
        raise InvariantError("family_Ak needs target dimension k >= 2")
    s = list(s)
    if len(s) != k - 1:
        raise InvariantError(f"family_Ak({k}) needs {k - 1} parameters, got {len(s)}")
    if k == 2:
        return family_A(s[0], x)
    inner = family_Ak(k - 1, s[1:], x)
    s1 = np.broadcast_to(np.asarray(s[0], dtype=float), inner.shape[:-1])
    sn, cs = _sincos(s1)
    sign = np.ones(inner.shape)
    sign[..., :-1] = _flip(s1)[..., None]
    return np.concatenate([sign * sn[..., None] * inner, cs[..., None]], axis=-1)


@dataclass(frozen=True)
class HomotopyFamily:
    """Parameterized loop family into S^k; ``dim`` = number of parameters."""

    k: int
    name: str
    evaluator: Callable

    @property
    def dim(self) -> int:
        return self.k - 1

    @classmethod
    def standard(cls, k: int) -> "HomotopyFamily":
        if k < 2:
            raise InvariantError("families need target dimension k >= 2")
        name = "A" if k == 2 else f"A{k - 1}"
        return cls(k, name, lambda s, x: family_Ak(k, s, x))

    def __call__(self, s: Sequence, x) -> np.ndarray:
        out = self.evaluator(s, x)
        err = float(np.max(np.abs(np.linalg.norm(out, axis=-1) - 1.0)))
        if err > SPHERE_TOL:
            raise InvariantError(f"family sample off the sphere by {err:.2e}")
        return out

    def slab(self, m: int, i: int) -> np.ndarray:
        """Samples with first parameter 2 pi i / m, shape (m,)*(dim) + (k+1,).

        Axes run over the remaining parameters and then x.
        """
        t = TWO_PI * np.arange(m) / m
        axes = np.meshgrid(*([t] * self.dim), indexing="ij")
        params = [np.full(axes[0].shape, t[i])] + list(axes[:-1])
        return self(params, axes[-1])

    def samples(self, m: int) -> np.ndarray:
        """All samples on the m^(dim + 1) torus grid, parameters first, x last."""
        return np.stack([self.slab(m, i) for i in range(m)])

    def state(self, grid: Grid, s: Sequence) -> FieldState:
        """(gamma(s), 0) on ``grid``."""
        return FieldState.from_samples(grid, self(list(s), grid.x))


def family_energy_curve(family: HomotopyFamily, s_points, n_points: int = 256) -> np.ndarray:
    """E((gamma(s), 0)) for each parameter vector in ``s_points``.

    ``s_points`` is a sequence of parameter vectors (scalars allowed when the
    family has one parameter).
    """
    grid = Grid(n_points)
    out = []
    for s in s_points:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out.append(energy(family.state(grid, s)))
    return np.array(out)


@dataclass(frozen=True)
class FamilyDegree:
    family: str
    report: DegreeReport

    def row(self) -> str:
        r = self.report
        return f"{self.family},{r.m},{r.raw:.12f},{r.degree},{r.residual:.3e}"


DEGREE_HEADER = "family,m,raw_degree,rounded,residual"


def family_degree(family: HomotopyFamily, m: int, resolve_tol: float = 0.1) -> FamilyDegree:
    """Degree of the family viewed as a map from the (k)-torus (parameters, x) to S^k."""
    if m < 8:
        raise InvariantError("family_degree needs m >= 8")
    rep = degree_from_slabs(lambda i: family.slab(m, i), m, family.k, resolve_tol)
    return FamilyDegree(family.name, rep)


@dataclass(frozen=True, eq=False)
class CappedHomotopy:
    """Slices H(T + r) of the cap, shape (len(r), m_s, m_x, 3)."""

    r: np.ndarray
    slices: np.ndarray
    min_denominator: float


def capped_homotopy(flow_states, anchor, r_values=None) -> CappedHomotopy:
    """Normalized linear interpolation from flow_states(s, x) to anchor(s).

    ``flow_states`` has shape (m_s, m_x, 3) and ``anchor`` shape (m_s, 3).
    The reported minimum denominator is the exact minimum over r in [0, 1],
    which for unit vectors H and a is |H + a| / 2 (reached at r = 1/2).
    """
    H = np.asarray(flow_states, dtype=float)
    a = np.asarray(anchor, dtype=float)
    if H.ndim != 3 or a.ndim != 2 or a.shape != (H.shape[0], H.shape[2]):
        raise InvariantError("capped_homotopy needs flow_states (m_s, m_x, d) and anchor (m_s, d)")
    for name, arr in (("flow_states", H), ("anchor", a)):
        err = float(np.max(np.abs(np.linalg.norm(arr, axis=-1) - 1.0)))
        if err > 1e-10:
            raise InvariantError(f"{name} not on the sphere (error {err:.2e})")
    gap = float(np.max(np.linalg.norm(H - a[:, None, :], axis=-1)))
    if gap >= 2.0 - CAP_MARGIN:
        raise CapUndefined(f"cap undefined: sup |H - a| = {gap:.12g} is not below 2")
    if r_values is None:
        r_values = np.linspace(0.0, 1.0, 11)
    r = np.asarray(r_values, dtype=float)
    if np.any((r < 0) | (r > 1)):
        raise InvariantError("r values must lie in [0, 1]")
    mix = (1.0 - r)[:, None, None, None] * H[None] + r[:, None, None, None] * a[None, :, None, :]
    den = np.linalg.norm(mix, axis=-1, keepdims=True)
    min_den = float(np.min(np.linalg.norm(H + a[:, None, :], axis=-1))) / 2.0
    return CappedHomotopy(r, mix / den, min_den)


def anchor_loop(flow_states) -> np.ndarray:
    """a(s) = flow_states(s, x_0)."""
    return np.array(np.asarray(flow_states, dtype=float)[:, 0, :])


@dataclass(frozen=True)
class DecayRow:
    s: float
    E0: float
    hit_time: float
    censored: bool

    def row(self) -> str:
        hit = "nan" if self.censored else f"{self.hit_time:.6f}"
        return f"{self.s:.12g},{self.E0:.12g},{hit},{str(self.censored).lower()}"


DECAY_HEADER = "s,E0,hit_time,censored"


def nonuniform_decay_experiment(
    damping: DampingProfile,
    s_values,
    energy_target: float = 0.1,
    t_max: float = T_MAX,
    dt: Optional[float] = None,
    check_every: int = 8,
) -> list:
    """First time the damped flow from (A(s, .), 0) reaches E <= energy_target.

    Runs that do not get there by ``t_max`` are censored.  The hitting time
    is resolved to ``check_every`` steps.
    """
    if not energy_target < TWO_PI:
        raise InvariantError("energy_target must be below 2 pi")
    grid = damping.grid
    fam = HomotopyFamily.standard(2)
    if dt is None:
        dt = uniform_dt(1.0, grid)
    rows = []
    for s in s_values:
        start = fam.state(grid, [s])
        E0 = energy(start)
        if E0 <= energy_target:
            rows.append(DecayRow(float(s), E0, 0.0, False))
            continue
        traj = evolve(
            start, t_max, damping=damping, dt=dt, save_every=check_every, until=lambda st: energy(st) <= energy_target
        )
        end = traj.final
        hit = energy(end) <= energy_target
        rows.append(DecayRow(float(s), E0, end.time if hit else float("nan"), not hit))
    return rows
