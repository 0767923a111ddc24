import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wavemaps.errors import DegenerateMode, InvariantError
from wavemaps.grid import TWO_PI, ControlRegion, FieldState, Grid, energy
from wavemaps.harmonic import (
    BumpWindow,
    GeodesicMap,
    approximate_kg_residual,
    diagnostics,
    energy_gap,
    is_approx_harmonic,
    nearest_harmonic,
    time_average,
    write_diagnostics,
)
from wavemaps.solver import DampingProfile, evolve


def random_frame(rng, dim):
    Q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    return Q[:, 0], Q[:, 1]


class TestGeodesicMap:
    def test_validation(self):
        e = np.eye(3)
        with pytest.raises(InvariantError):
            GeodesicMap(2 * e[0], e[1], 1)
        with pytest.raises(InvariantError):
            GeodesicMap(e[0], e[0], 1)
        with pytest.raises(InvariantError):
            GeodesicMap(e[0], e[1], -1)
        with pytest.raises(InvariantError):
            GeodesicMap(e[0], e[1], 1.5)
        assert GeodesicMap(e[0], np.zeros(3), 0).k == 2

    def test_samples_and_canonical_agree(self):
        e = np.eye(3)
        g = GeodesicMap(-e[0], e[1], 3)
        c = g.canonical()
        x = Grid(64).x
        assert c.mu[0] > 0
        assert np.max(np.abs(c.samples(x) - g.samples(x))) < 1e-12

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(1, 4))
    def test_transform_commutes_with_sampling(self, seed, N):
        rng = np.random.default_rng(seed)
        mu, nu = random_frame(rng, 4)
        g = GeodesicMap(mu, nu, N)
        A, _ = np.linalg.qr(rng.standard_normal((4, 4)))
        x = Grid(32).x
        assert np.allclose(g.transform(A).samples(x), g.samples(x) @ A.T, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 5), st.integers(2, 4))
def test_nearest_harmonic_recovers_geodesic(seed, N, k):
    rng = np.random.default_rng(seed)
    mu, nu = random_frame(rng, k + 1)
    g = GeodesicMap(mu, nu, N)
    grid = Grid(64)
    found, dist = nearest_harmonic(g.state(grid))
    assert found.N == N
    assert dist < 1e-10
    assert np.max(np.abs(found.samples(grid.x) - g.samples(grid.x))) < 1e-10


def test_nearest_harmonic_low_energy_is_constant():
    grid = Grid(32)
    phi = np.tile([0.0, 0.0, 1.0], (32, 1)) + 0.01 * np.column_stack([np.cos(grid.x), 0 * grid.x, 0 * grid.x])
    s = FieldState.from_samples(grid, phi)
    g, d = nearest_harmonic(s)
    assert g.N == 0
    assert np.allclose(g.mu, [0, 0, 1], atol=1e-3)
    assert d < 0.05


def test_nearest_harmonic_degenerate():
    grid = Grid(32)
    x = grid.x
    # mode-1 content only in the imaginary part: alpha_0 = 0
    phi = np.column_stack([np.sin(x), 0 * x, np.ones(32)])
    with pytest.raises(DegenerateMode):
        nearest_harmonic(FieldState.from_samples(grid, phi))
    assert not is_approx_harmonic(FieldState.from_samples(grid, phi), 0.5)


def test_is_approx_harmonic():
    grid = Grid(64)
    g = GeodesicMap(np.eye(3)[0], -np.eye(3)[1], 1)
    s = g.state(grid)
    assert is_approx_harmonic(s, 0.01)
    v = np.zeros((64, 3))
    v[:, 2] = 0.1
    assert not is_approx_harmonic(FieldState(grid, s.phi, v), 0.05)
    with pytest.raises(InvariantError):
        is_approx_harmonic(s, 1.5)


@pytest.mark.parametrize(
    "E,expected",
    [(0.0, (0.0, 0)), (TWO_PI, (0.0, 1)), (TWO_PI + 0.15, (0.15, 1)), (8 * math.pi - 1, (1.0, 2)), (1.0, (1.0, 0))],
)
def test_energy_gap(E, expected):
    d, n = energy_gap(E)
    assert n == expected[1]
    assert d == pytest.approx(expected[0], abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 500.0))
def test_energy_gap_is_distance_to_levels(E):
    d, n = energy_gap(E)
    levels = [TWO_PI * m * m for m in range(12)]
    assert d == pytest.approx(min(abs(E - L) for L in levels), abs=1e-9)
    assert abs(E - TWO_PI * n * n) == pytest.approx(d, abs=1e-9)


def test_energy_gap_negative():
    with pytest.raises(InvariantError):
        energy_gap(-1.0)


def test_bump_window_has_unit_integral():
    w = BumpWindow(1.0, 3.0)
    t = np.linspace(0.0, 4.0, 40001)
    assert np.trapezoid(w.psi(t), t) == pytest.approx(1.0, abs=1e-8)
    assert w.psi(np.array([0.5, 3.5])).max() == 0.0
    with pytest.raises(InvariantError):
        BumpWindow(2.0, 2.0)


def test_time_average_of_static_state_is_exact():
    grid = Grid(32)
    s = GeodesicMap(np.eye(3)[0], -np.eye(3)[1], 1).state(grid)
    traj = evolve(s, 5.0)
    avg = time_average(traj, BumpWindow(0.5, 4.5))
    assert np.max(np.abs(avg - s.phi)) < 1e-12
    # the discrete equator solves avg_xx + (E / 2pi) avg = 0 with its discrete energy
    lam = (2 - 2 * math.cos(grid.spacing)) / grid.spacing**2
    assert approximate_kg_residual(avg, TWO_PI * lam) < 1e-10


def test_time_average_window_checks():
    grid = Grid(32)
    s = GeodesicMap(np.eye(3)[0], -np.eye(3)[1], 1).state(grid)
    traj = evolve(s, 2.0, save_every=20)
    with pytest.raises(InvariantError, match="unresolved"):
        time_average(traj, BumpWindow(0.5, 1.5))
    with pytest.raises(InvariantError, match="unresolved"):
        time_average(traj, BumpWindow(1.0, 3.0))


def test_time_average_of_rotation_matches_quadrature():
    # averaging x -> (cos(x + ct), sin(x + ct), 0) against psi rotates and scales the
    # equator by the Fourier transform of psi at c
    grid = Grid(64)
    x = grid.x
    c = 1.0
    phi = np.column_stack([np.cos(x), np.sin(x), 0 * x])
    s = FieldState(grid, phi, c * np.column_stack([-np.sin(x), np.cos(x), 0 * x]))
    w = BumpWindow(0.0, 10.0)
    avg = time_average(evolve(s, 10.0), w)
    t = np.linspace(0.0, 10.0, 200001)
    z = np.trapezoid(w.psi(t) * np.exp(1j * c * t), t)
    expected = np.column_stack([np.real(z * np.exp(1j * x)), np.imag(z * np.exp(1j * x)), 0 * x])
    assert abs(z) < 0.2
    assert np.max(np.abs(avg - expected)) < 1e-3


def test_diagnostics_rows(tmp_path):
    grid = Grid(32)
    d = DampingProfile.smooth(grid, ControlRegion(0.0, math.pi))
    s = GeodesicMap(np.eye(3)[0], -np.eye(3)[1], 1).state(grid)
    traj = evolve(s, 1.0, damping=d, save_every=8)
    rows = diagnostics(traj)
    assert len(rows) == len(traj.states)
    assert all(r.nearest_N == 1 and r.distance < 1e-10 for r in rows)
    p = tmp_path / "d.csv"
    write_diagnostics(rows, p, "# h\n")
    lines = p.read_text().splitlines()
    assert lines[0] == "# h" and lines[1].startswith("time,energy")
    assert len(lines) == len(rows) + 2
