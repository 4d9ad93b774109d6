import logging

import numpy as np
import pytest

from cyclomass.errors import NegativeAlphaError, SizeMismatchError, TruncationError
from cyclomass.limit import (
    ModeSet,
    approximate_field,
    check_alpha,
    energies,
    evolve_limit,
    filtering_phases,
    init_modes,
    step_limit,
)
from cyclomass.poisson import build_kernel
from cyclomass.spectral import Grid2D, field_from_function

from .conftest import gaussian_xy, separable_field


def _charged_modes(plane, basis, amps=(1.0, 0.5), mass=5.0) -> ModeSet:
    psi0 = separable_field(plane, basis, np.asarray(amps) / np.linalg.norm(amps))
    m = init_modes(psi0, basis)
    return m.with_values(m.values * np.sqrt(mass))


class TestInitModes:
    def test_masses_follow_amplitudes(self, plane, desk_basis):
        m = init_modes(separable_field(plane, desk_basis, [0.6, 0.8]), desk_basis)
        np.testing.assert_allclose(m.masses[:2], [0.36, 0.64], rtol=1e-9)
        assert m.masses[2:].max() < 1e-16
        assert m.values.shape == (8, 32, 32)

    def test_tail_refused(self, plane, desk_grid, desk_basis):
        psi0 = field_from_function(lambda x, y, z: np.exp(-(x ** 2 + y ** 2)) * (np.abs(z) < 2), plane, desk_grid)
        with pytest.raises(TruncationError, match="increase P"):
            init_modes(psi0, desk_basis)

    def test_mode_count_checked(self, plane, desk_basis):
        with pytest.raises(SizeMismatchError):
            ModeSet(np.zeros((3, *plane.shape), dtype=complex), plane, desk_basis)


class TestLinearPropagation:
    def test_anisotropic_free_gaussian(self, desk_basis):
        grid = Grid2D(32.0, 32.0, 64, 64)
        values = np.zeros((desk_basis.P, *grid.shape), dtype=complex)
        values[0] = gaussian_xy(grid)
        alpha = np.full(desk_basis.P, 0.5)
        traj = evolve_limit(ModeSet(values, grid, desk_basis), alpha, 0.1, 1.0, diag_every=0)

        x, y = grid.mesh()
        sx, sy = 1.0 + 2j * 0.5 * 1.0, 1.0 + 2j * 1.0
        exact = np.pi ** -0.5 * np.sqrt(1 / sx) * np.sqrt(1 / sy) * np.exp(-x ** 2 / (2 * sx) - y ** 2 / (2 * sy))
        np.testing.assert_allclose(traj.final.values[0], exact, atol=1e-6)
        assert traj.final.t == pytest.approx(1.0)
        assert not traj.final.values[1:].any()

    def test_energies_of_a_gaussian(self, plane, desk_basis):
        m = init_modes(separable_field(plane, desk_basis, [1.0]), desk_basis)
        e = energies(m, np.full(desk_basis.P, 0.5))
        assert e.conf == pytest.approx(desk_basis.E[0], rel=1e-10)
        assert e.kinetic_x == pytest.approx(0.25, rel=1e-8)
        assert e.kinetic_y == pytest.approx(0.5, rel=1e-8)
        assert e.potential == 0.0


class TestNonlinearPropagation:
    def test_mode_masses_conserved(self, plane, desk_basis):
        m0 = _charged_modes(plane, desk_basis)
        alpha = np.full(desk_basis.P, 0.5)
        traj = evolve_limit(m0, alpha, 1e-2, 0.2, build_kernel(plane), diag_every=5)
        d = traj.diagnostics
        cols = [f"mass_{p}" for p in range(desk_basis.P)]
        drift = np.abs(d[cols] - d[cols].iloc[0]).to_numpy().max()
        assert drift < 1e-12
        assert d["E_conf"].iloc[-1] == pytest.approx(d["E_conf"].iloc[0], rel=1e-12)
        assert d["potential"].iloc[0] > 0

    def test_energy_error_is_second_order(self, plane, desk_basis):
        m0 = _charged_modes(plane, desk_basis)
        alpha = np.full(desk_basis.P, 0.5)
        kernel = build_kernel(plane)
        drift = {}
        for dt, every in ((1e-2, 1), (5e-3, 2)):
            d = evolve_limit(m0, alpha, dt, 0.5, kernel, diag_every=every).diagnostics
            drift[dt] = np.abs(d["E_tr"] / d["E_tr"].iloc[0] - 1).max()
        assert 3.0 <= drift[1e-2] / drift[5e-3] <= 5.0

    def test_single_step_matches_evolve(self, plane, desk_basis):
        m0 = _charged_modes(plane, desk_basis)
        alpha = np.full(desk_basis.P, 0.5)
        kernel = build_kernel(plane)
        one = step_limit(m0, 1e-2, alpha, kernel)
        via = evolve_limit(m0, alpha, 1e-2, 1e-2, kernel).final
        np.testing.assert_allclose(one.values, via.values, atol=1e-14)


class TestEvolveControl:
    def test_negative_alpha(self, caplog):
        with pytest.raises(NegativeAlphaError, match="override"):
            check_alpha(np.array([0.5, -0.1]))
        with caplog.at_level(logging.WARNING, logger="cyclomass.limit"):
            check_alpha(np.array([0.5, -0.1]), override=True)
        assert "non-positive" in caplog.text

    def test_whole_steps_required(self, random_modes):
        with pytest.raises(ValueError, match="whole number"):
            evolve_limit(random_modes, np.ones(random_modes.P), 0.03, 0.1)

    def test_snapshot_cadence(self, plane, desk_basis):
        m0 = _charged_modes(plane, desk_basis)
        traj = evolve_limit(m0, np.ones(desk_basis.P), 0.01, 0.1, snapshot_every=5, diag_every=0)
        np.testing.assert_allclose(traj.times, [0.0, 0.05, 0.1])
        assert len(traj.diagnostics) == 2
        assert traj.steps == 10
        assert traj.halt_reason is None

    def test_non_finite_halts(self, plane, desk_basis):
        m0 = _charged_modes(plane, desk_basis)
        values = m0.values.copy()
        values[0, 3, 3] = np.nan
        traj = evolve_limit(m0.with_values(values), np.ones(desk_basis.P), 0.01, 0.1, diag_every=0)
        assert traj.halt_reason is not None
        assert len(traj.snapshots) == 1
        assert traj.steps == 1

    def test_growth_guard(self, plane, desk_basis):
        m0 = _charged_modes(plane, desk_basis)
        traj = evolve_limit(m0, np.ones(desk_basis.P), 0.01, 0.1, blowup_factor=0.5)
        assert "T_max" in traj.halt_reason
        assert traj.final.t == pytest.approx(0.01)


class TestReconstruction:
    def test_phases_reduced_accurately(self):
        E = np.array([1.0, np.sqrt(2.0)])
        np.testing.assert_allclose(filtering_phases(E, 1.0, 1e-3), np.exp(-1j * E * 1e6), atol=1e-8)
        np.testing.assert_allclose(np.abs(filtering_phases(E, 37.0, 1e-4)), 1.0)

    def test_initial_field_is_recovered(self, plane, desk_basis):
        psi0 = separable_field(plane, desk_basis, [0.6, 0.8])
        field = approximate_field(init_modes(psi0, desk_basis), 0.1)
        assert field.representation == "grid"
        np.testing.assert_allclose(field.values, psi0.values, atol=1e-10)
