import logging

import numpy as np
import pytest

from cyclomass.confinement import (
    PotentialSpec,
    build_potential,
    cached_eigs,
    check_gap,
    dirichlet_eigenpairs,
    eigs_frame,
    h_z_apply,
    project_modes,
    select_mode_count,
    solve_eigs,
    synth_modes,
    truncate_basis,
)
from cyclomass.errors import InvariantViolation, ResolutionError, SizeMismatchError
from cyclomass.spectral import Field3D, Grid1D
from cyclomass.subband import coupling_coeffs

from .conftest import separable_field


class TestBuildPotential:
    def test_harmonic_audit(self, harmonic_potential):
        audit = harmonic_potential.audit
        assert audit.passed
        assert audit.a_fit == pytest.approx(1.0)
        assert audit.M == pytest.approx(2.0, abs=1e-6)
        assert not audit.symmetrized

    def test_odd_component_rejected(self):
        grid = Grid1D(4.0, 64)
        z = grid.points
        spec = PotentialSpec(kind="tabulated", table=tuple(z ** 2 + 0.5 * z))
        with pytest.raises(InvariantViolation, match="odd"):
            build_potential(spec, grid)

    def test_negative_values_rejected(self):
        grid = Grid1D(4.0, 64)
        spec = PotentialSpec(kind="tabulated", table=tuple(grid.points ** 2 - 1.0))
        with pytest.raises(InvariantViolation) as info:
            build_potential(spec, grid)
        assert info.value.name == "nonnegativity"

    def test_table_length_checked(self):
        with pytest.raises(SizeMismatchError):
            build_potential(PotentialSpec(kind="tabulated", table=(1.0, 2.0)), Grid1D(4.0, 64))

    def test_gaussian_bump(self):
        grid = Grid1D(4.0, 64)
        spec = PotentialSpec(kind="perturbed_harmonic", a=1.0, v1_amplitude=3.0, v1_width=0.5)
        pot = build_potential(spec, grid)
        assert pot.values[32] == pytest.approx(3.0)
        np.testing.assert_array_equal(pot.values[grid.mirror][1:], pot.values[1:])


class TestSolveEigs:
    def test_harmonic_closed_form(self, harmonic_basis):
        exact = (2 * np.arange(16) + 1) * np.sqrt(2.0)
        np.testing.assert_allclose(harmonic_basis.E, exact, rtol=1e-7)

    def test_zero_field_closed_form(self, fine_grid):
        pot = build_potential(PotentialSpec(kind="harmonic", a=1.0, B=0.0), fine_grid)
        basis = solve_eigs(pot, 0.0, fine_grid, 10)
        np.testing.assert_allclose(basis.E, 2 * np.arange(10) + 1, rtol=1e-7)

    def test_orthonormal_with_parity(self, harmonic_basis):
        grid = harmonic_basis.grid
        gram = harmonic_basis.chi @ harmonic_basis.chi.T * grid.dz
        np.testing.assert_allclose(gram, np.eye(16), atol=1e-10)
        for p, row in enumerate(harmonic_basis.chi):
            np.testing.assert_allclose(row[grid.mirror][1:], (-1) ** p * row[1:], atol=1e-8)
        assert not harmonic_basis.chi[:, 0].any()

    def test_rightmost_lobe_positive(self, harmonic_basis):
        for row in harmonic_basis.chi:
            big = np.flatnonzero(np.abs(row) > 1e-3 * np.abs(row).max())
            assert row[big[-1]] > 0
        a = coupling_coeffs(harmonic_basis)
        assert np.all(np.diag(a, 1) > 0)

    def test_eigenvectors_of_discrete_operator(self, harmonic_basis):
        applied = h_z_apply(harmonic_basis, harmonic_basis.chi)
        np.testing.assert_allclose(applied, harmonic_basis.E[:, None] * harmonic_basis.chi,
                                   atol=1e-8 * harmonic_basis.E[-1])

    def test_three_point_stencil_is_less_accurate(self, harmonic_potential, fine_grid):
        E2, _ = dirichlet_eigenpairs(harmonic_potential.values, 1.0, fine_grid, 4, stencil_order=2)
        E8, _ = dirichlet_eigenpairs(harmonic_potential.values, 1.0, fine_grid, 4, stencil_order=8)
        exact = (2 * np.arange(4) + 1) * np.sqrt(2.0)
        assert np.max(np.abs(E8 - exact)) < np.max(np.abs(E2 - exact))
        np.testing.assert_allclose(E2, exact, rtol=1e-3)

    def test_resolution_margin(self, harmonic_potential, fine_grid):
        with pytest.raises(ResolutionError, match="n_z/4"):
            solve_eigs(harmonic_potential, 1.0, fine_grid, fine_grid.n // 4 + 1)

    def test_weyl_bound_holds_for_quartic(self, fine_grid):
        pot = build_potential(PotentialSpec(kind="power", a=1.0, s=4.0, B=1.0), fine_grid)
        basis = solve_eigs(pot, 1.0, fine_grid, 8)
        assert np.all(basis.E >= np.sqrt(2.0) * (2 * np.arange(8) + 1))
        assert check_gap(basis).passed


class TestModeCount:
    def test_harmonic_ratio(self, harmonic_potential, fine_grid):
        # (2p + 1) >= 20 first at p = 10
        assert select_mode_count(harmonic_potential, 1.0, fine_grid, 20.0) == 11

    def test_min_modes_raises_the_count(self, harmonic_potential, fine_grid):
        assert select_mode_count(harmonic_potential, 1.0, fine_grid, 20.0, min_modes=14) == 14

    def test_displaced_datum_needs_more_modes(self, harmonic_potential, fine_grid):
        z = fine_grid.points
        # ground state moved to z = 2: Poisson weights with mean 2 sqrt(2)
        profile = np.exp(-np.sqrt(2.0) * (z - 2.0) ** 2 / 2)
        P = select_mode_count(harmonic_potential, 1.0, fine_grid, 20.0, profile=profile)
        assert P > 11
        chi = solve_eigs(harmonic_potential, 1.0, fine_grid, P).chi
        kept = np.sum((chi @ profile * fine_grid.dz) ** 2)
        assert 1.0 - kept / (np.sum(profile ** 2) * fine_grid.dz) < 1e-10

    def test_unresolvable_datum(self, harmonic_potential, fine_grid):
        z = fine_grid.points
        profile = np.sign(z) * np.exp(-z ** 2 / 8)
        with pytest.raises(ResolutionError, match="beyond the first"):
            select_mode_count(harmonic_potential, 1.0, fine_grid, 20.0, profile=profile)

    def test_gap_fit_for_equal_spacing(self, harmonic_basis):
        report = check_gap(harmonic_basis)
        np.testing.assert_allclose(report.gaps, 2 * np.sqrt(2.0), rtol=1e-6)
        assert report.n0 < 1e-6
        assert report.C == pytest.approx(2 * np.sqrt(2.0), rel=1e-6)

    def test_eigs_frame(self, harmonic_basis):
        frame = eigs_frame(harmonic_basis)
        assert list(frame.columns) == ["p", "E_p", "gap"]
        assert len(frame) == 16
        assert np.isnan(frame["gap"].iloc[-1])


class TestCache:
    def test_second_solve_hits_cache(self, tmp_path, harmonic_potential, fine_grid):
        first = cached_eigs(harmonic_potential, 1.0, fine_grid, 6, cache_dir=tmp_path)
        assert len(list(tmp_path.glob("eigs-*.cyqw"))) == 1
        second = cached_eigs(harmonic_potential, 1.0, fine_grid, 6, cache_dir=tmp_path)
        np.testing.assert_array_equal(first.E, second.E)
        np.testing.assert_array_equal(first.chi, second.chi)
        assert first.fingerprint == second.fingerprint


class TestProjection:
    def test_synth_then_project_is_identity(self, plane, desk_basis, rng):
        coeffs = rng.normal(size=(*plane.shape, desk_basis.P)).astype(complex)
        modes = Field3D(coeffs, plane, desk_basis.grid, representation="mode", basis=desk_basis)
        back = project_modes(synth_modes(modes), desk_basis)
        np.testing.assert_allclose(back.values, coeffs, atol=1e-10)
        assert back.tail_fraction < 1e-12

    def test_separable_state_has_no_tail(self, plane, desk_basis):
        modes = project_modes(separable_field(plane, desk_basis, [0.0, 1.0]), desk_basis)
        assert modes.tail_fraction < 1e-10
        assert np.abs(modes.values[:, :, 0]).max() < 1e-10

    def test_negligible_field_reports_no_tail(self, plane, desk_basis, caplog):
        tiny = separable_field(plane, desk_basis, [1.0])
        tiny = tiny.with_values(tiny.values * 1e-16 + 1e-18)
        with caplog.at_level(logging.WARNING, logger="cyclomass.confinement"):
            modes = project_modes(tiny, desk_basis)
        assert modes.tail_fraction == 0.0
        assert "tail" not in caplog.text

    def test_truncation_keeps_leading_modes(self, harmonic_basis):
        small = truncate_basis(harmonic_basis, 5)
        assert small.P == 5
        np.testing.assert_array_equal(small.E, harmonic_basis.E[:5])
        assert small.fingerprint != harmonic_basis.fingerprint
        with pytest.raises(SizeMismatchError):
            truncate_basis(harmonic_basis, 20)
