import numpy as np
import pytest

from cyclomass.confinement import PotentialSpec, build_potential, solve_eigs
from cyclomass.errors import DegeneracyError, SizeMismatchError
from cyclomass.subband import (
    apply_A0,
    average_oscillatory_a,
    coercivity_audit,
    coupling_coeffs,
    coupling_data,
    coupling_sum_rule,
    dispersion_check,
    effective_mass_coeffs,
    effmass_frame,
    oscillatory_a,
    oscillatory_A,
    second_order_average,
)


@pytest.fixture(scope="module")
def steep_basis(fine_grid):
    """a = 2, B = 1: alpha_p = 4/5."""
    pot = build_potential(PotentialSpec(kind="harmonic", a=2.0, B=1.0), fine_grid)
    return solve_eigs(pot, 1.0, fine_grid, 16)


class TestCouplings:
    def test_harmonic_closed_form(self, harmonic_basis):
        a = coupling_coeffs(harmonic_basis)
        p = np.arange(15)
        np.testing.assert_allclose(np.diag(a, 1), np.sqrt(2.0 * (p + 1)) / 2 ** 0.25, rtol=1e-7)
        np.testing.assert_allclose(a, a.T, atol=0)
        far = np.abs(np.subtract.outer(np.arange(16), np.arange(16))) != 1
        assert np.abs(a[far]).max() < 1e-8

    def test_vanishing_field(self, fine_grid):
        pot = build_potential(PotentialSpec(kind="harmonic", a=1.0, B=0.0), fine_grid)
        basis = solve_eigs(pot, 0.0, fine_grid, 6)
        cd = coupling_data(basis, trust_margin=0)
        assert not cd.a.any()
        assert np.all(cd.alpha == 1.0)

    def test_sum_rule_saturated_by_neighbours(self, harmonic_basis):
        a = coupling_coeffs(harmonic_basis)
        rule = coupling_sum_rule(harmonic_basis)
        np.testing.assert_allclose((a ** 2).sum(axis=1)[:-1], rule[:-1], rtol=1e-8)

    def test_diagonal_vanishes_for_non_harmonic(self, fine_grid):
        pot = build_potential(
            PotentialSpec(kind="perturbed_harmonic", a=1.0, B=1.0, v1_amplitude=2.0, v1_width=0.7), fine_grid)
        a = coupling_coeffs(solve_eigs(pot, 1.0, fine_grid, 10))
        assert np.abs(np.diag(a)).max() <= 1e-10 * np.abs(a).max()


class TestEffectiveMass:
    @pytest.mark.parametrize("basis_name, expected", [("harmonic_basis", 0.5), ("steep_basis", 0.8)])
    def test_harmonic_alpha(self, request, basis_name, expected):
        cd = coupling_data(request.getfixturevalue(basis_name))
        assert cd.trusted.sum() == 12
        np.testing.assert_allclose(cd.alpha[cd.trusted], expected, atol=1e-7)
        assert cd.alpha_min == pytest.approx(expected, abs=1e-7)
        assert cd.alpha_max == pytest.approx(expected, abs=1e-7)

    def test_two_forms_agree(self, harmonic_basis):
        cd = coupling_data(harmonic_basis)
        np.testing.assert_allclose(cd.alpha, cd.alpha_alt, atol=1e-12)

    def test_tail_bound(self, harmonic_basis):
        cd = coupling_data(harmonic_basis)
        assert np.all(cd.tail_bound[:-2] < 1e-8)
        assert np.isinf(cd.tail_bound[-1])

    def test_quartic_alpha_is_mode_dependent(self, fine_grid):
        pot = build_potential(PotentialSpec(kind="power", a=1.0, s=4.0, B=1.0), fine_grid)
        cd = coupling_data(solve_eigs(pot, 1.0, fine_grid, 16))
        trusted = cd.alpha[cd.trusted]
        assert np.all(np.isfinite(trusted))
        assert trusted[0] < 1.0
        assert np.ptp(trusted) > 1e-3
        assert cd.growth_constant > 0

    def test_degenerate_levels_rejected(self):
        with pytest.raises(DegeneracyError):
            effective_mass_coeffs(np.zeros((3, 3)), np.array([1.0, 2.0, 2.0]))

    def test_frame_and_audit(self, harmonic_basis):
        cd = coupling_data(harmonic_basis)
        frame = effmass_frame(harmonic_basis, cd)
        assert list(frame.columns) == ["p", "E_p", "alpha_p", "tail_bound_p", "trusted"]
        assert coercivity_audit(cd)["coercive"]


class TestAveraging:
    def test_averaged_composition_gives_alpha(self, harmonic_basis):
        cd = coupling_data(harmonic_basis)
        avg = second_order_average(cd.a, harmonic_basis.E, cd.alpha)
        assert avg.discrepancy.max() < 1e-12
        assert avg.off_diagonal < 1e-12

    def test_primitive_differentiates_to_a(self, random_modes):
        basis = random_modes.basis
        a = coupling_coeffs(basis)
        tau, h = 0.37, 1e-4
        plus = oscillatory_A(tau + h, random_modes, a, basis.E).values
        minus = oscillatory_A(tau - h, random_modes, a, basis.E).values
        exact = oscillatory_a(tau, random_modes, a, basis.E).values
        np.testing.assert_allclose((plus - minus) / (2 * h), exact, atol=1e-5 * np.abs(exact).max())
        assert not oscillatory_A(0.0, random_modes, a, basis.E).values.any()

    def test_average_over_a_period_vanishes(self, random_modes):
        basis = random_modes.basis
        a = coupling_coeffs(basis)
        period = 2 * np.pi / (basis.E[1] - basis.E[0])
        avg = average_oscillatory_a(period, random_modes, a, basis.E).values
        scale = np.abs(oscillatory_a(0.0, random_modes, a, basis.E).values).max()
        assert np.abs(avg).max() < 1e-6 * scale

    def test_A0_on_plane_wave(self, random_modes):
        grid = random_modes.grid2d
        k = grid.xi[3]
        x, _ = grid.mesh()
        wave = np.broadcast_to(np.exp(1j * k * x), random_modes.values.shape).copy()
        alpha = np.linspace(0.2, 1.0, random_modes.P)
        out = apply_A0(random_modes.with_values(wave), alpha).values
        np.testing.assert_allclose(out, alpha[:, None, None] * k ** 2 * wave, atol=1e-10)


class TestDispersion:
    def test_harmonic_band_curvature(self, harmonic_potential, harmonic_basis):
        cd = coupling_data(harmonic_basis)
        probe = dispersion_check(harmonic_potential, 1e-2, [1.0, 2.0], harmonic_basis, cd.alpha)
        np.testing.assert_allclose(probe.curvature[:, :8], 0.5, atol=1e-4)
        frame = probe.frame()
        assert len(frame) == 2 * harmonic_basis.P
        assert list(frame.columns) == ["xi", "p", "lambda", "curvature"]

    def test_zero_probe_rejected(self, harmonic_potential, harmonic_basis):
        with pytest.raises(SizeMismatchError, match="nonzero"):
            dispersion_check(harmonic_potential, 1e-2, [0.0], harmonic_basis, np.ones(16))
