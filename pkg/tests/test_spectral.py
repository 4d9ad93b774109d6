import numpy as np
import pytest

from cyclomass.errors import CyclomassError, NonFiniteFieldError, SizeMismatchError
from cyclomass.spectral import (
    Field3D,
    Grid1D,
    Grid2D,
    bm_norm,
    energy_norm_sq,
    ensure_finite,
    field_from_function,
    fourier_xy,
    l2_norm,
)

from .conftest import separable_field


class TestGrids:
    def test_z_grid_is_mirror_symmetric(self):
        g = Grid1D(4.0, 64)
        assert g.points[0] == -4.0
        np.testing.assert_array_equal(g.points[g.mirror][1:], -g.points[1:])
        assert g.mirror[0] == 0

    def test_odd_z_count_rejected(self):
        with pytest.raises(SizeMismatchError, match="even"):
            Grid1D(4.0, 63)

    def test_plane_needs_powers_of_two(self):
        with pytest.raises(SizeMismatchError, match="power of two"):
            Grid2D(10.0, 10.0, 48, 32)

    def test_plane_wavenumbers(self):
        g = Grid2D(2 * np.pi, 4 * np.pi, 8, 16)
        np.testing.assert_allclose(g.xi[:4], [0, 1, 2, 3])
        np.testing.assert_allclose(g.eta[:3], [0, 0.5, 1.0])
        assert g.dA == pytest.approx(np.pi / 4 * np.pi / 4)


class TestField3D:
    def test_shape_checked(self, plane, desk_grid):
        with pytest.raises(SizeMismatchError):
            Field3D(np.zeros((32, 16, desk_grid.n), dtype=complex), plane, desk_grid)

    def test_mode_representation_needs_basis(self, plane, desk_grid):
        with pytest.raises(CyclomassError, match="basis"):
            Field3D(np.zeros((32, 32, 4), dtype=complex), plane, desk_grid, representation="mode")

    def test_subtraction_requires_same_representation(self, plane, desk_basis):
        f = separable_field(plane, desk_basis, [1.0])
        with pytest.raises(SizeMismatchError):
            f - fourier_xy(f, "forward")


class TestNorms:
    def test_l2_of_normalized_gaussian(self, plane, desk_basis):
        f = separable_field(plane, desk_basis, [0.6, 0.8])
        assert l2_norm(f) == pytest.approx(1.0, rel=1e-9)

    def test_fourier_transform_is_unitary(self, plane, desk_basis):
        f = separable_field(plane, desk_basis, [1.0])
        spec = fourier_xy(f, "forward")
        assert spec.xy_space == "fourier"
        assert l2_norm(spec) == pytest.approx(l2_norm(f), rel=1e-12)
        np.testing.assert_allclose(fourier_xy(spec, "inverse").values, f.values, atol=1e-13)

    def test_b0_is_l2(self, plane, desk_basis):
        f = separable_field(plane, desk_basis, [1.0, 0.5])
        assert bm_norm(f, 0, desk_basis).value == l2_norm(f)

    def test_b1_of_separable_state(self, plane, desk_basis):
        # ||g||^2 + ||grad g||^2 + E_0 with ||grad g||^2 = 1 for sigma = 1
        f = separable_field(plane, desk_basis, [1.0])
        res = bm_norm(f, 1, desk_basis)
        assert res.value ** 2 == pytest.approx(2.0 + desk_basis.E[0], rel=1e-7)
        assert not res.tail_warning

    def test_b1_matches_grid_energy_norm(self, plane, desk_grid, desk_potential, desk_basis):
        f = field_from_function(
            lambda x, y, z: np.exp(-(x ** 2 + y ** 2) / 2 - z ** 2 / 1.5), plane, desk_grid)
        b1 = bm_norm(f, 1, desk_basis).value ** 2
        direct = energy_norm_sq(f, desk_potential.values, 1.0)
        assert b1 == pytest.approx(direct, rel=0.05)

    def test_tail_is_flagged(self, plane, desk_grid, desk_basis):
        f = field_from_function(lambda x, y, z: np.exp(-(x ** 2 + y ** 2)) * (np.abs(z) < 2), plane, desk_grid)
        res = bm_norm(f, 1, desk_basis)
        assert res.tail_warning
        assert res.tail_fraction > 1e-6

    @pytest.mark.parametrize("m", [-1, 9, 1.5])
    def test_sobolev_index_range(self, plane, desk_basis, m):
        f = separable_field(plane, desk_basis, [1.0])
        with pytest.raises(CyclomassError, match="Sobolev index"):
            bm_norm(f, m, desk_basis)


class TestEnsureFinite:
    def test_reports_first_bad_index(self):
        values = np.zeros((2, 3, 4))
        values[1, 2, 3] = np.nan
        with pytest.raises(NonFiniteFieldError) as info:
            ensure_finite(values, step=7)
        assert info.value.index == (1, 2, 3)
        assert info.value.step == 7


def test_sampled_field_is_zero_on_the_wall(plane, desk_grid):
    f = field_from_function(lambda x, y, z: np.ones_like(x), plane, desk_grid)
    assert not np.any(f.values[:, :, 0])
    assert np.all(f.values[:, :, 1:] == 1.0)
