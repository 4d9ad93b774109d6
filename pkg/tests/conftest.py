import numpy as np
import pytest

from cyclomass.confinement import PotentialSpec, build_potential, solve_eigs
from cyclomass.limit import ModeSet
from cyclomass.spectral import Field3D, Grid1D, Grid2D


def gaussian_xy(grid2d: Grid2D, sigma: float = 1.0, kx: float = 0.0) -> np.ndarray:
    """L2-normalized 2D Gaussian."""
    x, y = grid2d.mesh()
    return (np.pi * sigma ** 2) ** -0.5 * np.exp(-(x ** 2 + y ** 2) / (2 * sigma ** 2) + 1j * kx * x)


def separable_field(grid2d: Grid2D, basis, amps, sigma: float = 1.0) -> Field3D:
    """g(x, y) sum_p amps_p chi_p(z) on the z grid."""
    profile = np.asarray(amps, dtype=float) @ basis.chi[: len(amps)]
    values = gaussian_xy(grid2d, sigma)[:, :, None] * profile[None, None, :]
    return Field3D(values.astype(complex), grid2d, basis.grid)


@pytest.fixture(scope="session")
def fine_grid():
    return Grid1D(8.0, 512)


@pytest.fixture(scope="session")
def harmonic_potential(fine_grid):
    return build_potential(PotentialSpec(kind="harmonic", a=1.0, B=1.0), fine_grid)


@pytest.fixture(scope="session")
def harmonic_basis(harmonic_potential, fine_grid):
    """a = 1, B = 1: E_p = (2p + 1) sqrt(2), alpha_p = 1/2."""
    return solve_eigs(harmonic_potential, 1.0, fine_grid, 16)


@pytest.fixture(scope="session")
def desk_grid():
    return Grid1D(6.0, 256)


@pytest.fixture(scope="session")
def desk_potential(desk_grid):
    return build_potential(PotentialSpec(kind="harmonic", a=1.0, B=1.0), desk_grid)


@pytest.fixture(scope="session")
def desk_basis(desk_potential, desk_grid):
    return solve_eigs(desk_potential, 1.0, desk_grid, 8)


@pytest.fixture(scope="session")
def plane():
    return Grid2D(16.0, 16.0, 32, 32)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def random_modes(rng, plane, desk_basis):
    values = rng.normal(size=(desk_basis.P, *plane.shape)) + 1j * rng.normal(size=(desk_basis.P, *plane.shape))
    return ModeSet(values, plane, desk_basis)
