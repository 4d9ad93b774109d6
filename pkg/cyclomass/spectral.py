"""
Grids, complex fields, Fourier transforms in the transport plane and the
confinement-adapted Sobolev norms.
"""
import logging
from dataclasses import dataclass, replace
from functools import cached_property
from typing import TYPE_CHECKING, Optional, Tuple

import numpy as np

from .errors import CyclomassError, NonFiniteFieldError, SizeMismatchError

if TYPE_CHECKING:
    from .confinement import EigenBasis

logger = logging.getLogger(__name__)

MAX_SOBOLEV_INDEX = 8
TAIL_WARN_FRACTION = 1e-6
# below this L2 mass a tail ratio is roundoff
MASS_FLOOR = 1e-24

REPRESENTATIONS = ("grid", "mode")
XY_SPACES = ("physical", "fourier")


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Grid1D:
    """
    Uniform grid on [-L, L) with an even point count.

    z_j = (j - n/2) dz, so index 0 sits on the wall z = -L, where the
    Dirichlet condition holds, and index j mirrors to (n - j) % n.
    """
    half_length: float
    n: int

    def __post_init__(self):
        if self.n < 8 or self.n % 2:
            raise SizeMismatchError(f"Grid1D needs an even point count >= 8, got {self.n}")
        if not self.half_length > 0:
            raise SizeMismatchError("Grid1D half_length must be positive")

    @property
    def dz(self) -> float:
        return 2.0 * self.half_length / self.n

    @cached_property
    def points(self) -> np.ndarray:
        # integer offsets keep z_j = -z_{n-j} bit-exact
        return (np.arange(self.n) - self.n // 2) * self.dz

    @cached_property
    def mirror(self) -> np.ndarray:
        return (self.n - np.arange(self.n)) % self.n

    @property
    def interior(self) -> slice:
        return slice(1, None)


@dataclass(frozen=True)
class Grid2D:
    """Periodic (x, y) box centered on the origin."""
    length_x: float
    length_y: float
    n_x: int
    n_y: int

    def __post_init__(self):
        for name, n in (("n_x", self.n_x), ("n_y", self.n_y)):
            if not _is_power_of_two(n):
                raise SizeMismatchError(f"{name}={n} is not a power of two")

    @property
    def dx(self) -> float:
        return self.length_x / self.n_x

    @property
    def dy(self) -> float:
        return self.length_y / self.n_y

    @property
    def dA(self) -> float:
        return self.dx * self.dy

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n_x, self.n_y)

    @cached_property
    def x(self) -> np.ndarray:
        return (np.arange(self.n_x) - self.n_x // 2) * self.dx

    @cached_property
    def y(self) -> np.ndarray:
        return (np.arange(self.n_y) - self.n_y // 2) * self.dy

    @cached_property
    def xi(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.n_x, d=self.dx)

    @cached_property
    def eta(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.n_y, d=self.dy)

    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="ij")

    def wave_mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.xi, self.eta, indexing="ij")

    @cached_property
    def k_squared(self) -> np.ndarray:
        xi, eta = self.wave_mesh()
        return xi ** 2 + eta ** 2


@dataclass(frozen=True)
class Field3D:
    """
    Full wavefunction, either sampled in z ("grid") or expanded on an
    eigenbasis ("mode"). The last axis is z or the mode index.
    """
    values: np.ndarray
    grid2d: Grid2D
    grid1d: Grid1D
    representation: str = "grid"
    basis: Optional["EigenBasis"] = None
    xy_space: str = "physical"
    tail_fraction: float = 0.0
    t: float = 0.0

    def __post_init__(self):
        if self.representation not in REPRESENTATIONS:
            raise CyclomassError(f"unknown representation '{self.representation}'")
        if self.xy_space not in XY_SPACES:
            raise CyclomassError(f"unknown xy space '{self.xy_space}'")
        if self.values.ndim != 3 or self.values.shape[:2] != self.grid2d.shape:
            raise SizeMismatchError(
                f"field shape {self.values.shape} does not match grid {self.grid2d.shape}"
            )
        third = self.grid1d.n if self.representation == "grid" else getattr(self.basis, "P", None)
        if self.representation == "mode" and self.basis is None:
            raise CyclomassError("mode representation needs a basis")
        if self.values.shape[2] != third:
            raise SizeMismatchError(
                f"third axis has {self.values.shape[2]} entries, expected {third}"
            )

    @property
    def cell_volume(self) -> float:
        if self.representation == "grid":
            return self.grid2d.dA * self.grid1d.dz
        return self.grid2d.dA

    def with_values(self, values: np.ndarray, **changes) -> "Field3D":
        return replace(self, values=values, **changes)

    def __sub__(self, other: "Field3D") -> "Field3D":
        if (self.representation, self.xy_space) != (other.representation, other.xy_space):
            raise SizeMismatchError("cannot subtract fields in different representations")
        if self.values.shape != other.values.shape:
            raise SizeMismatchError(f"{self.values.shape} vs {other.values.shape}")
        return self.with_values(self.values - other.values)


@dataclass(frozen=True)
class NormResult:
    value: float
    tail_fraction: float = 0.0
    tail_warning: bool = False

    def __float__(self) -> float:
        return self.value


def ensure_finite(values: np.ndarray, where: str = "field", step: Optional[int] = None) -> None:
    finite = np.isfinite(values)
    if not finite.all():
        bad = np.argwhere(~finite)[0]
        raise NonFiniteFieldError(tuple(int(i) for i in bad), where=where, step=step)


def l2_norm(f: Field3D) -> float:
    """
    Riemann-sum L2 norm. The ortho FFT convention makes it the same in
    either xy space.
    """
    ensure_finite(f.values)
    return float(np.sqrt(np.sum(np.abs(f.values) ** 2) * f.cell_volume))


def fourier_xy(f: Field3D, direction: str = "forward") -> Field3D:
    """
    Unitary FFT over (x, y); the representation of the third axis is kept.
    """
    if f.values.shape[:2] != f.grid2d.shape:
        raise SizeMismatchError("field does not match its Grid2D")
    if direction == "forward":
        if f.xy_space == "fourier":
            return f
        return f.with_values(np.fft.fft2(f.values, axes=(0, 1), norm="ortho"), xy_space="fourier")
    if direction == "inverse":
        if f.xy_space == "physical":
            return f
        return f.with_values(np.fft.ifft2(f.values, axes=(0, 1), norm="ortho"), xy_space="physical")
    raise CyclomassError(f"unknown direction '{direction}'")


def check_sobolev_index(m: int) -> int:
    if int(m) != m or m < 0 or m > MAX_SOBOLEV_INDEX:
        raise CyclomassError(f"Sobolev index m={m} outside supported range 0..{MAX_SOBOLEV_INDEX}")
    return int(m)


def bm_norm(f: Field3D, m: int, basis: "EigenBasis") -> NormResult:
    """
    B^m norm: sum over modes and wavevectors of (1 + |k|^{2m} + E_p^m)|f_hat|^2.

    m = 0 is taken as plain L2. A grid field is projected on `basis`
    first and the mass it loses is reported as the tail.
    """
    m = check_sobolev_index(m)
    if m == 0:
        return NormResult(l2_norm(f))

    from .confinement import project_modes

    ensure_finite(f.values)
    modes = f if f.representation == "mode" else project_modes(fourier_xy(f, "inverse"), basis)
    if modes.basis is not basis and modes.basis.fingerprint != basis.fingerprint:
        raise SizeMismatchError("field is expanded on a different basis")

    spectrum = fourier_xy(modes, "forward").values
    weight = 1.0 + f.grid2d.k_squared[:, :, None] ** m + basis.E[None, None, :] ** m
    value = float(np.sqrt(np.sum(weight * np.abs(spectrum) ** 2) * f.grid2d.dA))

    tail = modes.tail_fraction
    warn = tail > TAIL_WARN_FRACTION
    if warn:
        logger.warning("B^%d norm: %.3e of the L2 mass lies outside the basis", m, tail)
    return NormResult(value, tail, warn)


def energy_norm_sq(f: Field3D, vc: np.ndarray, B: float) -> float:
    """
    ||f||^2_{H^1} + ||sqrt(Vc) f||^2 + B^2 ||z f||^2 evaluated on the grid,
    the closed expression of the squared B^1 norm.
    """
    if f.representation != "grid":
        raise CyclomassError("energy_norm_sq needs a grid-z field")
    f = fourier_xy(f, "forward")
    ensure_finite(f.values)
    dV = f.cell_volume
    z = f.grid1d.points
    dens = np.abs(f.values) ** 2

    mass = dens.sum() * dV
    grad_xy = np.sum(f.grid2d.k_squared[:, :, None] * dens) * dV
    # the wall node is zero, so the forward difference closes the quadratic form
    padded = np.concatenate([f.values, np.zeros_like(f.values[:, :, :1])], axis=2)
    grad_z = np.sum(np.abs(np.diff(padded, axis=2)) ** 2) * dV / f.grid1d.dz ** 2
    confining = np.sum((vc + B ** 2 * z ** 2)[None, None, :] * dens) * dV
    return float(mass + grad_xy + grad_z + confining)


def field_from_function(func, grid2d: Grid2D, grid1d: Grid1D, t: float = 0.0) -> Field3D:
    """Sample func(x, y, z) on the tensor grid, zeroing the wall node."""
    x, y, z = np.meshgrid(grid2d.x, grid2d.y, grid1d.points, indexing="ij")
    values = np.asarray(func(x, y, z), dtype=complex)
    values[:, :, 0] = 0.0
    return Field3D(values, grid2d, grid1d, t=t)
