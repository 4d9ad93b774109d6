"""
Free-space Poisson kernels by zero-padded FFT convolution.

kernel2d: 1/(4 pi sqrt(x^2 + y^2)), the limit interaction.
kernel3d: 1/(4 pi sqrt(x^2 + y^2 + eps^2 z^2)), the anisotropic full one.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
from numpy.polynomial.legendre import leggauss
from scipy.special import erf

from .errors import CyclomassError, InvariantViolation, MemoryBudgetError, SizeMismatchError
from .spectral import Field3D, Grid1D, Grid2D, bm_norm, ensure_finite

logger = logging.getLogger(__name__)

PADDING = 2
POINT_CAP = 2 ** 24
BOUNDARY_CELLS = 2
BOUNDARY_WARN = 1e-6
EVENNESS_RTOL = 1e-10
Z_QUADRATURE = 16


@dataclass(frozen=True)
class KernelMultiplier:
    table: np.ndarray
    tag: str
    grid2d: Grid2D
    grid1d: Optional[Grid1D]
    eps: Optional[float]
    origin_value: float
    padding: int = PADDING


@dataclass(frozen=True)
class SelfConsistentPotential:
    values: np.ndarray
    boundary_fraction: float
    truncation_suspect: bool


@dataclass(frozen=True)
class KernelGapReport:
    eps: np.ndarray
    gap: np.ndarray
    normalized: np.ndarray
    slope: float
    monotone: bool
    u_b2: float

    def frame(self) -> pd.DataFrame:
        table = pd.DataFrame({"eps": self.eps, "gap": self.gap, "normalized_gap": self.normalized})
        footer = pd.DataFrame({"eps": ["slope"], "gap": [self.slope], "normalized_gap": [self.slope]})
        return pd.concat([table, footer], ignore_index=True)


def _displacements(n: int, h: float) -> np.ndarray:
    i = np.arange(PADDING * n)
    return np.where(i < n, i, i - PADDING * n) * h


def cell_average(a: float, b: float, c: Union[float, np.ndarray] = 0.0):
    """
    Mean of 1/sqrt(x^2 + y^2 + c^2) over [-a, a] x [-b, b].
    """
    c = np.abs(np.asarray(c, dtype=float))
    R = np.sqrt(a ** 2 + b ** 2 + c ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        edge = np.where(c > 0, c * np.arctan2(a * b, c * R), 0.0)
    quarter = (a * np.log((b + R) / np.sqrt(a ** 2 + c ** 2))
               + b * np.log((a + R) / np.sqrt(b ** 2 + c ** 2)) - edge)
    return quarter / (a * b)


def _check_budget(points: int, cap: int) -> None:
    if points > cap:
        raise MemoryBudgetError(points, cap)


def build_kernel(grid2d: Grid2D, grid1d: Optional[Grid1D] = None, eps: Optional[float] = None,
                 point_cap: int = POINT_CAP) -> KernelMultiplier:
    """
    Fourier multiplier of the kernel on the 2x padded grid.

    Off-axis cells are point samples. Cells on the z axis are averaged over
    the whole cell: exact in xy, Gauss-Legendre in z. Their eps -> 0 limit
    is the 2D origin value, so kernel3d tends to kernel2d slice by slice.
    """
    hx, hy = grid2d.dx, grid2d.dy
    dx = _displacements(grid2d.n_x, hx)[:, None]
    dy = _displacements(grid2d.n_y, hy)[None, :]
    r2 = dx ** 2 + dy ** 2

    if grid1d is None:
        _check_budget(PADDING ** 2 * grid2d.n_x * grid2d.n_y, point_cap)
        with np.errstate(divide="ignore"):
            K = 1.0 / np.sqrt(r2)
        K[0, 0] = cell_average(hx / 2, hy / 2)
        K /= 4.0 * np.pi
        table = np.fft.fft2(K) * grid2d.dA
        tag = "kernel2d"
    else:
        if eps is None or eps <= 0:
            raise CyclomassError("kernel3d needs eps > 0")
        _check_budget(PADDING ** 3 * grid2d.n_x * grid2d.n_y * grid1d.n, point_cap)
        dz = _displacements(grid1d.n, grid1d.dz)
        c = eps * np.abs(dz)
        with np.errstate(divide="ignore"):
            K = 1.0 / np.sqrt(r2[:, :, None] + c[None, None, :] ** 2)
        nodes, weights = leggauss(Z_QUADRATURE)
        column = eps * (dz[None, :] + nodes[:, None] * grid1d.dz / 2)
        K[0, 0, :] = 0.5 * weights @ cell_average(hx / 2, hy / 2, column)
        K /= 4.0 * np.pi
        table = np.fft.fftn(K) * grid2d.dA * grid1d.dz
        tag = f"kernel3d(eps={eps:g})"

    imag = float(np.max(np.abs(table.imag)))
    if imag > EVENNESS_RTOL * float(np.max(np.abs(table.real))):
        raise InvariantViolation("kernel-evenness", f"multiplier has imaginary part {imag:.3e}")
    origin = float(K.flat[0])
    return KernelMultiplier(np.ascontiguousarray(table.real), tag, grid2d, grid1d, eps, origin)


def convolve(density: np.ndarray, kernel: KernelMultiplier) -> np.ndarray:
    """Linear (non-periodic) convolution of a real density with the kernel."""
    shape = density.shape
    padded = tuple(PADDING * n for n in shape)
    if padded != kernel.table.shape:
        raise SizeMismatchError(f"density {shape} does not fit kernel {kernel.tag}")
    axes = tuple(range(density.ndim))
    spec = np.fft.fftn(density, s=padded, axes=axes)
    out = np.fft.ifftn(spec * kernel.table, axes=axes).real
    return out[tuple(slice(0, n) for n in shape)]


def _boundary_fraction(density: np.ndarray) -> float:
    total = float(density.sum())
    if total == 0.0:
        return 0.0
    inner = density[BOUNDARY_CELLS:-BOUNDARY_CELLS, BOUNDARY_CELLS:-BOUNDARY_CELLS]
    return max(0.0, 1.0 - float(inner.sum()) / total)


def potential_2d(density: np.ndarray, kernel: KernelMultiplier) -> SelfConsistentPotential:
    if kernel.grid1d is not None:
        raise CyclomassError(f"{kernel.tag} is not the 2D kernel")
    ensure_finite(density, where="density")
    if not np.any(density):
        return SelfConsistentPotential(np.zeros(density.shape), 0.0, False)
    W = convolve(density, kernel)
    frac = _boundary_fraction(density)
    suspect = frac > BOUNDARY_WARN
    if suspect:
        logger.warning("%.3e of the density sits within %d cells of the box edge", frac, BOUNDARY_CELLS)
    return SelfConsistentPotential(W, frac, suspect)


def selfconsistent_W(m, kernel2d: KernelMultiplier) -> SelfConsistentPotential:
    """W = kernel2d * sum_p |phi_p|^2 for a ModeSet."""
    return potential_2d(np.sum(np.abs(m.values) ** 2, axis=0), kernel2d)


def integrated_density(f) -> np.ndarray:
    """<|u|^2>: the z-integrated (or mode-summed) density on the xy grid."""
    if isinstance(f, Field3D):
        if f.xy_space != "physical":
            raise CyclomassError("density needs a field in physical xy space")
        dens = np.abs(f.values) ** 2
        return dens.sum(axis=2) * (f.grid1d.dz if f.representation == "grid" else 1.0)
    return np.sum(np.abs(f.values) ** 2, axis=0)


def apply_F0(f, kernel2d: KernelMultiplier):
    """
    F_0(u) = (kernel2d * <|u|^2>) u. The same W multiplies every z slice or
    mode.
    """
    W = potential_2d(integrated_density(f), kernel2d).values
    if isinstance(f, Field3D):
        return f.with_values(W[:, :, None] * f.values)
    return f.with_values(W[None, :, :] * f.values)


def potential_3d(f: Field3D, kernel3d: KernelMultiplier) -> np.ndarray:
    if f.representation != "grid" or f.xy_space != "physical":
        raise CyclomassError("F_1 needs a grid-z field in physical space")
    if kernel3d.grid1d is None:
        raise CyclomassError(f"{kernel3d.tag} is not a 3D kernel")
    ensure_finite(f.values)
    return convolve(np.abs(f.values) ** 2, kernel3d)


def apply_F1(f: Field3D, eps: float, kernel3d: KernelMultiplier) -> Field3D:
    """F_1(u) = (kernel3d * |u|^2) u."""
    if kernel3d.eps != eps:
        raise SizeMismatchError(f"kernel built for eps={kernel3d.eps}, asked for eps={eps}")
    return f.with_values(potential_3d(f, kernel3d) * f.values)


def direct_potential_2d(density: np.ndarray, grid2d: Grid2D) -> np.ndarray:
    """O(N^2) direct sum with the same origin-cell rule, an oracle for small grids."""
    x, y = grid2d.mesh()
    px, py = x.ravel(), y.ravel()
    origin = cell_average(grid2d.dx / 2, grid2d.dy / 2)
    rho = density.ravel()
    out = np.empty_like(rho)
    for i in range(rho.size):
        r = np.hypot(px[i] - px, py[i] - py)
        with np.errstate(divide="ignore"):
            inv = np.where(r > 0, 1.0 / np.where(r > 0, r, 1.0), origin)
        out[i] = np.sum(inv * rho)
    return out.reshape(density.shape) * grid2d.dA / (4.0 * np.pi)


def gaussian_potential_3d(r: np.ndarray, sigma: float, mass: float = 1.0) -> np.ndarray:
    """Potential of a spherical Gaussian charge of given mass, kernel 1/(4 pi r)."""
    r = np.asarray(r, dtype=float)
    center = mass * np.sqrt(2.0 / np.pi) / (4.0 * np.pi * sigma)
    with np.errstate(divide="ignore", invalid="ignore"):
        far = mass * erf(r / (np.sqrt(2.0) * sigma)) / (4.0 * np.pi * r)
    return np.where(r > 0, far, center)


def kernel_gap_estimate(u: Field3D, eps_list: Sequence[float], basis, kernel2d: KernelMultiplier,
                        point_cap: int = POINT_CAP) -> KernelGapReport:
    """
    ||F_1(u) - F_0(u)||_{B^1} for each eps, with a log-log slope fit and the
    gap normalized by ||u||^3_{B^2}.
    """
    eps = np.asarray(sorted(eps_list, reverse=True), dtype=float)
    u_b2 = bm_norm(u, 2, basis).value
    f0 = apply_F0(u, kernel2d)
    gaps = []
    for e in eps:
        k3 = build_kernel(u.grid2d, u.grid1d, float(e), point_cap)
        gaps.append(bm_norm(apply_F1(u, float(e), k3) - f0, 1, basis).value)
        logger.debug("kernel gap eps=%g: %.6e", e, gaps[-1])
    gaps = np.asarray(gaps)

    slope = float("nan")
    if eps.size >= 2 and np.all(gaps > 0):
        slope = float(np.polyfit(np.log(eps), np.log(gaps), 1)[0])
    monotone = bool(np.all(np.diff(gaps) < 0))
    normalized = gaps / u_b2 ** 3 if u_b2 > 0 else np.zeros_like(gaps)
    return KernelGapReport(eps, gaps, normalized, slope, monotone, u_b2)
