"""
Full 3D model i d_t Psi = (1/eps^2) H_eps Psi - d_y^2 Psi + V Psi.

The linear part is diagonal in (xi, eta, shifted z-mode): for each
x-wavevector xi the z-operator -d_z^2 + Vc + (eps xi + B z)^2 is solved
once, so the stiff 1/eps^2 phase is applied exactly.
"""
import logging
from concurrent.futures import Executor
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from . import data
from .confinement import EigenBasis, SampledPotential, dirichlet_eigenpairs
from .errors import CyclomassError, EigenSolveError, SizeMismatchError, TruncationError
from .limit import ModeSet, approximate_field
from .poisson import KernelMultiplier, integrated_density, potential_2d, potential_3d
from .spectral import MASS_FLOOR, Field3D, Grid1D, Grid2D, bm_norm, ensure_finite, l2_norm

logger = logging.getLogger(__name__)

NONLINEARITIES = ("F1", "F0", "none")
HERMITE_TERMS = 48
WRAP_WARN_FRACTION = 1e-12


@dataclass(frozen=True)
class ShiftedBasisTable:
    eps: float
    B: float
    xi: np.ndarray
    lam: np.ndarray
    chi: np.ndarray
    grid2d: Grid2D
    grid1d: Grid1D
    max_shift: float
    fingerprint: str

    @property
    def P_z(self) -> int:
        return self.lam.shape[1]


@dataclass(frozen=True)
class FullEnergy:
    linear: float
    potential: float

    @property
    def total(self) -> float:
        return self.linear + self.potential


@dataclass(frozen=True)
class ErrorCurve:
    eps: float
    times: np.ndarray
    errors: np.ndarray

    @property
    def sup(self) -> float:
        return float(np.max(self.errors)) if self.errors.size else 0.0

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame({"eps": self.eps, "t": self.times, "error": self.errors})


@dataclass
class FullTrajectory:
    snapshots: List[Field3D]
    diagnostics: pd.DataFrame
    halt_reason: Optional[str] = None

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])


def shift_scale(potential: SampledPotential, B: float) -> float:
    """Center shift of the xi-column per unit eps*xi: B / (a^2 + B^2)."""
    from .confinement import weyl_constant

    a = weyl_constant(potential.values, potential.grid)
    denom = a ** 2 + B ** 2
    return B / denom if denom > 0 else 0.0


def build_shifted_table(potential: SampledPotential, B: float, eps: float, grid2d: Grid2D,
                        grid1d: Grid1D, P_z: Optional[int] = None, stencil_order: int = 8,
                        pool: Optional[Executor] = None) -> ShiftedBasisTable:
    """
    Per-xi eigenpairs of -d_z^2 + Vc + (eps xi + B z)^2. P_z=None keeps the
    whole interior basis, which makes the z transform exactly orthogonal.
    """
    if eps <= 0:
        raise CyclomassError("eps must be positive")
    if grid1d.n != potential.grid.n:
        raise SizeMismatchError("potential and z grid differ")

    xi = grid2d.xi
    z = grid1d.points
    max_shift = float(np.max(np.abs(xi))) * eps * shift_scale(potential, B)
    if max_shift >= grid1d.half_length:
        raise TruncationError(
            f"well center moves by {max_shift:.3g} for the largest xi, beyond the box half-length "
            f"{grid1d.half_length:g}"
        )
    if max_shift > 0.5 * grid1d.half_length:
        logger.warning("shifted wells reach %.3g of L_z at the largest xi", max_shift / grid1d.half_length)

    def solve(k: float):
        shifted = potential.values + 2.0 * eps * k * B * z + (eps * k) ** 2
        try:
            return dirichlet_eigenpairs(shifted, B, grid1d, P_z, stencil_order)
        except EigenSolveError as e:
            raise EigenSolveError(f"xi={k:g}: {e}") from e

    columns = list(pool.map(solve, xi)) if pool is not None else [solve(k) for k in xi]
    lam = np.stack([c[0] for c in columns])
    chi = np.stack([c[1] for c in columns])
    fp = data.fingerprint(lam, potential=potential.fingerprint, B=B, eps=eps,
                          nx=grid2d.n_x, Lx=grid2d.length_x, order=stencil_order)
    return ShiftedBasisTable(eps, B, xi, lam, chi, grid2d, grid1d, max_shift, fp)


def _to_modes(spec: np.ndarray, table: ShiftedBasisTable) -> np.ndarray:
    # (n_x, n_y, n_z) @ (n_x, n_z, P_z) -> (n_x, n_y, P_z)
    return np.matmul(spec, table.chi.transpose(0, 2, 1)) * table.grid1d.dz


def _from_modes(coeffs: np.ndarray, table: ShiftedBasisTable) -> np.ndarray:
    return np.matmul(coeffs, table.chi)


class FullStepper:
    """
    Strang step: exact half linear flow, nonlinear phase exp(-i dt V),
    exact half linear flow.
    """

    def __init__(self, table: ShiftedBasisTable, dt: float, nonlinearity: str = "F1",
                 kernel: Optional[KernelMultiplier] = None):
        if nonlinearity not in NONLINEARITIES:
            raise CyclomassError(f"nonlinearity must be one of {NONLINEARITIES}")
        if nonlinearity != "none" and kernel is None:
            raise CyclomassError(f"nonlinearity {nonlinearity} needs a kernel")
        if nonlinearity == "F1" and kernel.eps != table.eps:
            raise SizeMismatchError(f"kernel eps={kernel.eps} differs from table eps={table.eps}")
        eta = table.grid2d.eta
        symbol = table.lam[:, None, :] / table.eps ** 2 + eta[None, :, None] ** 2
        self.half = np.exp(-0.5j * dt * symbol)
        self.table = table
        self.dt = dt
        self.nonlinearity = nonlinearity
        self.kernel = kernel
        self.steps = 0

    def linear(self, values: np.ndarray, phases: np.ndarray) -> np.ndarray:
        spec = np.fft.fft2(values, axes=(0, 1), norm="ortho")
        coeffs = _to_modes(spec, self.table) * phases
        return np.fft.ifft2(_from_modes(coeffs, self.table), axes=(0, 1), norm="ortho")

    def potential(self, f: Field3D) -> np.ndarray:
        if self.nonlinearity == "F1":
            return potential_3d(f, self.kernel)
        W = potential_2d(integrated_density(f), self.kernel).values
        return np.broadcast_to(W[:, :, None], f.values.shape)

    def step(self, f: Field3D) -> Field3D:
        values = self.linear(f.values, self.half)
        if self.nonlinearity != "none":
            V = self.potential(f.with_values(values))
            values = values * np.exp(-1j * self.dt * V)
        values = self.linear(values, self.half)
        self.steps += 1
        ensure_finite(values, where="full field", step=self.steps)
        return f.with_values(values, t=f.t + self.dt)


def step_full(f: Field3D, table: ShiftedBasisTable, dt: float, eps: float, nonlinearity: str = "F1",
              kernel: Optional[KernelMultiplier] = None) -> Field3D:
    if eps != table.eps:
        raise SizeMismatchError(f"table built for eps={table.eps}")
    return FullStepper(table, dt, nonlinearity, kernel).step(f)


def full_energy(f: Field3D, table: ShiftedBasisTable, nonlinearity: str = "F1",
                kernel: Optional[KernelMultiplier] = None) -> FullEnergy:
    """
    (1/eps^2)<H_eps Psi, Psi> + ||d_y Psi||^2 + 1/2 int V |Psi|^2, with the
    quadratic part read off the shifted-mode expansion.
    """
    spec = np.fft.fft2(f.values, axes=(0, 1), norm="ortho")
    power = np.abs(_to_modes(spec, table)) ** 2
    symbol = table.lam[:, None, :] / table.eps ** 2 + table.grid2d.eta[None, :, None] ** 2
    linear = float(np.sum(symbol * power) * table.grid2d.dA)

    pot = 0.0
    if nonlinearity == "F1":
        pot = 0.5 * float(np.sum(potential_3d(f, kernel) * np.abs(f.values) ** 2) * f.cell_volume)
    elif nonlinearity == "F0":
        rho = integrated_density(f)
        pot = 0.5 * float(np.sum(potential_2d(rho, kernel).values * rho) * f.grid2d.dA)
    return FullEnergy(linear, pot)


def eps_norm_b1(f: Field3D, table: ShiftedBasisTable) -> float:
    """
    (||u||^2 + ||grad_xy u||^2 + <H_eps u, u>)^(1/2), read off the shifted
    modes. Tends to the B^1 norm as eps -> 0.
    """
    spec = np.fft.fft2(f.values, axes=(0, 1), norm="ortho")
    power = np.abs(_to_modes(spec, table)) ** 2
    k2 = table.grid2d.k_squared[:, :, None]
    weight = 1.0 + k2 + table.lam[:, None, :]
    return float(np.sqrt(np.sum(weight * power) * table.grid2d.dA))


def evolve_full(psi0: Field3D, table: ShiftedBasisTable, dt: float, T: float,
                nonlinearity: str = "F1", kernel: Optional[KernelMultiplier] = None,
                snapshot_times: Optional[Sequence[float]] = None, diag_every: int = 0) -> FullTrajectory:
    """
    March to T, keeping snapshots at `snapshot_times` (rounded to steps).
    Mass and energy are logged every `diag_every` steps.
    """
    n_steps = int(round(T / dt))
    if n_steps < 1 or abs(n_steps * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"T={T} is not a whole number of steps dt={dt}")
    marks = {0, n_steps}
    for ts in (() if snapshot_times is None else snapshot_times):
        marks.add(int(round(ts / dt)))

    stepper = FullStepper(table, dt, nonlinearity, kernel)

    def diag(f: Field3D, n: int) -> dict:
        e = full_energy(f, table, nonlinearity, kernel)
        return {"step": n, "t": f.t, "mass": l2_norm(f) ** 2, "energy": e.total,
                "linear": e.linear, "potential": e.potential}

    f = psi0
    snapshots = [psi0]
    rows = [diag(psi0, 0)] if diag_every else []
    halt = None
    for n in range(1, n_steps + 1):
        try:
            f = stepper.step(f)
        except CyclomassError as e:
            halt = str(e)
            logger.error("full run halted at step %d: %s", n, e)
            break
        f = f.with_values(f.values, t=n * dt)
        if n in marks:
            snapshots.append(f)
        if diag_every and (n % diag_every == 0 or n == n_steps):
            rows.append(diag(f, n))
    return FullTrajectory(snapshots, pd.DataFrame(rows), halt)


def wrapped_fraction(spec: np.ndarray, z: np.ndarray, s: np.ndarray, half_length: float) -> float:
    """
    Share of |u|^2 (x-Fourier columns, grid z) sitting where a shift by s
    moves it across z = +-half_length. The periodic z shift wraps it around.
    """
    zs = z[None, :] + s[:, None]
    crossing = (zs < -half_length) | (zs > half_length)
    power = np.abs(spec) ** 2
    total = float(np.sum(power))
    if total < MASS_FLOOR:
        return 0.0
    return float(np.sum(power * crossing[:, None, :]) / total)


def theta_shift(f: Field3D, shift_per_xi: float, inverse: bool = False) -> Field3D:
    """
    In x-Fourier space move each column along z by s = shift_per_xi * xi:
    u(xi, z) -> u(xi, z - s), or u(xi, z + s) for the inverse. The shift is
    a Fourier-interpolated phase along z.
    """
    spec = np.fft.fft(f.values, axis=0, norm="ortho")
    zeta = 2.0 * np.pi * np.fft.fftfreq(f.grid1d.n, d=f.grid1d.dz)
    s = shift_per_xi * f.grid2d.xi * (-1.0 if inverse else 1.0)
    L = f.grid1d.half_length
    if np.max(np.abs(s)) >= L:
        raise TruncationError("z-shift exceeds the box")
    wrapped = wrapped_fraction(spec, f.grid1d.points, s, L)
    if wrapped > WRAP_WARN_FRACTION:
        logger.warning("z-shift carries %.3e of the mass past the wall; enlarge L_z", wrapped)
    zspec = np.fft.fft(spec, axis=2)
    zspec *= np.exp(-1j * zeta[None, None, :] * s[:, None, None])
    shifted = np.fft.ifft(zspec, axis=2)
    return f.with_values(np.fft.ifft(shifted, axis=0, norm="ortho"))


def hermite_functions(n_terms: int, z: np.ndarray, K: float) -> np.ndarray:
    """
    Orthonormal eigenfunctions of -d_z^2 + K z^2, by the normalized
    three-term recurrence in q = K^(1/4) z.
    """
    q = K ** 0.25 * z
    psi = np.zeros((n_terms, z.size))
    psi[0] = np.pi ** -0.25 * np.exp(-q ** 2 / 2)
    if n_terms > 1:
        psi[1] = np.sqrt(2.0) * q * psi[0]
    for n in range(1, n_terms - 1):
        psi[n + 1] = np.sqrt(2.0 / (n + 1)) * q * psi[n] - np.sqrt(n / (n + 1)) * psi[n - 1]
    return K ** 0.125 * psi


def analytic_harmonic_benchmark(psi0: Field3D, a: float, B: float, eps: float,
                                times: Sequence[float], n_terms: int = HERMITE_TERMS) -> List[Field3D]:
    """
    Exact linear solution for Vc = a^2 z^2: shift by Theta, evolve the
    Hermite coefficients with exp(-i t (E_n/eps^2 + xi^2 a^2/K + eta^2)),
    shift back. K = a^2 + B^2.
    """
    K = a ** 2 + B ** 2
    per_xi = B * eps / K
    grid1d = psi0.grid1d
    herm = hermite_functions(n_terms, grid1d.points, K)
    E = np.sqrt(K) * (2 * np.arange(n_terms) + 1)

    shifted = theta_shift(psi0, per_xi)
    spec = np.fft.fft2(shifted.values, axes=(0, 1), norm="ortho")
    coeffs = spec @ herm.T * grid1d.dz
    xi, eta = psi0.grid2d.wave_mesh()

    out = []
    for t in times:
        slow = np.exp(-1j * t * (xi ** 2 * a ** 2 / K + eta ** 2))
        fast = np.exp(-1j * t * E / eps ** 2)
        evolved = (coeffs * slow[:, :, None] * fast[None, None, :]) @ herm
        field = psi0.with_values(np.fft.ifft2(evolved, axes=(0, 1), norm="ortho"), t=float(t))
        out.append(theta_shift(field, per_xi, inverse=True))
    return out


def theorem_error(full_traj: Sequence[Field3D], limit_traj: Sequence[ModeSet], basis: EigenBasis,
                  eps: float, time_tol: float = 1e-9) -> ErrorCurve:
    """e(t) = ||Psi_eps(t) - Psi_app(t)||_{B^1} at matched snapshot times."""
    if len(full_traj) != len(limit_traj):
        raise SizeMismatchError(f"{len(full_traj)} full snapshots vs {len(limit_traj)} limit snapshots")
    times, errors = [], []
    for f, m in zip(full_traj, limit_traj):
        if abs(f.t - m.t) > time_tol * max(1.0, abs(f.t)):
            raise SizeMismatchError(f"snapshot times differ: {f.t} vs {m.t}")
        diff = f - approximate_field(m, eps)
        times.append(f.t)
        errors.append(bm_norm(diff, 1, basis).value)
    return ErrorCurve(eps, np.asarray(times), np.asarray(errors))
