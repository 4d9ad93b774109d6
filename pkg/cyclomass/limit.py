"""
Limit model: P coupled 2D Schrödinger equations

    i d_t phi_p = -alpha_p d_x^2 phi_p - d_y^2 phi_p + W phi_p,
    W = 1/(4 pi |x|) * sum_p |phi_p|^2,

integrated by Strang splitting.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, List, Optional

import numpy as np
import pandas as pd

from .errors import NegativeAlphaError, NonFiniteFieldError, SizeMismatchError, TruncationError
from .spectral import Field3D, Grid2D, ensure_finite

if TYPE_CHECKING:
    from .confinement import EigenBasis
    from .data import SnapshotWriter
    from .poisson import KernelMultiplier

logger = logging.getLogger(__name__)

BLOWUP_FACTOR = 1e3
TAIL_THRESHOLD = 1e-6


@dataclass(frozen=True)
class ModeSet:
    """phi_p(x, y) for p < P, stored as a (P, n_x, n_y) array."""
    values: np.ndarray
    grid2d: Grid2D
    basis: "EigenBasis"
    t: float = 0.0

    def __post_init__(self):
        if self.values.ndim != 3 or self.values.shape[1:] != self.grid2d.shape:
            raise SizeMismatchError(f"mode array {self.values.shape} does not match {self.grid2d.shape}")
        if self.values.shape[0] != self.basis.P:
            raise SizeMismatchError(f"{self.values.shape[0]} modes for a basis of {self.basis.P}")

    @property
    def P(self) -> int:
        return self.values.shape[0]

    @property
    def masses(self) -> np.ndarray:
        return np.sum(np.abs(self.values) ** 2, axis=(1, 2)) * self.grid2d.dA

    @property
    def mass(self) -> float:
        return float(self.masses.sum())

    def with_values(self, values: np.ndarray, **changes) -> "ModeSet":
        return replace(self, values=values, **changes)

    def to_field(self) -> Field3D:
        return Field3D(np.moveaxis(self.values, 0, -1), self.grid2d, self.basis.grid,
                       representation="mode", basis=self.basis, t=self.t)


@dataclass(frozen=True)
class LimitEnergies:
    conf: float
    tr: float
    kinetic_x: float
    kinetic_y: float
    potential: float


@dataclass
class LimitTrajectory:
    snapshots: List[ModeSet]
    diagnostics: pd.DataFrame
    halt_reason: Optional[str] = None
    steps: int = 0
    outputs: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    @property
    def final(self) -> ModeSet:
        return self.snapshots[-1]


def init_modes(psi0: Field3D, basis: "EigenBasis", tail_threshold: float = TAIL_THRESHOLD) -> ModeSet:
    """phi_p(0) = <Psi_0 chi_p>; refuses data the basis cannot carry."""
    from .confinement import project_modes
    from .spectral import fourier_xy

    if psi0.representation == "grid":
        modes = project_modes(fourier_xy(psi0, "inverse"), basis, tail_threshold)
    else:
        modes = fourier_xy(psi0, "inverse")
    if modes.tail_fraction > tail_threshold:
        raise TruncationError(
            f"{modes.tail_fraction:.3e} of the initial mass lies beyond P={basis.P} modes, increase P"
        )
    return ModeSet(np.ascontiguousarray(np.moveaxis(modes.values, -1, 0)), psi0.grid2d, basis, psi0.t)


class LimitStepper:
    """
    Strang step with precomputed half kinetic phases
    exp(-i dt/2 (alpha_p xi^2 + eta^2)). W is evaluated on the state left
    by the first kinetic half step.
    """

    def __init__(self, grid2d: Grid2D, alpha: np.ndarray, dt: float,
                 kernel: Optional["KernelMultiplier"] = None):
        if dt <= 0:
            raise ValueError("dt must be positive")
        xi, eta = grid2d.wave_mesh()
        symbol = np.asarray(alpha)[:, None, None] * xi[None] ** 2 + eta[None] ** 2
        self.half = np.exp(-0.5j * dt * symbol)
        self.dt = dt
        self.kernel = kernel
        self.steps = 0

    def _kinetic(self, values: np.ndarray) -> np.ndarray:
        spec = np.fft.fft2(values, axes=(1, 2), norm="ortho")
        return np.fft.ifft2(spec * self.half, axes=(1, 2), norm="ortho")

    def step(self, m: ModeSet) -> ModeSet:
        from .poisson import selfconsistent_W

        if self.half.shape[0] != m.P:
            raise SizeMismatchError(f"stepper built for {self.half.shape[0]} modes, got {m.P}")
        values = self._kinetic(m.values)
        if self.kernel is not None:
            W = selfconsistent_W(m.with_values(values), self.kernel).values
            values = values * np.exp(-1j * self.dt * W)[None]
        values = self._kinetic(values)
        self.steps += 1
        try:
            ensure_finite(values, where="mode set", step=self.steps)
        except NonFiniteFieldError:
            logger.error("non-finite modes at step %d", self.steps)
            raise
        return m.with_values(values, t=m.t + self.dt)


def step_limit(m: ModeSet, dt: float, alpha: np.ndarray,
               kernel2d: Optional["KernelMultiplier"] = None) -> ModeSet:
    return LimitStepper(m.grid2d, alpha, dt, kernel2d).step(m)


def energies(m: ModeSet, alpha: np.ndarray, kernel2d: Optional["KernelMultiplier"] = None) -> LimitEnergies:
    """
    E_conf = sum_p E_p mu_p and
    E_tr = sum_p alpha_p ||d_x phi_p||^2 + sum_p ||d_y phi_p||^2 + 1/2 int W rho.
    """
    from .poisson import selfconsistent_W

    dA = m.grid2d.dA
    conf = float(np.sum(m.basis.E * m.masses))
    xi, eta = m.grid2d.wave_mesh()
    power = np.abs(np.fft.fft2(m.values, axes=(1, 2), norm="ortho")) ** 2
    kx = np.sum(np.asarray(alpha)[:, None, None] * xi[None] ** 2 * power) * dA
    ky = np.sum(eta[None] ** 2 * power) * dA
    pot = 0.0
    if kernel2d is not None:
        W = selfconsistent_W(m, kernel2d).values
        pot = 0.5 * float(np.sum(W * np.sum(np.abs(m.values) ** 2, axis=0)) * dA)
    return LimitEnergies(conf, float(kx + ky + pot), float(kx), float(ky), pot)


def modeset_bm_norm(m: ModeSet, order: int = 1) -> float:
    """B^m norm of sum_p phi_p chi_p, read directly off the modes."""
    power = np.abs(np.fft.fft2(m.values, axes=(1, 2), norm="ortho")) ** 2
    weight = 1.0 + m.grid2d.k_squared[None] ** order + m.basis.E[:, None, None] ** order
    return float(np.sqrt(np.sum(weight * power) * m.grid2d.dA))


def _diag_row(m: ModeSet, alpha: np.ndarray, kernel2d, step: int) -> dict:
    e = energies(m, alpha, kernel2d)
    row = {"step": step, "t": m.t, "mass": m.mass, "E_conf": e.conf, "E_tr": e.tr,
           "kinetic_x": e.kinetic_x, "kinetic_y": e.kinetic_y, "potential": e.potential,
           "bm1": modeset_bm_norm(m, 1)}
    for p, mu in enumerate(m.masses):
        row[f"mass_{p}"] = float(mu)
    return row


def check_alpha(alpha: np.ndarray, override: bool = False) -> None:
    bad = np.flatnonzero(np.asarray(alpha) <= 0)
    if bad.size and not override:
        raise NegativeAlphaError(
            f"alpha_p <= 0 for p in {bad.tolist()}; the x-kinetic term is not coercive "
            "(pass the negative-alpha override to run anyway)"
        )
    if bad.size:
        logger.warning("running with non-positive alpha_p for p in %s", bad.tolist())


def evolve_limit(m0: ModeSet, alpha: np.ndarray, dt: float, T: float,
                 kernel2d: Optional["KernelMultiplier"] = None, snapshot_every: int = 0,
                 diag_every: int = 1, override_negative_alpha: bool = False,
                 blowup_factor: float = BLOWUP_FACTOR,
                 writer: Optional["SnapshotWriter"] = None) -> LimitTrajectory:
    """
    March from m0 to T. Snapshots every `snapshot_every` steps (0 keeps the
    endpoints only); halts early on non-finite values or when the B^1 norm
    grows past `blowup_factor` times its initial value.
    """
    check_alpha(alpha, override_negative_alpha)
    n_steps = int(round(T / dt))
    if n_steps < 1 or abs(n_steps * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"T={T} is not a whole number of steps dt={dt}")

    stepper = LimitStepper(m0.grid2d, alpha, dt, kernel2d)
    bm0 = modeset_bm_norm(m0, 1)
    snapshots = [m0]
    rows = [_diag_row(m0, alpha, kernel2d, 0)]
    halt = None
    if writer is not None:
        writer.put("limit-000000.cyqw", m0.to_field())

    m = m0
    for n in range(1, n_steps + 1):
        try:
            m = stepper.step(m)
        except NonFiniteFieldError as e:
            halt = str(e)
            break
        m = replace(m, t=n * dt)

        last = n == n_steps
        if last or (diag_every and n % diag_every == 0):
            rows.append(_diag_row(m, alpha, kernel2d, n))
            if bm0 > 0 and rows[-1]["bm1"] > blowup_factor * bm0:
                halt = f"possible T_max reached: B^1 norm grew past {blowup_factor:g}x at t={m.t:.6g}"
                logger.warning(halt)
                snapshots.append(m)
                break
        if last or (snapshot_every and n % snapshot_every == 0):
            snapshots.append(m)
            if writer is not None:
                writer.put(f"limit-{n:06d}.cyqw", m.to_field())

    return LimitTrajectory(snapshots, pd.DataFrame(rows), halt, stepper.steps)


def filtering_phases(E: np.ndarray, t: float, eps: float) -> np.ndarray:
    """exp(-i t E_p / eps^2), reduced mod 2 pi in extended precision."""
    theta = np.longdouble(t) * np.asarray(E, dtype=np.longdouble) / np.longdouble(eps) ** 2
    two_pi = 2 * np.longdouble("3.14159265358979323846264338327950288")
    reduced = np.fmod(theta, two_pi).astype(float)
    return np.exp(-1j * reduced)


def approximate_field(m: ModeSet, eps: float) -> Field3D:
    """Psi_app = sum_p exp(-i t E_p / eps^2) phi_p chi_p on the z grid."""
    from .confinement import synth_modes

    phased = m.values * filtering_phases(m.basis.E, m.t, eps)[:, None, None]
    return synth_modes(m.with_values(phased).to_field())
