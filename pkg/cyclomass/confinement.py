"""
Confinement potentials and the 1D operator H_z = -d^2/dz^2 + B^2 z^2 + Vc(z).
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Literal, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.linalg import LinAlgError, eig_banded, eigh_tridiagonal

from . import data
from .errors import (
    CyclomassError,
    DegeneracyError,
    EigenSolveError,
    InvariantViolation,
    ResolutionError,
    SizeMismatchError,
)
from .spectral import MASS_FLOOR, TAIL_WARN_FRACTION, Field3D, Grid1D

logger = logging.getLogger(__name__)

SYMMETRY_FLAG = 1e-12
ODD_REJECT = 1e-6
ORTHONORMALITY_TOL = 1e-10
PARITY_TOL = 1e-8
WEYL_RTOL = 1e-6
RAYLEIGH_RTOL = 1e-8
DEGENERACY_RTOL = 1e-10
DATUM_TAIL_TOL = 1e-10

# central second-derivative weights c_0, c_1, ... by accuracy order
STENCILS = {
    2: np.array([-2.0, 1.0]),
    4: np.array([-5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0]),
    6: np.array([-49.0 / 18.0, 3.0 / 2.0, -3.0 / 20.0, 1.0 / 90.0]),
    8: np.array([-205.0 / 72.0, 8.0 / 5.0, -1.0 / 5.0, 8.0 / 315.0, -1.0 / 560.0]),
}


class PotentialSpec(BaseModel):
    """
    Confinement potential family plus the magnetic field strength.

    power:              a^2 z^2 (1 + z^2)^((s-2)/2), quadratic core, |z|^s tails
    perturbed_harmonic: a^2 z^2 + V1, V1 from `table` or a Gaussian bump
    tabulated:          `table` sampled on the z grid
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["harmonic", "power", "perturbed_harmonic", "tabulated"] = "harmonic"
    a: float = Field(1.0, ge=0.0)
    s: float = Field(4.0, ge=2.0)
    B: float = 1.0
    table: Optional[Tuple[float, ...]] = None
    v1_amplitude: float = 0.0
    v1_width: float = Field(1.0, gt=0.0)

    @model_validator(mode="after")
    def _table_needed(self):
        if self.kind == "tabulated" and self.table is None:
            raise ValueError("tabulated potential needs a table")
        return self


@dataclass(frozen=True)
class GrowthAudit:
    a_fit: float
    C: float
    M: float
    passed: bool
    symmetrized: bool
    correction: float
    h2_ratio: float


@dataclass(frozen=True)
class SampledPotential:
    values: np.ndarray
    grid: Grid1D
    spec: PotentialSpec
    audit: GrowthAudit
    fingerprint: str

    @property
    def B(self) -> float:
        return self.spec.B


@dataclass(frozen=True)
class EigenBasis:
    P: int
    E: np.ndarray
    chi: np.ndarray
    grid: Grid1D
    B: float
    vc: np.ndarray
    fingerprint: str
    potential_fingerprint: str
    stencil_order: int = 8
    a_weyl: float = 0.0


@dataclass(frozen=True)
class GapReport:
    gaps: np.ndarray
    n0: float
    C: float
    passed: bool
    low_confidence: bool


def _raw_samples(spec: PotentialSpec, grid: Grid1D) -> np.ndarray:
    z = grid.points
    if spec.kind == "harmonic":
        return spec.a ** 2 * z ** 2
    if spec.kind == "power":
        return spec.a ** 2 * z ** 2 * (1.0 + z ** 2) ** ((spec.s - 2.0) / 2.0)

    table = None if spec.table is None else np.asarray(spec.table, dtype=float)
    if table is not None and table.shape != (grid.n,):
        raise SizeMismatchError(f"potential table has {table.size} samples, grid has {grid.n}")
    if spec.kind == "perturbed_harmonic":
        v1 = table if table is not None else spec.v1_amplitude * np.exp(-(z / spec.v1_width) ** 2)
        return spec.a ** 2 * z ** 2 + v1
    return table


def _growth_audit(v: np.ndarray, grid: Grid1D, symmetrized: bool, correction: float) -> GrowthAudit:
    z = grid.points
    outer = np.abs(z) >= 1.0
    za, va = np.abs(z[outer]), v[outer]
    a_fit = float(np.sqrt(max(np.min(va / za ** 2), 0.0)))
    positive = va > 0
    if positive.sum() >= 2:
        M, logC = np.polyfit(np.log(za[positive]), np.log(va[positive]), 1)
        C = float(np.max(va / za ** M))
    else:
        M, C = float("nan"), float("nan")
    passed = bool(a_fit > 0 and np.isfinite(M) and np.all(va <= C * za ** M * (1 + 1e-12)))

    # report-only: derivative ratio |V'|/(1 + V), bounded for admissible Vc
    dv = np.gradient(v, grid.dz)
    h2 = float(np.max(np.abs(dv[outer]) / (1.0 + va)))
    return GrowthAudit(a_fit, C, float(M), passed, symmetrized, correction, h2)


def build_potential(spec: PotentialSpec, grid: Grid1D) -> SampledPotential:
    """
    Sample Vc on the grid, enforce evenness and nonnegativity, audit growth.
    """
    raw = np.asarray(_raw_samples(spec, grid), dtype=float)
    inner = grid.interior
    scale = max(float(np.max(np.abs(raw[inner]))), np.finfo(float).tiny)

    odd_part = 0.5 * (raw - raw[grid.mirror])
    if np.max(np.abs(odd_part[inner])) > ODD_REJECT * scale:
        raise InvariantViolation("evenness", "potential has an odd component, Vc must be even")

    values = 0.5 * (raw + raw[grid.mirror])
    values[0] = raw[0]
    correction = float(np.max(np.abs(values - raw)))
    symmetrized = correction > SYMMETRY_FLAG * scale
    if symmetrized:
        logger.warning("potential symmetrized, max correction %.3e", correction)

    if np.min(values) < -SYMMETRY_FLAG * scale:
        raise InvariantViolation("nonnegativity", f"min Vc = {np.min(values):.3e} < 0")

    audit = _growth_audit(values, grid, symmetrized, correction)
    if not audit.passed:
        logger.warning("growth audit failed: a=%.3g C=%.3g M=%.3g", audit.a_fit, audit.C, audit.M)

    fp = data.fingerprint(values, L=grid.half_length, n=grid.n, kind=spec.kind)
    return SampledPotential(values, grid, spec, audit, fp)


def _band(vc: np.ndarray, B: float, grid: Grid1D, order: int) -> np.ndarray:
    """Lower band storage of the interior matrix."""
    if order not in STENCILS:
        raise CyclomassError(f"stencil order {order} not in {sorted(STENCILS)}")
    z = grid.points[grid.interior]
    c = STENCILS[order]
    n = z.size
    band = np.zeros((c.size, n))
    band[0] = -c[0] / grid.dz ** 2 + B ** 2 * z ** 2 + vc[grid.interior]
    for k in range(1, c.size):
        band[k, : n - k] = -c[k] / grid.dz ** 2
    return band


def _apply_band(band: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = band[0] * v
    n = v.size
    for k in range(1, band.shape[0]):
        out[k:] += band[k, : n - k] * v[: n - k]
        out[: n - k] += band[k, : n - k] * v[k:]
    return out


def _normalize_signs(chi: np.ndarray) -> np.ndarray:
    # rightmost lobe positive, the Hermite-function convention
    for row in chi:
        big = np.flatnonzero(np.abs(row) > 1e-3 * np.max(np.abs(row)))
        if big.size and row[big[-1]] < 0:
            row *= -1.0
    return chi


def dirichlet_eigenpairs(vc: np.ndarray, B: float, grid: Grid1D, P: Optional[int],
                         stencil_order: int = 8) -> Tuple[np.ndarray, np.ndarray]:
    """
    Lowest P eigenpairs (all of them when P is None) of the discretized H_z
    with Dirichlet walls. No parity or Weyl checks, so the potential need
    not be even. chi is P x n_z with a zero wall node.
    """
    band = _band(np.asarray(vc, dtype=float), B, grid, stencil_order)
    n = band.shape[1]
    select, rng = ("a", None) if P is None else ("i", (0, P - 1))
    try:
        if stencil_order == 2:
            E, v = eigh_tridiagonal(band[0], band[1, :-1], select=select, select_range=rng)
        else:
            E, v = eig_banded(band, lower=True, select=select, select_range=rng)
    except (LinAlgError, ValueError) as e:
        raise EigenSolveError(f"banded eigensolve of size {n} failed: {e}") from e

    if not np.all(np.isfinite(E)):
        raise EigenSolveError("eigensolver returned non-finite eigenvalues")
    chi = np.zeros((E.size, grid.n))
    chi[:, 1:] = v.T / np.sqrt(grid.dz)
    return E, _normalize_signs(chi)


def _verify_basis(E: np.ndarray, chi: np.ndarray, band: np.ndarray, grid: Grid1D,
                  a_weyl: float, B: float) -> None:
    P = E.size
    gram = chi @ chi.T * grid.dz
    err = float(np.max(np.abs(gram - np.eye(P))))
    if err > ORTHONORMALITY_TOL:
        raise InvariantViolation("orthonormality", f"max deviation {err:.3e}")

    gaps = np.diff(E)
    if np.any(gaps <= DEGENERACY_RTOL * np.abs(E[1:])):
        p = int(np.argmin(gaps))
        raise DegeneracyError(f"E_{p + 1} - E_{p} = {gaps[p]:.3e}, spectrum is not simple")

    signs = (-1.0) ** np.arange(P)
    inner = grid.interior
    parity = np.max(np.abs(chi[:, inner] - signs[:, None] * chi[:, grid.mirror][:, inner]))
    if parity > PARITY_TOL:
        raise InvariantViolation("parity", f"max |chi_p(z) - (-1)^p chi_p(-z)| = {parity:.3e}")

    weyl = np.sqrt(a_weyl ** 2 + B ** 2) * (2 * np.arange(P) + 1)
    short = weyl - E - WEYL_RTOL * np.abs(E)
    if np.any(short > 0):
        p = int(np.argmax(short))
        raise InvariantViolation("weyl", f"E_{p} = {E[p]:.10g} below bound {weyl[p]:.10g}")

    for p in range(P):
        v = chi[p, 1:]
        rayleigh = float(v @ _apply_band(band, v) * grid.dz)
        if abs(rayleigh - E[p]) > RAYLEIGH_RTOL * abs(E[p]):
            raise InvariantViolation("rayleigh", f"<H chi_{p}, chi_{p}> = {rayleigh:.12g}, E = {E[p]:.12g}")


def weyl_constant(vc: np.ndarray, grid: Grid1D) -> float:
    """Largest a with Vc >= a^2 z^2 on the grid."""
    z = grid.points
    mask = z != 0
    return float(np.sqrt(max(np.min(vc[mask] / z[mask] ** 2), 0.0)))


def solve_eigs(vc: SampledPotential, B: float, grid: Grid1D, P: int,
               stencil_order: int = 8) -> EigenBasis:
    """
    Lowest P eigenpairs of H_z, every EigenBasis invariant checked.

    stencil_order=2 is the plain 3-point tridiagonal problem; the default
    8th-order banded stencil reaches 1e-6 relative accuracy at moderate n_z.

    Signs: each chi_p has its rightmost lobe (last sample above 1e-3 of its
    peak) positive, as the Hermite functions do. For the harmonic well
    this gives a_{p,p+1} > 0. Mirror it for the leftmost-lobe convention:
    even modes agree, odd modes flip sign.
    """
    if P < 1 or P > grid.n // 4:
        raise ResolutionError(f"P={P} violates P <= n_z/4 = {grid.n // 4} (resolution safety margin)")
    values = vc.values if isinstance(vc, SampledPotential) else np.asarray(vc, dtype=float)
    pot_fp = vc.fingerprint if isinstance(vc, SampledPotential) else data.fingerprint(values)

    E, chi = dirichlet_eigenpairs(values, B, grid, P, stencil_order)
    if E.size != P:
        raise EigenSolveError(f"asked for {P} eigenpairs, solver returned {E.size}")

    a_weyl = weyl_constant(values, grid)
    _verify_basis(E, chi, _band(values, B, grid, stencil_order), grid, a_weyl, B)

    fp = data.fingerprint(E, chi, potential=pot_fp, B=B, order=stencil_order)
    logger.debug("solved %d eigenpairs, E_0=%.12g", P, E[0])
    return EigenBasis(P, E, chi, grid, B, values, fp, pot_fp, stencil_order, a_weyl)


def cached_eigs(vc: SampledPotential, B: float, grid: Grid1D, P: int, stencil_order: int = 8,
                cache_dir: Optional[Path] = None) -> EigenBasis:
    """solve_eigs backed by the eigenbasis cache, keyed by potential fingerprint."""
    if cache_dir is None:
        return solve_eigs(vc, B, grid, P, stencil_order)

    key = data.fingerprint(potential=vc.fingerprint, B=B, P=P, order=stencil_order)
    path = data.ensure_cache_dir(Path(cache_dir)) / f"eigs-{key[:16]}.cyqw"
    cached = data.read_basis(path, key)
    if cached is not None:
        E, chi = cached
        fp = data.fingerprint(E, chi, potential=vc.fingerprint, B=B, order=stencil_order)
        logger.debug("eigenbasis cache hit %s", path.name)
        return EigenBasis(P, E, chi, grid, B, vc.values, fp, vc.fingerprint, stencil_order,
                          weyl_constant(vc.values, grid))

    basis = solve_eigs(vc, B, grid, P, stencil_order)
    data.write_basis(path, basis.E, basis.chi, grid, key)
    return basis


def select_mode_count(vc: SampledPotential, B: float, grid: Grid1D, ratio: float = 20.0,
                      stencil_order: int = 8, profile: Optional[np.ndarray] = None,
                      tail_tol: float = DATUM_TAIL_TOL, min_modes: int = 1) -> int:
    """
    Smallest P with E_{P-1} >= ratio * E_0, at least min_modes, and, when a
    z `profile` of the initial datum is given, leaving less than tail_tol
    of its L2 mass outside the first P modes.
    """
    probe = min(grid.n // 4, 96)
    E, chi = dirichlet_eigenpairs(vc.values, B, grid, probe, stencil_order)
    hits = np.flatnonzero(E >= ratio * E[0])
    if not hits.size:
        raise ResolutionError(f"no eigenvalue reaches {ratio} E_0 within the first {probe} modes")
    P = max(int(hits[0]) + 1, min_modes)

    if profile is not None:
        profile = np.asarray(profile)
        total = float(np.sum(np.abs(profile) ** 2) * grid.dz)
        if total >= MASS_FLOOR:
            kept = np.cumsum(np.abs(chi @ profile * grid.dz) ** 2)
            tails = 1.0 - kept / total
            ok = np.flatnonzero(tails < tail_tol)
            if not ok.size:
                raise ResolutionError(
                    f"initial datum keeps {tails[-1]:.3e} of its mass beyond the first {probe} modes")
            P = max(P, int(ok[0]) + 1)
    if P > probe:
        raise ResolutionError(f"P={P} exceeds the {probe} modes the grid resolves")
    return P


def check_gap(basis: EigenBasis) -> GapReport:
    """
    Fit gap_p ~ C (1+p)^(-n0). n0 is clipped at 0 when gaps grow.
    """
    if basis.P < 3:
        raise SizeMismatchError("check_gap needs P >= 3")
    gaps = np.diff(basis.E)
    p = np.arange(gaps.size)
    slope, _ = np.polyfit(np.log1p(p), np.log(gaps), 1)
    n0 = max(0.0, -float(slope))
    C = float(np.min(gaps * (1.0 + p) ** n0))
    passed = bool(np.all(gaps > 0))
    return GapReport(gaps, n0, C, passed, low_confidence=gaps.size < 3)


def eigs_frame(basis: EigenBasis) -> pd.DataFrame:
    gaps = np.append(np.diff(basis.E), np.nan)
    return pd.DataFrame({"p": np.arange(basis.P), "E_p": basis.E, "gap": gaps})


def project_modes(f: Field3D, basis: EigenBasis, tail_threshold: float = TAIL_WARN_FRACTION) -> Field3D:
    """
    phi_p = <f chi_p> by quadrature. The L2 mass outside the span of the
    basis is returned as tail_fraction.
    """
    if f.representation != "grid":
        raise CyclomassError("project_modes expects a grid-z field")
    if f.grid1d.n != basis.grid.n:
        raise SizeMismatchError(f"field has n_z={f.grid1d.n}, basis has {basis.grid.n}")

    coeffs = f.values @ basis.chi.T * basis.grid.dz
    total = float(np.sum(np.abs(f.values) ** 2) * basis.grid.dz)
    kept = float(np.sum(np.abs(coeffs) ** 2))
    tail = 0.0 if total < MASS_FLOOR else max(0.0, 1.0 - kept / total)
    if tail > tail_threshold:
        logger.warning("projection on %d modes leaves %.3e of the mass in the tail", basis.P, tail)
    return f.with_values(coeffs, representation="mode", basis=basis, tail_fraction=tail)


def synth_modes(f: Field3D) -> Field3D:
    if f.representation != "mode":
        raise CyclomassError("synth_modes expects a mode-z field")
    values = f.values @ f.basis.chi
    return f.with_values(values, representation="grid", tail_fraction=0.0)


def h_z_apply(basis: EigenBasis, v: np.ndarray) -> np.ndarray:
    """Discrete H_z applied along the last axis."""
    band = _band(basis.vc, basis.B, basis.grid, basis.stencil_order)
    flat = v.reshape(-1, v.shape[-1])
    out = np.zeros_like(flat)
    for i, row in enumerate(flat):
        out[i, 1:] = _apply_band(band, row[1:])
    return out.reshape(v.shape)


def truncate_basis(basis: EigenBasis, P: int) -> EigenBasis:
    """The first P modes of a larger basis."""
    if P > basis.P:
        raise SizeMismatchError(f"cannot take {P} modes from a basis of {basis.P}")
    E, chi = basis.E[:P].copy(), basis.chi[:P].copy()
    fp = data.fingerprint(E, chi, potential=basis.potential_fingerprint, B=basis.B, order=basis.stencil_order)
    return EigenBasis(P, E, chi, basis.grid, basis.B, basis.vc, fp, basis.potential_fingerprint,
                      basis.stencil_order, basis.a_weyl)
