"""
Subband couplings a_pq = <2Bz chi_p chi_q>, cyclotron effective-mass
coefficients alpha_p and the oscillatory operators a(tau), A(tau) whose
averaged composition produces them.
"""
import logging
from concurrent.futures import Executor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from . import data
from .confinement import EigenBasis, SampledPotential, dirichlet_eigenpairs
from .errors import DegeneracyError, InvariantViolation, SizeMismatchError
from .limit import ModeSet

logger = logging.getLogger(__name__)

SYMMETRY_RTOL = 1e-12
DIAGONAL_RTOL = 1e-10
DEGENERACY_RTOL = 1e-10
TWO_FORMULA_TOL = 1e-12
RESONANCE_RTOL = 1e-9


@dataclass(frozen=True)
class CouplingData:
    a: np.ndarray
    alpha: np.ndarray
    alpha_alt: np.ndarray
    tail_bound: np.ndarray
    trusted: np.ndarray
    sum_rule: Optional[np.ndarray]
    growth_constant: float
    fingerprint: str

    @property
    def alpha_min(self) -> float:
        return float(np.min(self.alpha[self.trusted])) if self.trusted.any() else float("nan")

    @property
    def alpha_max(self) -> float:
        return float(np.max(self.alpha[self.trusted])) if self.trusted.any() else float("nan")


@dataclass(frozen=True)
class AveragedSymbol:
    alpha: np.ndarray
    discrepancy: np.ndarray
    off_diagonal: float


@dataclass(frozen=True)
class DispersionProbe:
    eps: float
    xi: np.ndarray
    lam_plus: np.ndarray
    lam_minus: np.ndarray
    lam_zero: np.ndarray
    curvature: np.ndarray
    max_deviation: float

    def frame(self) -> pd.DataFrame:
        rows = []
        for i, xi in enumerate(self.xi):
            for p in range(self.curvature.shape[1]):
                rows.append({"xi": xi, "p": p, "lambda": self.lam_plus[i, p],
                             "curvature": self.curvature[i, p]})
        return pd.DataFrame(rows)


def coupling_coeffs(basis: EigenBasis) -> np.ndarray:
    """
    a_pq = <2Bz chi_p chi_q> by quadrature, checked for symmetry and a
    vanishing diagonal.
    """
    z = basis.grid.points
    raw = 2.0 * basis.B * (basis.chi * z) @ basis.chi.T * basis.grid.dz
    scale = float(np.max(np.abs(raw)))
    if scale == 0.0:
        return np.zeros_like(raw)

    asym = float(np.max(np.abs(raw - raw.T)))
    if asym > SYMMETRY_RTOL * scale:
        raise InvariantViolation("coupling-symmetry", f"|a_pq - a_qp| = {asym:.3e}, grid asymmetry?")
    diag = float(np.max(np.abs(np.diag(raw))))
    if diag > DIAGONAL_RTOL * scale:
        raise InvariantViolation("zero-diagonal", f"max |a_pp| = {diag:.3e}")
    return 0.5 * (raw + raw.T)


def coupling_sum_rule(basis: EigenBasis) -> np.ndarray:
    """Completeness: sum over all q of a_pq^2 equals 4 B^2 <z^2 chi_p^2>."""
    z = basis.grid.points
    return 4.0 * basis.B ** 2 * np.sum(basis.chi ** 2 * z ** 2, axis=1) * basis.grid.dz


def _gap_matrix(E: np.ndarray) -> np.ndarray:
    """diff[p, q] = E_q - E_p, degeneracy checked off the diagonal."""
    diff = E[None, :] - E[:, None]
    off = ~np.eye(E.size, dtype=bool)
    scale = np.maximum(np.abs(E[None, :]), np.abs(E[:, None]))
    if np.any(np.abs(diff[off]) < DEGENERACY_RTOL * scale[off]):
        raise DegeneracyError("two eigenvalues coincide, alpha_p is undefined")
    return diff


def effective_mass_coeffs(a: np.ndarray, E: np.ndarray, sum_rule: Optional[np.ndarray] = None,
                          trust_margin: int = 4) -> CouplingData:
    """
    alpha_p = 1 - sum_{q != p} a_pq^2 / (E_q - E_p) over the computed modes.

    The sum-rule residual bounds the dropped q >= P terms:
    sum_{q >= P} a_pq^2/(E_q - E_p) <= (S_p - sum_{q<P} a_pq^2)/(E_{P-1} - E_p).
    """
    E = np.asarray(E, dtype=float)
    P = E.size
    if a.shape != (P, P):
        raise SizeMismatchError(f"a is {a.shape}, E has {P} entries")

    diff = _gap_matrix(E)
    off = ~np.eye(P, dtype=bool)
    a2 = np.where(off, a ** 2, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        forward = np.where(off, a2 / np.where(off, diff, 1.0), 0.0)
        backward = np.where(off, a2 / np.where(off, diff.T, 1.0), 0.0)
    alpha = 1.0 - forward.sum(axis=1)
    alpha_alt = 1.0 + backward.sum(axis=1)

    gap = float(np.max(np.abs(alpha - alpha_alt)))
    if gap > TWO_FORMULA_TOL:
        raise InvariantViolation("two-formula", f"alpha forms differ by {gap:.3e}")

    if sum_rule is not None:
        residual = np.maximum(0.0, sum_rule - a2.sum(axis=1))
        denom = E[-1] - E
        with np.errstate(divide="ignore"):
            tail = np.where(denom > 0, residual / np.where(denom > 0, denom, 1.0), np.inf)
    else:
        tail = np.full(P, np.nan)

    trusted = np.arange(P) <= P - 1 - trust_margin
    growth = _growth_constant(a, E)
    fp = data.fingerprint(a, E)
    return CouplingData(a, alpha, alpha_alt, tail, trusted, sum_rule, growth, fp)


def _growth_constant(a: np.ndarray, E: np.ndarray, k: int = 1) -> float:
    """Empirical C in |a_pq| <= C E_q^((k+1)/2) / E_p^(k/2), p != q."""
    if not np.any(a):
        return 0.0
    ratio = np.abs(a) * E[:, None] ** (k / 2.0) / E[None, :] ** ((k + 1) / 2.0)
    np.fill_diagonal(ratio, 0.0)
    return float(np.max(ratio))


def coupling_data(basis: EigenBasis, trust_margin: int = 4) -> CouplingData:
    a = coupling_coeffs(basis)
    cd = effective_mass_coeffs(a, basis.E, coupling_sum_rule(basis), trust_margin)
    if np.any(cd.alpha[cd.trusted] <= 0):
        logger.warning("negative effective-mass coefficient among trusted modes: min alpha = %.6g",
                       cd.alpha_min)
    return cd


def effmass_frame(basis: EigenBasis, cd: CouplingData) -> pd.DataFrame:
    return pd.DataFrame({
        "p": np.arange(basis.P),
        "E_p": basis.E,
        "alpha_p": cd.alpha,
        "tail_bound_p": cd.tail_bound,
        "trusted": cd.trusted,
    })


def coercivity_audit(cd: CouplingData) -> Dict[str, float]:
    return {"alpha_min": cd.alpha_min, "alpha_max": cd.alpha_max,
            "coercive": bool(cd.alpha_min > 0)}


def _check_modes(m: ModeSet, P: int) -> None:
    if m.P != P:
        raise SizeMismatchError(f"ModeSet has {m.P} modes, coefficients have {P}")


def apply_A0(m: ModeSet, alpha: np.ndarray) -> ModeSet:
    """-d_x^2 sum_p alpha_p Pi_p, spectrally."""
    _check_modes(m, len(alpha))
    xi = m.grid2d.xi[None, :, None]
    spec = np.fft.fft2(m.values, axes=(1, 2), norm="ortho")
    spec *= np.asarray(alpha)[:, None, None] * xi ** 2
    return m.with_values(np.fft.ifft2(spec, axes=(1, 2), norm="ortho"))


def _apply_coupling(m: ModeSet, matrix: np.ndarray) -> ModeSet:
    """out_p = -sum_q matrix_pq (i d_x phi_q); i d_x has symbol -xi."""
    xi = m.grid2d.xi[None, :, None]
    spec = np.fft.fft2(m.values, axes=(1, 2), norm="ortho") * xi
    out = np.einsum("pq,qkl->pkl", matrix, spec)
    return m.with_values(np.fft.ifft2(out, axes=(1, 2), norm="ortho"))


def _frequencies(E: np.ndarray) -> np.ndarray:
    return E[:, None] - E[None, :]


def oscillatory_a(tau: float, m: ModeSet, a: np.ndarray, E: np.ndarray) -> ModeSet:
    """a(tau) mode p = -sum_{q != p} e^{i tau (E_p - E_q)} a_pq (i d_x phi_q)."""
    _check_modes(m, len(E))
    phase = np.exp(1j * tau * _frequencies(E))
    matrix = np.where(np.eye(len(E), dtype=bool), 0.0, phase * a)
    return _apply_coupling(m, matrix)


def oscillatory_A(tau: float, m: ModeSet, a: np.ndarray, E: np.ndarray) -> ModeSet:
    """
    Primitive A(tau) = int_0^tau a(s) ds:
    mode p = i sum_{q != p} (e^{i tau w_pq} - 1)/w_pq a_pq (i d_x phi_q).
    """
    _check_modes(m, len(E))
    w = _frequencies(E)
    off = ~np.eye(len(E), dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        coeff = np.where(off, 1j * (np.exp(1j * tau * w) - 1.0) / np.where(off, w, 1.0) * a, 0.0)
    return _apply_coupling(m, -coeff)


def average_oscillatory_a(T: float, m: ModeSet, a: np.ndarray, E: np.ndarray,
                          samples: Optional[int] = None) -> ModeSet:
    """(1/T) int_0^T a(tau) dtau by the trapezoid rule on the phases."""
    _check_modes(m, len(E))
    w = _frequencies(E)
    if samples is None:
        samples = max(2049, int(np.ceil(16 * T * np.max(np.abs(w)) / (2 * np.pi))) + 1)
    tau = np.linspace(0.0, T, samples)
    mean_phase = trapezoid(np.exp(1j * tau[:, None, None] * w[None]), tau, axis=0) / T
    matrix = np.where(np.eye(len(E), dtype=bool), 0.0, mean_phase * a)
    return _apply_coupling(m, matrix)


def _a_terms(a: np.ndarray, E: np.ndarray) -> List[tuple]:
    """a(tau) as (frequency matrix, coefficient on i d_x) pairs."""
    off = ~np.eye(len(E), dtype=bool)
    return [(_frequencies(E), np.where(off, -a, 0.0))]


def _A_terms(a: np.ndarray, E: np.ndarray) -> List[tuple]:
    w = _frequencies(E)
    off = ~np.eye(len(E), dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(off, 1j * a / np.where(off, w, 1.0), 0.0)
    return [(w, c), (np.zeros_like(w), -c)]


def second_order_average(a: np.ndarray, E: np.ndarray, alpha: Optional[np.ndarray] = None) -> AveragedSymbol:
    """
    Resonant part of A(tau) a(tau) + i d_x^2, assembled term by term from
    the frequency expansions of both operators. Its mode-p coefficient must
    equal -i A_0, i.e. i alpha_p d_x^2.
    """
    E = np.asarray(E, dtype=float)
    _gap_matrix(E)
    scale = max(float(np.max(np.abs(E))), 1.0)
    resonant = np.zeros((E.size, E.size), dtype=complex)
    for w1, c1 in _A_terms(a, E):
        for w2, c2 in _a_terms(a, E):
            total = w1[:, :, None] + w2[None, :, :]
            hit = np.abs(total) < RESONANCE_RTOL * scale
            resonant += np.einsum("pq,qn,pqn->pn", c1, c2, hit.astype(float))
    # (i d_x)(i d_x) = -d_x^2
    coeff = -resonant
    avg_alpha = 1.0 - 1j * np.diag(coeff)
    if alpha is None:
        alpha = effective_mass_coeffs(a, E).alpha
    off = coeff.copy()
    np.fill_diagonal(off, 0.0)
    return AveragedSymbol(
        alpha=avg_alpha.real,
        discrepancy=np.abs(avg_alpha - alpha),
        off_diagonal=float(np.max(np.abs(off))) if off.size else 0.0,
    )


def _shifted_levels(vc: np.ndarray, B: float, basis: EigenBasis, eps: float, xi: float) -> np.ndarray:
    z = basis.grid.points
    # (eps xi + B z)^2 = B^2 z^2 + 2 eps xi B z + eps^2 xi^2; B^2 z^2 lives in the operator
    shifted = vc + 2.0 * eps * xi * B * z + (eps * xi) ** 2
    E, _ = dirichlet_eigenpairs(shifted, B, basis.grid, basis.P, basis.stencil_order)
    return E


def dispersion_check(potential: SampledPotential, eps: float, xi_probe: Sequence[float],
                     basis: EigenBasis, alpha: np.ndarray, pool: Optional[Executor] = None) -> DispersionProbe:
    """
    Curvature of the subband dispersion lambda_p(xi) of the x-Fourier
    symbol of H_eps, (lambda(xi) - 2 lambda(0) + lambda(-xi)) / (2 eps^2 xi^2).
    """
    xi = np.asarray(xi_probe, dtype=float)
    if np.any(xi == 0):
        raise SizeMismatchError("probe wavevectors must be nonzero")
    gaps = np.diff(basis.E)
    reach = eps * np.max(np.abs(xi)) * basis.grid.half_length * max(abs(basis.B), 1.0)
    if gaps.size and reach > 0.1 * np.min(gaps):
        logger.warning("dispersion probe outside the perturbative regime: eps*xi*L = %.3g", reach)

    vc, B = potential.values, basis.B
    probes = [0.0] + list(xi) + list(-xi)
    solve = lambda x: _shifted_levels(vc, B, basis, eps, x)
    levels = list(pool.map(solve, probes)) if pool is not None else [solve(x) for x in probes]

    lam0 = levels[0]
    plus = np.array(levels[1: 1 + xi.size])
    minus = np.array(levels[1 + xi.size:])
    curvature = (plus - 2.0 * lam0[None, :] + minus) / (2.0 * eps ** 2 * xi[:, None] ** 2)
    deviation = float(np.max(np.abs(curvature - np.asarray(alpha)[None, :])))
    return DispersionProbe(eps, xi, plus, minus, lam0, curvature, deviation)
