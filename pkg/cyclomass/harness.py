"""
Orchestration: problem assembly from a RunConfig, the per-command runs,
the eps sweep and the acceptance suites.
"""
import json
import logging
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager, nullcontext
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import scipy

from . import __version__, data
from .config import RunConfig, config_from_dict
from .confinement import (
    EigenBasis,
    PotentialSpec,
    SampledPotential,
    build_potential,
    cached_eigs,
    check_gap,
    eigs_frame,
    select_mode_count,
    solve_eigs,
    truncate_basis,
)
from .errors import CyclomassError
from .limit import LimitTrajectory, evolve_limit, init_modes
from .poisson import (
    KernelMultiplier,
    build_kernel,
    direct_potential_2d,
    gaussian_potential_3d,
    kernel_gap_estimate,
    potential_2d,
    potential_3d,
)
from .reference import (
    FullTrajectory,
    analytic_harmonic_benchmark,
    build_shifted_table,
    evolve_full,
    theorem_error,
)
from .spectral import Field3D, Grid1D, Grid2D, field_from_function, l2_norm
from .subband import (
    CouplingData,
    coercivity_audit,
    coupling_coeffs,
    coupling_data,
    dispersion_check,
    effective_mass_coeffs,
    effmass_frame,
    second_order_average,
)

logger = logging.getLogger(__name__)

SUITES = ("spectrum", "effmass", "kernels", "limit", "full", "sweep")


@dataclass
class RunManifest:
    """
    Everything needed to audit a run: config echo, fingerprints of cached
    tables and outputs, versions and wall clock per phase.
    """
    command: str
    config: dict
    version: str = __version__
    libraries: Dict[str, str] = field(default_factory=lambda: {
        "python": platform.python_version(), "numpy": np.__version__,
        "scipy": scipy.__version__, "pandas": pd.__version__})
    fingerprints: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)
    halt_reason: Optional[str] = None

    @contextmanager
    def phase(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - start

    def record(self, path: Path) -> Path:
        path = Path(path)
        self.outputs[str(path)] = data.file_fingerprint(path)
        return path

    def write(self, out_dir: Path) -> Path:
        path = Path(out_dir) / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True, default=str))
        return path

    @classmethod
    def load(cls, path: Path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))

    def verify(self) -> List[str]:
        """Paths that are missing or no longer match their fingerprint."""
        problems = []
        for name, fp in self.outputs.items():
            p = Path(name)
            if not p.exists():
                problems.append(f"missing: {name}")
            elif data.file_fingerprint(p) != fp:
                problems.append(f"changed: {name}")
        return problems


@dataclass
class Problem:
    config: RunConfig
    grid1d: Grid1D
    grid2d: Grid2D
    potential: SampledPotential
    basis: EigenBasis
    wide_basis: EigenBasis
    coupling: CouplingData
    alpha: np.ndarray
    kernel2d: KernelMultiplier


@dataclass
class SweepResult:
    frame: pd.DataFrame
    errors: pd.DataFrame
    slope: float
    monotone: bool
    slope_defined: bool
    failed: List[float]


@dataclass
class AcceptanceReport:
    rows: List[Dict[str, object]]

    @property
    def passed(self) -> bool:
        return all(r["passed"] for r in self.rows)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=["suite", "check", "value", "bound", "passed"])


def _pool(threads: int):
    return ThreadPoolExecutor(max_workers=threads) if threads > 1 else nullcontext(None)


def build_problem(config: RunConfig, manifest: Optional[RunManifest] = None) -> Problem:
    """
    Potential, eigenbasis, couplings and the 2D kernel for a config. The
    couplings use trust_margin extra modes so the alpha_p actually run
    are trusted ones.
    """
    g = config.grids
    grid1d, grid2d = g.grid1d(), g.grid2d()
    spec = config.potential.spec()
    potential = build_potential(spec, grid1d)

    populated = np.flatnonzero(config.solver.initial.modes)
    min_modes = int(populated[-1]) + 1 if populated.size else 1
    P = g.P or select_mode_count(potential, spec.B, grid1d, g.mode_ratio, g.stencil_order, min_modes=min_modes)
    margin = config.solver.trust_margin
    P_wide = min(P + margin, grid1d.n // 4)
    cache = Path(config.io.cache_dir) if config.io.use_cache else None
    wide = cached_eigs(potential, spec.B, grid1d, P_wide, g.stencil_order, cache)
    coupling = coupling_data(wide, margin)
    if P_wide - P < margin:
        logger.warning("only %d extra modes for the alpha sums, top alpha_p are untrusted", P_wide - P)
    basis = truncate_basis(wide, P)
    kernel2d = build_kernel(grid2d, point_cap=config.solver.point_cap)

    if manifest is not None:
        manifest.fingerprints.update({
            "potential": potential.fingerprint,
            "eigenbasis": wide.fingerprint,
            "coupling": coupling.fingerprint,
        })
    return Problem(config, grid1d, grid2d, potential, basis, wide, coupling, coupling.alpha[:P].copy(), kernel2d)


def initial_datum(config: RunConfig, grid2d: Grid2D, basis: EigenBasis) -> Field3D:
    """
    sqrt(mass) g(x, y) sum_p c_p chi_p(z), with g an L2-normalized Gaussian
    and the c_p normalized.
    """
    init = config.solver.initial
    amps = np.zeros(basis.P)
    amps[: len(init.modes)] = init.modes
    norm = np.linalg.norm(amps)
    if norm == 0:
        raise CyclomassError("solver.initial.modes are all zero")
    amps /= norm

    x, y = grid2d.mesh()
    g = (np.pi * init.sigma_x * init.sigma_y) ** -0.5 * np.exp(
        -x ** 2 / (2 * init.sigma_x ** 2) - y ** 2 / (2 * init.sigma_y ** 2) + 1j * init.kx * x)
    profile = amps @ basis.chi
    values = np.sqrt(init.mass) * g[:, :, None] * profile[None, None, :]
    return Field3D(values.astype(complex), grid2d, basis.grid)


def _out(config: RunConfig, out_dir: Optional[Path]) -> Path:
    path = Path(out_dir or config.io.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def run_eigs(config: RunConfig, out_dir: Optional[Path] = None,
             manifest: Optional[RunManifest] = None) -> pd.DataFrame:
    manifest = manifest or RunManifest("eigs", config.model_dump())
    with manifest.phase("eigs"):
        problem = build_problem(config, manifest)
    frame = eigs_frame(problem.basis)
    report = check_gap(problem.basis) if problem.basis.P >= 3 else None
    out = _out(config, out_dir)
    manifest.record(data.write_frame(frame, out / "eigs.csv"))
    if report is not None:
        logger.info("gap fit: n0=%.4g C=%.4g%s", report.n0, report.C,
                    " (low confidence)" if report.low_confidence else "")
    return frame


def run_effmass(config: RunConfig, out_dir: Optional[Path] = None,
                manifest: Optional[RunManifest] = None) -> pd.DataFrame:
    manifest = manifest or RunManifest("effmass", config.model_dump())
    with manifest.phase("effmass"):
        problem = build_problem(config, manifest)
        frame = effmass_frame(problem.wide_basis, problem.coupling)
    audit = coercivity_audit(problem.coupling)
    logger.info("alpha range over trusted modes: [%.10g, %.10g]", audit["alpha_min"], audit["alpha_max"])
    manifest.record(data.write_frame(frame, _out(config, out_dir) / "effmass.csv"))
    return frame


def run_dispersion(config: RunConfig, out_dir: Optional[Path] = None,
                   manifest: Optional[RunManifest] = None) -> pd.DataFrame:
    manifest = manifest or RunManifest("dispersion", config.model_dump())
    problem = build_problem(config, manifest)
    with manifest.phase("dispersion"), _pool(config.solver.threads) as pool:
        probe = dispersion_check(problem.potential, config.epsilon.dispersion, config.epsilon.probe_xi,
                                 problem.basis, problem.alpha, pool)
    logger.info("max |curvature - alpha| = %.3e", probe.max_deviation)
    frame = probe.frame()
    manifest.record(data.write_frame(frame, _out(config, out_dir) / "dispersion.csv"))
    return frame


def gaussian_field(grid2d: Grid2D, grid1d: Grid1D, sigma: float = 1.0, sigma_z: float = 1.0,
                   mass: float = 1.0) -> Field3D:
    """Real Gaussian wavefunction of given L2 mass."""
    norm = np.sqrt(mass) * (np.pi ** 1.5 * sigma ** 2 * sigma_z) ** -0.5
    return field_from_function(
        lambda x, y, z: norm * np.exp(-(x ** 2 + y ** 2) / (2 * sigma ** 2) - z ** 2 / (2 * sigma_z ** 2)),
        grid2d, grid1d)


def run_kernels(config: RunConfig, out_dir: Optional[Path] = None,
                manifest: Optional[RunManifest] = None):
    manifest = manifest or RunManifest("kernels", config.model_dump())
    problem = build_problem(config, manifest)
    u = gaussian_field(problem.grid2d, problem.grid1d, sigma_z=0.5)
    with manifest.phase("kernel_gap"):
        report = kernel_gap_estimate(u, config.epsilon.kernel_gap, problem.basis, problem.kernel2d,
                                     config.solver.point_cap)
    logger.info("kernel gap slope %.4g, monotone=%s", report.slope, report.monotone)
    manifest.record(data.write_frame(report.frame(), _out(config, out_dir) / "kernelgap.csv"))
    return report


def _limit_run(problem: Problem, psi0: Field3D, writer=None) -> LimitTrajectory:
    cfg = problem.config
    m0 = init_modes(psi0, problem.basis, cfg.solver.tail_threshold)
    kernel = problem.kernel2d if cfg.solver.limit_nonlinear else None
    return evolve_limit(m0, problem.alpha, cfg.time.dt, cfg.time.T, kernel,
                        snapshot_every=cfg.time.snapshot_every, diag_every=cfg.time.diag_every,
                        override_negative_alpha=cfg.solver.override_negative_alpha,
                        blowup_factor=cfg.solver.blowup_factor, writer=writer)


def run_evolve_limit(config: RunConfig, out_dir: Optional[Path] = None,
                     manifest: Optional[RunManifest] = None) -> LimitTrajectory:
    manifest = manifest or RunManifest("evolve-limit", config.model_dump())
    out = _out(config, out_dir)
    problem = build_problem(config, manifest)
    psi0 = initial_datum(config, problem.grid2d, problem.basis)
    writer = data.SnapshotWriter(out / "snapshots") if config.io.snapshots else nullcontext(None)
    with manifest.phase("evolve_limit"), writer as w:
        traj = _limit_run(problem, psi0, w)
    if isinstance(writer, data.SnapshotWriter):
        manifest.outputs.update(writer.written)
    manifest.halt_reason = traj.halt_reason
    manifest.record(data.write_frame(traj.diagnostics, out / "diag.csv"))
    return traj


def _phase_guard(table, dt: float, fraction: float) -> None:
    spread = float(np.ptp(table.lam[:, 0])) / table.eps ** 2
    if dt * spread > fraction * 2 * np.pi:
        logger.warning("dt=%g does not resolve the xi-spread of the fast phase (%.3g rad per step); "
                       "the linear flow stays exact", dt, dt * spread)


def _full_run(problem: Problem, psi0: Field3D, eps: float, snapshot_times: Sequence[float],
              nonlinearity: str, pool=None) -> FullTrajectory:
    cfg = problem.config
    table = build_shifted_table(problem.potential, problem.basis.B, eps, problem.grid2d, problem.grid1d,
                                cfg.grids.P_z, cfg.grids.stencil_order, pool)
    _phase_guard(table, cfg.time.full_dt, cfg.solver.phase_fraction)
    kernel = None
    if nonlinearity == "F1":
        kernel = build_kernel(problem.grid2d, problem.grid1d, eps, cfg.solver.point_cap)
    elif nonlinearity == "F0":
        kernel = problem.kernel2d
    return evolve_full(psi0, table, cfg.time.full_dt, cfg.time.T, nonlinearity, kernel, snapshot_times,
                       diag_every=cfg.time.diag_every)


def run_evolve_full(config: RunConfig, out_dir: Optional[Path] = None,
                    manifest: Optional[RunManifest] = None) -> Dict[float, FullTrajectory]:
    manifest = manifest or RunManifest("evolve-full", config.model_dump())
    out = _out(config, out_dir)
    problem = build_problem(config, manifest)
    psi0 = initial_datum(config, problem.grid2d, problem.basis)
    runs, frames = {}, []
    with _pool(config.solver.threads) as pool:
        for eps in config.epsilon.values:
            with manifest.phase(f"evolve_full[{eps:g}]"):
                traj = _full_run(problem, psi0, eps, (), config.solver.nonlinearity, pool)
            runs[eps] = traj
            frames.append(traj.diagnostics.assign(eps=eps))
            if traj.halt_reason:
                manifest.halt_reason = traj.halt_reason
    manifest.record(data.write_frame(pd.concat(frames, ignore_index=True), out / "fulldiag.csv"))
    return runs


def _require_harmonic(config: RunConfig) -> None:
    if config.potential.kind != "harmonic":
        raise CyclomassError("the analytic benchmark needs a harmonic potential")


def run_bench_harmonic(config: RunConfig, out_dir: Optional[Path] = None,
                       manifest: Optional[RunManifest] = None) -> pd.DataFrame:
    """L2 distance between the linear full solver and the exact harmonic solution at T."""
    _require_harmonic(config)
    manifest = manifest or RunManifest("bench-harmonic", config.model_dump())
    problem = build_problem(config, manifest)
    psi0 = initial_datum(config, problem.grid2d, problem.basis)
    T = config.time.T
    rows = []
    with _pool(config.solver.threads) as pool:
        for eps in config.epsilon.values:
            with manifest.phase(f"bench[{eps:g}]"):
                full = _full_run(problem, psi0, eps, (), "none", pool).snapshots[-1]
                exact = analytic_harmonic_benchmark(psi0, config.potential.a, config.potential.B, eps, [T])[0]
            rows.append({"eps": eps, "T": T, "l2_error": l2_norm(full - exact), "mass": l2_norm(full) ** 2})
    frame = pd.DataFrame(rows)
    manifest.record(data.write_frame(frame, _out(config, out_dir) / "bench.csv"))
    return frame


def _snapshot_times(config: RunConfig, limit: LimitTrajectory) -> List[float]:
    times = limit.times
    full_dt = config.time.full_dt
    if np.any(np.abs(np.round(times / full_dt) * full_dt - times) > 1e-9):
        raise CyclomassError("limit snapshot times are not multiples of time.full_dt")
    return times.tolist()


def run_sweep(config: RunConfig, eps_list: Optional[Sequence[float]] = None,
              out_dir: Optional[Path] = None, manifest: Optional[RunManifest] = None) -> SweepResult:
    """
    sup_t ||Psi_eps - Psi_app||_{B^1} per eps. The limit trajectory is
    computed once; the linear harmonic case uses the exact solution in
    place of the full solver.
    """
    eps_list = list(eps_list or config.epsilon.values)
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise CyclomassError("sweep eps values must be strictly decreasing")
    manifest = manifest or RunManifest("sweep", config.model_dump())
    problem = build_problem(config, manifest)
    psi0 = initial_datum(config, problem.grid2d, problem.basis)
    nonlinearity = config.solver.nonlinearity
    analytic = nonlinearity == "none" and config.potential.kind == "harmonic"
    if nonlinearity == "none" and config.solver.limit_nonlinear:
        config = config.model_copy(update={"solver": config.solver.model_copy(update={"limit_nonlinear": False})})
        problem.config = config

    with manifest.phase("limit"):
        limit = _limit_run(problem, psi0)
    times = _snapshot_times(config, limit)

    rows, curves, failed = [], [], []
    with _pool(config.solver.threads) as pool:
        for eps in eps_list:
            try:
                with manifest.phase(f"full[{eps:g}]"):
                    if analytic:
                        full = analytic_harmonic_benchmark(psi0, config.potential.a, config.potential.B, eps, times)
                    else:
                        traj = _full_run(problem, psi0, eps, times, nonlinearity, pool)
                        if traj.halt_reason:
                            raise CyclomassError(traj.halt_reason)
                        full = traj.snapshots
                n = min(len(full), len(limit.snapshots))
                curve = theorem_error(full[:n], limit.snapshots[:n], problem.basis, eps)
            except CyclomassError as e:
                logger.error("eps=%g failed: %s", eps, e)
                failed.append(eps)
                rows.append({"eps": eps, "sup_error": np.nan, "failed": True})
                continue
            curves.append(curve.frame())
            rows.append({"eps": eps, "sup_error": curve.sup, "failed": False})

    frame = pd.DataFrame(rows)
    ok = frame[~frame["failed"]]
    slope, defined = float("nan"), len(ok) >= 2
    if defined:
        slope = float(np.polyfit(np.log(ok["eps"]), np.log(ok["sup_error"]), 1)[0])
    else:
        logger.warning("slope undefined with %d successful eps value(s)", len(ok))
    monotone = bool(len(ok) == len(frame) and np.all(np.diff(ok["sup_error"].to_numpy()) < 0))

    out = _out(config, out_dir)
    errors = pd.concat(curves, ignore_index=True) if curves else pd.DataFrame(columns=["eps", "t", "error"])
    manifest.record(data.write_frame(frame.assign(slope=slope, monotone=monotone), out / "sweep.csv"))
    manifest.record(data.write_frame(errors, out / "error.csv"))
    return SweepResult(frame, errors, slope, monotone, defined, failed)


def _check(rows: List[dict], suite: str, name: str, value: float, bound: str, passed: bool) -> None:
    rows.append({"suite": suite, "check": name, "value": float(value), "bound": bound, "passed": bool(passed)})


def _harmonic_basis(a: float, B: float, n_z: int, L_z: float, P: int) -> EigenBasis:
    grid = Grid1D(L_z, n_z)
    pot = build_potential(PotentialSpec(kind="harmonic", a=a, B=B), grid)
    return solve_eigs(pot, B, grid, P)


def _suite_spectrum(rows: List[dict], out: Path) -> None:
    basis = _harmonic_basis(1.0, 1.0, 2048, 12.0, 10)
    exact = (2 * np.arange(10) + 1) * np.sqrt(2.0)
    _check(rows, "spectrum", "E_p rel err (a=1,B=1)", np.max(np.abs(basis.E / exact - 1)), "<= 1e-6",
           np.max(np.abs(basis.E / exact - 1)) <= 1e-6)
    b0 = _harmonic_basis(1.0, 0.0, 2048, 12.0, 10)
    err0 = np.max(np.abs(b0.E / (2 * np.arange(10) + 1) - 1))
    _check(rows, "spectrum", "E_p rel err (a=1,B=0)", err0, "<= 1e-6", err0 <= 1e-6)
    fine = _harmonic_basis(1.0, 1.0, 4096, 12.0, 10)
    cauchy = np.max(np.abs(fine.E[:5] / basis.E[:5] - 1))
    _check(rows, "spectrum", "refinement change p<=P/2", cauchy, "< 1e-6", cauchy < 1e-6)
    gap = check_gap(basis)
    _check(rows, "spectrum", "fitted n0 (harmonic)", gap.n0, "= 0", gap.n0 < 1e-6)


def _suite_effmass(rows: List[dict], out: Path) -> None:
    for a, expect in ((1.0, 0.5), (2.0, 0.8)):
        basis = _harmonic_basis(a, 1.0, 2048, 12.0, 16)
        cd = coupling_data(basis)
        err = np.max(np.abs(cd.alpha[cd.trusted] - expect))
        _check(rows, "effmass", f"alpha_p = {expect} (a={a:g},B=1)", err, "<= 1e-6", err <= 1e-6)
        off = np.abs(cd.a)[np.abs(np.subtract.outer(np.arange(16), np.arange(16))) != 1]
        _check(rows, "effmass", f"|a_pq|, |p-q|!=1 (a={a:g})", off.max(), "< 1e-8", off.max() < 1e-8)
        avg = second_order_average(cd.a, basis.E, cd.alpha)
        _check(rows, "effmass", f"averaged symbol vs alpha (a={a:g})", avg.discrepancy.max(), "< 1e-12",
               avg.discrepancy.max() < 1e-12)

    b0 = _harmonic_basis(1.0, 0.0, 2048, 12.0, 16)
    cd0 = effective_mass_coeffs(coupling_coeffs(b0), b0.E)
    _check(rows, "effmass", "B=0: max|a|", np.abs(cd0.a).max(), "= 0", not cd0.a.any())
    _check(rows, "effmass", "B=0: alpha == 1", np.abs(cd0.alpha - 1).max(), "= 0", np.all(cd0.alpha == 1.0))

    grid = Grid1D(12.0, 2048)
    specs = {
        "harmonic": PotentialSpec(kind="harmonic", a=1.0, B=1.0),
        "quartic": PotentialSpec(kind="power", a=1.0, s=4.0, B=1.0),
        "perturbed": PotentialSpec(kind="perturbed_harmonic", a=1.0, B=1.0, v1_amplitude=2.0, v1_width=0.7),
    }
    for name, spec in specs.items():
        pot = build_potential(spec, grid)
        basis = solve_eigs(pot, 1.0, grid, 12)
        a = coupling_coeffs(basis)
        diag = np.abs(np.diag(a)).max() / np.abs(a).max()
        _check(rows, "effmass", f"a_pp/max|a| ({name})", diag, "<= 1e-10", diag <= 1e-10)
        cd = effective_mass_coeffs(a, basis.E)
        two = np.abs(cd.alpha - cd.alpha_alt).max()
        _check(rows, "effmass", f"two-formula gap ({name})", two, "< 1e-12", two < 1e-12)

    hb = _harmonic_basis(1.0, 1.0, 2048, 12.0, 16)
    pot = build_potential(specs["harmonic"], hb.grid)
    probe = dispersion_check(pot, 1e-2, [1.0], hb, coupling_data(hb).alpha)
    dev = np.abs(probe.curvature[0, :8] - 0.5).max()
    _check(rows, "effmass", "dispersion curvature (a=1,B=1)", dev, "<= 1e-3", dev <= 1e-3)

    pot0 = build_potential(PotentialSpec(kind="harmonic", a=1.0, B=0.0), hb.grid)
    b0 = solve_eigs(pot0, 0.0, hb.grid, 8)
    probe0 = dispersion_check(pot0, 1e-2, [1.0], b0, np.ones(8))
    _check(rows, "effmass", "dispersion curvature (B=0)", probe0.max_deviation, "<= 1e-6",
           probe0.max_deviation <= 1e-6)

    qpot = build_potential(specs["quartic"], grid)
    qb = solve_eigs(qpot, 1.0, grid, 16)
    qcd = coupling_data(qb)
    qprobe = dispersion_check(qpot, 1e-2, [1.0], qb, qcd.alpha)
    qdev = np.abs(qprobe.curvature[0, :4] - qcd.alpha[:4]).max()
    _check(rows, "effmass", "dispersion curvature (quartic)", qdev, "<= 5e-3 + eps", qdev <= 5e-3 + 1e-2)


def _suite_kernels(rows: List[dict], out: Path) -> None:
    grid2d = Grid2D(16.0, 16.0, 64, 64)
    grid1d = Grid1D(4.0, 128)
    pot = build_potential(PotentialSpec(kind="harmonic", a=2.0, B=1.0), grid1d)
    basis = solve_eigs(pot, 1.0, grid1d, 8)
    u = gaussian_field(grid2d, grid1d, sigma=1.0, sigma_z=1 / np.sqrt(np.sqrt(5.0)))
    report = kernel_gap_estimate(u, [0.4, 0.2, 0.1, 0.05, 0.025], basis, build_kernel(grid2d))
    _check(rows, "kernels", "kernel gap slope", report.slope, ">= 1/3 - 0.05", report.slope >= 1 / 3 - 0.05)
    _check(rows, "kernels", "kernel gap monotone", float(report.monotone), "decreasing", report.monotone)

    small = Grid2D(8.0, 8.0, 32, 32)
    x, y = small.mesh()
    rho = np.exp(-(x ** 2 + y ** 2))
    fft_w = potential_2d(rho, build_kernel(small)).values
    direct = direct_potential_2d(rho, small)
    rel = np.abs(fft_w - direct).max() / np.abs(direct).max()
    _check(rows, "kernels", "FFT vs direct quadrature (2D)", rel, "<= 1e-4", rel <= 1e-4)

    g2, g1 = Grid2D(8.0, 8.0, 64, 64), Grid1D(4.0, 64)
    f = gaussian_field(g2, g1, sigma=np.sqrt(2.0), sigma_z=np.sqrt(2.0))
    V = potential_3d(f, build_kernel(g2, g1, 1.0))
    X, Y, Z = np.meshgrid(g2.x, g2.y, g1.points, indexing="ij")
    exact = gaussian_potential_3d(np.sqrt(X ** 2 + Y ** 2 + Z ** 2), 1.0)
    center = (slice(16, 48), slice(16, 48), slice(16, 48))
    rel3 = np.abs(V[center] - exact[center]).max() / exact.max()
    _check(rows, "kernels", "3D Gaussian closed form", rel3, "<= 1e-3", rel3 <= 1e-3)


def _desk_config(**solver) -> RunConfig:
    base = {
        "potential": {"kind": "harmonic", "a": 1.0, "B": 1.0},
        "grids": {"n_x": 64, "n_y": 64, "L_x": 16.0, "L_y": 16.0, "n_z": 256, "L_z": 6.0, "P": 8},
        "time": {"T": 1.0, "dt": 1e-3, "full_dt": 1e-2, "snapshot_every": 100, "diag_every": 10},
        "solver": {"initial": {"modes": [1.0, 0.5], "mass": 5.0}, **solver},
        "io": {"use_cache": False},
    }
    return config_from_dict(base)


def _override(config: RunConfig, section: str, **values) -> RunConfig:
    raw = config.model_dump()
    raw[section].update(values)
    return config_from_dict(raw)


def _suite_limit(rows: List[dict], out: Path) -> None:
    cfg = _desk_config()
    problem = build_problem(cfg)
    psi0 = initial_datum(cfg, problem.grid2d, problem.basis)
    m0 = init_modes(psi0, problem.basis)

    drifts = {}
    for dt in (1e-3, 5e-4):
        traj = evolve_limit(m0, problem.alpha, dt, 1.0, problem.kernel2d, diag_every=int(round(0.01 / dt)))
        d = traj.diagnostics
        mass_cols = [c for c in d.columns if c.startswith("mass_")]
        mode_drift = np.abs(d[mass_cols] - d[mass_cols].iloc[0]).to_numpy().max()
        conf_drift = np.abs(d["E_conf"] / d["E_conf"].iloc[0] - 1).max()
        drifts[dt] = np.abs(d["E_tr"] / d["E_tr"].iloc[0] - 1).max()
        if dt == 1e-3:
            _check(rows, "limit", "per-mode mass drift", mode_drift, "< 1e-10", mode_drift < 1e-10)
            _check(rows, "limit", "E_conf relative drift", conf_drift, "< 1e-10", conf_drift < 1e-10)
            _check(rows, "limit", "E_tr relative drift", drifts[dt], "< 1e-6", drifts[dt] < 1e-6)
    ratio = drifts[1e-3] / drifts[5e-4]
    _check(rows, "limit", "E_tr drift ratio dt/(dt/2)", ratio, "in [3, 5]", 3 <= ratio <= 5)

    ends = []
    for dt in (4e-2, 2e-2, 1e-2):
        ends.append(evolve_limit(m0, problem.alpha, dt, 0.4, problem.kernel2d, diag_every=0).final.values)
    r = np.linalg.norm(ends[0] - ends[1]) / np.linalg.norm(ends[1] - ends[2])
    _check(rows, "limit", "splitting order ratio", r, "in [3.5, 4.5]", 3.5 <= r <= 4.5)


def _suite_full(rows: List[dict], out: Path) -> None:
    # eps = 1 shifts the widest xi columns by ~3, so the z box must be wider than the desk one
    cfg = _desk_config(nonlinearity="none")
    cfg = _override(cfg, "grids", n_x=32, n_y=32, P=4, n_z=512, L_z=12.0)
    problem = build_problem(cfg)
    psi0 = initial_datum(cfg, problem.grid2d, problem.basis)
    for eps in (1.0, 0.1):
        table = build_shifted_table(problem.potential, 1.0, eps, problem.grid2d, problem.grid1d)
        a = evolve_full(psi0, table, 0.5, 1.0, "none").snapshots[-1]
        b = evolve_full(psi0, table, 0.25, 1.0, "none").snapshots[-1]
        dt_gap = l2_norm(a - b) / l2_norm(a)
        _check(rows, "full", f"dt independence (eps={eps:g})", dt_gap, "<= 1e-10", dt_gap <= 1e-10)
        mass_drift = abs(l2_norm(b) ** 2 / l2_norm(psi0) ** 2 - 1) / 4
        _check(rows, "full", f"mass drift per step (eps={eps:g})", mass_drift, "< 1e-12", mass_drift < 1e-12)
        exact = analytic_harmonic_benchmark(psi0, 1.0, 1.0, eps, [1.0])[0]
        bench = l2_norm(a - exact)
        _check(rows, "full", f"analytic benchmark L2 (eps={eps:g})", bench, "<= 1e-6", bench <= 1e-6)


def _suite_sweep(rows: List[dict], out: Path) -> None:
    linear = _desk_config(nonlinearity="none", limit_nonlinear=False)
    res = run_sweep(linear, [0.2, 0.1, 0.05], out_dir=out / "sweep-linear")
    _check(rows, "sweep", "linear sup-error decreasing", res.slope, "monotone", res.monotone)

    nonlinear = _desk_config(nonlinearity="F1")
    nonlinear = _override(nonlinear, "time", T=0.5, snapshot_every=50, diag_every=50)
    res = run_sweep(nonlinear, [0.2, 0.1, 0.05], out_dir=out / "sweep-nonlinear")
    _check(rows, "sweep", "nonlinear sup-error decreasing", res.slope, "monotone", res.monotone)


SUITE_RUNNERS: Dict[str, Callable[[List[dict], Path], None]] = {
    "spectrum": _suite_spectrum,
    "effmass": _suite_effmass,
    "kernels": _suite_kernels,
    "limit": _suite_limit,
    "full": _suite_full,
    "sweep": _suite_sweep,
}


def run_acceptance(suite: str, out_dir: Optional[Path] = None,
                   manifest: Optional[RunManifest] = None) -> AcceptanceReport:
    if suite != "all" and suite not in SUITE_RUNNERS:
        raise CyclomassError(f"unknown suite '{suite}', expected one of {SUITES + ('all',)}")
    manifest = manifest or RunManifest(f"accept {suite}", {"suite": suite})
    out = Path(out_dir or "runs/accept")
    out.mkdir(parents=True, exist_ok=True)
    rows: List[dict] = []
    for name in (SUITES if suite == "all" else (suite,)):
        with manifest.phase(f"accept[{name}]"):
            try:
                SUITE_RUNNERS[name](rows, out)
            except CyclomassError as e:
                logger.error("suite %s aborted: %s", name, e)
                _check(rows, name, f"aborted: {e}", float("nan"), "no error", False)
    report = AcceptanceReport(rows)
    manifest.record(data.write_frame(report.frame(), out / "acceptance.csv"))
    return report
