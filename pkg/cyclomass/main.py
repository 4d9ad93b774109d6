import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from rich.panel import Panel

from . import __version__
from .config import RunConfig, parse_config
from .errors import ConfigError, CyclomassError
from .harness import (
    SUITES,
    RunManifest,
    run_acceptance,
    run_bench_harmonic,
    run_dispersion,
    run_effmass,
    run_eigs,
    run_evolve_full,
    run_evolve_limit,
    run_kernels,
    run_sweep,
)
from .utils import console, print_checks, print_frame, print_summary, setup_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def _apply_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    """Fold CLI flags into the validated config."""
    solver = {}
    if args.threads is not None:
        solver["threads"] = args.threads
    if args.override_negative_alpha:
        solver["override_negative_alpha"] = True
    updates = {}
    if solver:
        updates["solver"] = config.solver.model_copy(update=solver)
    if args.out is not None:
        updates["io"] = config.io.model_copy(update={"out_dir": str(args.out)})
    return config.model_copy(update=updates) if updates else config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cyclomass",
        description="Strongly confined magnetized Schrödinger-Poisson: subband reduction and reference solvers",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run configuration (defaults when omitted)")
    common.add_argument("--out", type=Path, help="output directory (overrides io.out_dir)")
    common.add_argument("--threads", type=int, help="worker threads for per-xi eigen solves")
    common.add_argument("--override-negative-alpha", action="store_true",
                        help="run the limit model even when some alpha_p <= 0")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("eigs", parents=[common], help="confinement eigenpairs -> eigs.csv")
    sub.add_parser("effmass", parents=[common], help="coupling and effective-mass coefficients -> effmass.csv")
    sub.add_parser("dispersion", parents=[common], help="subband curvature probe -> dispersion.csv")
    sub.add_parser("kernels", parents=[common], help="F1 vs F0 kernel gap -> kernelgap.csv")
    sub.add_parser("evolve-limit", parents=[common], help="integrate the limit model -> diag.csv")
    sub.add_parser("evolve-full", parents=[common], help="integrate the full 3D model -> fulldiag.csv")
    sub.add_parser("bench-harmonic", parents=[common], help="full solver vs the exact harmonic solution")
    sweep = sub.add_parser("sweep", parents=[common], help="B^1 error of the approximation over eps")
    sweep.add_argument("--eps", type=float, nargs="+", help="eps values, strictly decreasing")
    accept = sub.add_parser("accept", parents=[common], help="run acceptance suites -> acceptance.csv")
    accept.add_argument("suite", nargs="?", default="all", help=f"one of {', '.join(SUITES)} or all")
    return parser


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "accept":
        if args.suite != "all" and args.suite not in SUITES:
            console.print(f"[red]Unknown suite '{args.suite}'. Choose from {', '.join(SUITES)} or all.[/red]")
            return EXIT_USAGE
        out = args.out or Path("runs/accept")
        manifest = RunManifest(f"accept {args.suite}", {"suite": args.suite})
        with console.status(f"[bold green]Running acceptance suite {args.suite}..."):
            report = run_acceptance(args.suite, out, manifest)
        print_checks(report.rows)
        manifest.halt_reason = None if report.passed else "acceptance failures"
        manifest.write(out)
        return EXIT_OK if report.passed else EXIT_FAILED

    config = _apply_overrides(parse_config(args.config), args)
    out = Path(config.io.out_dir)
    manifest = RunManifest(args.command, config.model_dump())
    status = EXIT_OK

    with console.status(f"[bold green]{args.command}..."):
        if args.command == "eigs":
            print_frame(run_eigs(config, out, manifest), "Confinement spectrum")
        elif args.command == "effmass":
            print_frame(run_effmass(config, out, manifest), "Effective-mass coefficients")
        elif args.command == "dispersion":
            print_frame(run_dispersion(config, out, manifest), "Subband dispersion curvature")
        elif args.command == "kernels":
            print_frame(run_kernels(config, out, manifest).frame(), "Kernel gap")
        elif args.command == "evolve-limit":
            traj = run_evolve_limit(config, out, manifest)
            print_frame(traj.diagnostics.tail(10), "Limit diagnostics (last rows)")
            if traj.halt_reason:
                status = EXIT_FAILED
        elif args.command == "evolve-full":
            runs = run_evolve_full(config, out, manifest)
            for eps, traj in runs.items():
                print_frame(traj.diagnostics.tail(5), f"Full diagnostics, eps={eps:g}")
            if any(t.halt_reason for t in runs.values()):
                status = EXIT_FAILED
        elif args.command == "bench-harmonic":
            print_frame(run_bench_harmonic(config, out, manifest), "Harmonic benchmark")
        elif args.command == "sweep":
            res = run_sweep(config, args.eps, out, manifest)
            print_frame(res.frame, "Sweep")
            print_summary("Sweep", {
                "slope": res.slope if res.slope_defined else "undefined",
                "monotone": res.monotone,
                "failed eps": ", ".join(f"{e:g}" for e in res.failed) or "none",
            }, ok=res.monotone and not res.failed)
            if res.failed:
                status = EXIT_FAILED

    path = manifest.write(out)
    logger.debug("manifest written to %s", path)
    return status


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose)

    try:
        return _dispatch(args)
    except ConfigError as e:
        console.print(Panel(f"[red]{e}[/red]", title="Configuration error", border_style="red"))
        return EXIT_USAGE
    except CyclomassError as e:
        console.print(f"[red]An error occurred: {e}[/red]")
        return EXIT_FAILED
    except KeyboardInterrupt:
        console.print("\n[bold]Interrupted.[/bold]")
        return EXIT_FAILED
    except Exception as e:
        logger.debug("unexpected error", exc_info=True)
        console.print(Panel(f"[red]{type(e).__name__}: {e}[/red]\n[dim]rerun with -v for the traceback[/dim]",
                            title="Unexpected error", border_style="red"))
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
