"""Command-line front end: ``hall-steady {check-operators,solve,mms,diagnose}``.

Exit codes: 0 ran to completion (a non-converged solve is a result, not a
crash), 1 an operator check failed, 2 configuration error, 3 solver failure
(compatibility violation, non-finite values, broken inner solve).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from scipy import fft

from hall_steady.checks import run_operator_checks
from hall_steady.config import ConfigError, SolverConfig, load_config
from hall_steady.driver import (
    contraction_probe,
    decomposition_check,
    ProbeResult,
    multi_start,
    smallness_report,
    solve_hall_mhd,
)
from hall_steady.fields import FaceField
from hall_steady.grid import Grid
from hall_steady.krylov import SolverError
from hall_steady.mms import ManufacturedSolution, StudyAborted, convergence_study, forcing_from_solution
from hall_steady.reports import format_value, write_kv

logger = logging.getLogger("hall_steady")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hall-steady", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value configuration file")
    common.add_argument("--workers", type=int, default=None,
                        help="FFT worker threads (default: $HALL_STEADY_WORKERS or 1)")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check-operators", parents=[common], help="verify discrete identities")
    p.add_argument("--n", type=int, default=None, help="grid resolution (default: config n or 16)")

    sub.add_parser("solve", parents=[common], help="solve the nonlinear problem")

    p = sub.add_parser("mms", parents=[common], help="manufactured-solution convergence study")
    p.add_argument("--levels", default="16,32,64", help="comma-separated resolutions")
    p.add_argument("--mode", choices=("analytic", "discrete"), default=None,
                   help="forcing mode (default: from config)")

    sub.add_parser("diagnose", parents=[common], help="contraction and uniqueness diagnostics")
    return parser


def _workers(arg: int | None) -> int:
    if arg is not None:
        value = arg
    else:
        env = os.environ.get("HALL_STEADY_WORKERS", "1")
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(f"HALL_STEADY_WORKERS must be an integer, got {env!r}") from None
    if value < 1:
        raise ConfigError("worker count must be >= 1")
    return value


def _config(args) -> SolverConfig:
    return load_config(args.config) if args.config else SolverConfig()


def _forcing(config: SolverConfig, grid: Grid):
    if config.forcing.family == "zero":
        return FaceField.zeros(grid), FaceField.zeros(grid)
    sol = ManufacturedSolution.from_spec(config.forcing, config.mu)
    return forcing_from_solution(sol, grid, config.forcing.mode)


def _print_kv(items: dict) -> None:
    for key, value in items.items():
        print(f"{key} = {format_value(value)}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_check_operators(args) -> int:
    n = args.n
    if n is None:
        n = _config(args).n if args.config else 16
    try:
        grid = Grid(n)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    results, c_hat = run_operator_checks(grid)
    items = {}
    for r in results:
        status = "ok" if r.passed else "FAILED"
        print(f"{r.name}: defect = {r.defect:.17g} bound = {r.bound:.3g} {status}")
        items[f"{r.name}.defect"] = r.defect
        items[f"{r.name}.passed"] = r.passed
    print(f"poincare_constant = {c_hat:.17g}")
    items["poincare_constant"] = c_hat
    args.out.mkdir(parents=True, exist_ok=True)
    write_kv(args.out / "check_operators.txt", {"n": n, **items})
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("failed identities: " + ", ".join(failed), file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def _solve(config: SolverConfig):
    grid = Grid(config.n)
    f, g = _forcing(config, grid)
    state, report = solve_hall_mhd(f, g, config)
    return grid, f, g, state, report


def _probe_or_none(state, f, g, config):
    """Contraction probe, or a ``nan`` result when an inner solve breaks down."""
    try:
        return contraction_probe(state, f, g, config)
    except SolverError as exc:
        logger.warning("contraction probe failed: %s", exc)
        return ProbeResult(float("nan"), [], float("nan"))


def cmd_solve(args) -> int:
    config = _config(args)
    grid, f, g, state, report = _solve(config)
    probe = _probe_or_none(state, f, g, config) if report.converged else None
    diag = smallness_report(f, g, config, report, state, probe)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    state.u.dump(out / "u.field")
    state.p.dump(out / "p.field")
    state.B.dump(out / "B.field")
    report.write_csv(out / "iterations.csv")
    write_kv(out / "report.txt", {"n": grid.n, **report.summary()})
    write_kv(out / "diagnostics.txt", diag.summary())
    _print_kv({"converged": report.converged, "iterations": report.iterations, "residual": report.residual,
               "rho_hat": diag.rho})
    return EXIT_OK


def cmd_mms(args) -> int:
    config = _config(args)
    try:
        levels = [int(x) for x in args.levels.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"--levels must be comma-separated integers, got {args.levels!r}") from None
    if len(levels) < 3:
        raise ConfigError("need >= 3 levels for a convergence study")
    if config.forcing.family == "zero":
        raise ConfigError("a convergence study needs a nonzero forcing family")
    mode = args.mode or config.forcing.mode
    args.out.mkdir(parents=True, exist_ok=True)
    try:
        table = convergence_study(levels, config, mode=mode)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    except StudyAborted as exc:
        exc.table.write_csv(args.out / "convergence.csv")
        print(f"study aborted: {exc}", file=sys.stderr)
        return EXIT_OK
    table.write_csv(args.out / "convergence.csv")
    print("n,h,err_u_L2,err_B_L2")
    for r in table.rows:
        print(f"{r.n},{r.h:.17g},{r.err_u_L2:.17g},{r.err_B_L2:.17g}")
    print(f"order_u = {table.order_u:.17g}")
    print(f"order_B = {table.order_B:.17g}")
    if mode == "discrete":
        bound = 10 * config.outer_tol
        exact = all(max(r.err_u_L2, r.err_B_L2) <= bound for r in table.rows)
        print(f"solver-exactness = {format_value(exact)} (errors <= {bound:.3g})")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    config = _config(args)
    grid, f, g, state, report = _solve(config)
    # probed even when not converged: in the stress regime rho_hat >= 1 is the finding
    probe = _probe_or_none(state, f, g, config)
    diag = smallness_report(f, g, config, report, state, probe)
    extra = {"converged": report.converged, "iterations": report.iterations}
    if report.converged:
        _, other_report, distance = multi_start(f, g, config, reference=state)
        diag.agreement_H1 = distance
        extra["second_start_converged"] = other_report.converged
        deco = decomposition_check(state, f, g, config)
        extra["decomposition_residual"] = deco.relative_residual
        extra["decomposition_truncation_estimate"] = deco.truncation_estimate
        extra["phi_agreement"] = deco.phi_agreement
    diag.extra.update(extra)
    args.out.mkdir(parents=True, exist_ok=True)
    write_kv(args.out / "diagnostics.txt", diag.summary())
    _print_kv(diag.summary())
    return EXIT_OK


COMMANDS = {
    "check-operators": cmd_check_operators,
    "solve": cmd_solve,
    "mms": cmd_mms,
    "diagnose": cmd_diagnose,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        with fft.set_workers(_workers(args.workers)):
            return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, FloatingPointError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
