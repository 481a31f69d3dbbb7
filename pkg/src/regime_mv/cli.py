"""Command-line front end.

Every subcommand reads one JSON model file.  Results go to standard output or
to the files named by the output flags; diagnostics go to standard error.
Exit codes: 0 success, 1 invalid model or infeasible target, 2 solver
failure, 3 usage error.  Regimes are numbered from 1 on the command line.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from regime_mv import mc_engine, model_io, ode_core
from regime_mv.errors import InfeasibleError, ModeError, ModelError, SolverError
from regime_mv.market_model import ConstraintMode, MarketModel, check_feasibility, validate_model
from regime_mv.policy_frontier import (FrontierQuery, feedback_noshort, feedback_unconstrained,
                                       frontier, frontier_csv, frontier_json)
from regime_mv.riccati_constrained import solve_constrained
from regime_mv.riccati_unconstrained import check_positivity, solve

EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_USAGE = 0, 1, 2, 3
MIN_STEPS = 100

log = logging.getLogger("regime_mv")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _mode(text: str) -> ConstraintMode:
    try:
        return ConstraintMode.parse(text)
    except ModelError:
        raise argparse.ArgumentTypeError(f"expected 'unconstrained' or 'noshort', got {text!r}")


def _steps(text: str) -> int:
    n = int(text)
    if n < MIN_STEPS:
        raise argparse.ArgumentTypeError(f"need at least {MIN_STEPS} grid steps")
    return n


def _positive_int(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="regime-mv", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, help, *, mode=True, steps=True):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("model", type=Path, help="JSON model file")
        if mode:
            sp.add_argument("--mode", type=_mode, required=True,
                            help="unconstrained or noshort")
        if steps:
            sp.add_argument("--grid-steps", type=_steps, default=ode_core.DEFAULT_STEPS,
                            help="uniform RK4 steps before breakpoint insertion")
        return sp

    command("validate", "check model invariants", mode=False, steps=False)

    sp = command("feasible", "check the feasibility condition", steps=False)
    sp.add_argument("--i0", type=int, default=1, help="initial regime")

    sp = command("solve", "emit the Riccati solution as CSV")
    sp.add_argument("--out", type=Path, help="CSV path (default: stdout)")

    sp = command("frontier", "efficient frontier over a range of target means")
    sp.add_argument("--x", type=float, required=True, help="initial wealth")
    sp.add_argument("--i0", type=int, required=True)
    sp.add_argument("--z-from", type=float, required=True)
    sp.add_argument("--z-to", type=float, required=True)
    sp.add_argument("--z-count", type=_positive_int, required=True)
    sp.add_argument("--csv", type=Path, help="frontier CSV path (default: stdout)")
    sp.add_argument("--json", type=Path, help="frontier JSON report path")

    sp = command("policy", "optimal portfolio at one state")
    sp.add_argument("--t", type=float, required=True)
    sp.add_argument("--wealth", type=float, required=True)
    sp.add_argument("--regime", type=int, required=True)
    sp.add_argument("--lambda", dest="lam", type=float, required=True)

    sp = command("simulate", "Monte-Carlo check of one frontier point")
    sp.add_argument("--x", type=float, required=True)
    sp.add_argument("--i0", type=int, required=True)
    sp.add_argument("--z", type=float, required=True)
    sp.add_argument("--paths", type=_positive_int, default=100_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--substeps", type=_positive_int, default=200,
                    help="diffusion Euler steps per unit time")
    sp.add_argument("--out", type=Path, help="report JSON path (default: stdout)")
    sp.add_argument("--dump-paths", type=Path, help="write terminal wealth per path as CSV")
    return p


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _emit(text: str, path: Path | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text)


def _regime(model: MarketModel, label: int, flag: str) -> int:
    if not 1 <= label <= model.ell:
        raise UsageError(f"{flag} must be between 1 and {model.ell}, got {label}")
    return label - 1


def _read(path: Path) -> MarketModel:
    try:
        text = path.read_text()
    except OSError as exc:
        raise UsageError(f"cannot read model file: {exc}") from None
    return model_io.loads(text)


def _load(path: Path) -> MarketModel:
    model = _read(path)
    report = validate_model(model)
    if not report.ok:
        for v in report:
            print(f"violation: {v}", file=sys.stderr)
        raise ModelError(f"{len(report)} model invariant(s) violated")
    return model


def _solve(model: MarketModel, mode: ConstraintMode, n_steps: int):
    if mode is ConstraintMode.UNCONSTRAINED:
        return solve(model, n_steps)
    if not model.rate_is_regime_independent:
        raise ModeError("no-shorting mode needs a regime-independent interest rate")
    return solve_constrained(model, n_steps)


def _require_feasible(model, mode, i0, sol=None):
    feasible, diag = check_feasibility(model, mode, i0)
    if not feasible:
        raise InfeasibleError(f"model infeasible in {mode.value} mode (diagnostic {diag:.3g})")
    if sol is not None and mode is ConstraintMode.UNCONSTRAINED:
        pos = check_positivity(sol, model, i0)
        if not pos.budget_pos:
            raise InfeasibleError(f"1 - P0 h0^2 - K0 = {pos.values[1]:.3g} is not positive")


def _cmd_validate(args) -> int:
    report = validate_model(_read(args.model))
    for v in report:
        print(f"violation: {v}", file=sys.stderr)
    if report.ok:
        print("ok")
        return EXIT_OK
    return EXIT_INVALID


def _cmd_feasible(args) -> int:
    model = _load(args.model)
    i0 = _regime(model, args.i0, "--i0")
    feasible, diag = check_feasibility(model, args.mode, i0)
    print(json.dumps({"mode": args.mode.value, "i0": args.i0, "feasible": bool(feasible),
                      "diagnostic": float(diag)}))
    return EXIT_OK if feasible else EXIT_INVALID


def _cmd_solve(args) -> int:
    model = _load(args.model)
    _emit(_solve(model, args.mode, args.grid_steps).to_csv(), args.out)
    return EXIT_OK


def _cmd_frontier(args) -> int:
    model = _load(args.model)
    i0 = _regime(model, args.i0, "--i0")
    _require_feasible(model, args.mode, i0)
    sol = _solve(model, args.mode, args.grid_steps)
    _require_feasible(model, args.mode, i0, sol)
    zs = np.linspace(args.z_from, args.z_to, args.z_count)
    points = frontier(sol, model, args.x, i0, args.mode, zs)
    _emit(frontier_csv(points), args.csv)
    if args.json is not None:
        args.json.write_text(frontier_json(points, mode=args.mode.value, x=args.x,
                                           i0=args.i0, grid_steps=args.grid_steps) + "\n")
    return EXIT_OK


def _cmd_policy(args) -> int:
    model = _load(args.model)
    i = _regime(model, args.regime, "--regime")
    if not 0.0 <= args.t <= model.horizon:
        raise UsageError(f"--t must lie in [0, {model.horizon}]")
    sol = _solve(model, args.mode, args.grid_steps)
    if args.mode is ConstraintMode.UNCONSTRAINED:
        pi = feedback_unconstrained(sol, args.t, args.wealth, i, args.lam)
    else:
        pi = feedback_noshort(sol, args.t, args.wealth, i, args.lam)
    print(",".join(_fmt(v) for v in pi))
    return EXIT_OK


def _cmd_simulate(args) -> int:
    model = _load(args.model)
    i0 = _regime(model, args.i0, "--i0")
    if not 0 <= args.seed < 2 ** 64:
        raise UsageError("--seed must be a 64-bit unsigned integer")
    _require_feasible(model, args.mode, i0)
    sol = _solve(model, args.mode, args.grid_steps)
    config = mc_engine.SimConfig(paths=args.paths, master_seed=args.seed,
                                 diffusion_substeps_per_unit=args.substeps, mode=args.mode)
    report, X = mc_engine.verify_frontier(model, sol, FrontierQuery(args.x, i0, args.z, args.mode),
                                          config, return_samples=True)
    _emit(report.to_json(), args.out)
    if args.dump_paths is not None:
        args.dump_paths.write_text("terminal_wealth\n" + "".join(_fmt(v) + "\n" for v in X))
    if not report.passed:
        log.warning("simulated moments disagree with the closed form")
    return EXIT_OK


COMMANDS = {
    "validate": _cmd_validate,
    "feasible": _cmd_feasible,
    "solve": _cmd_solve,
    "frontier": _cmd_frontier,
    "policy": _cmd_policy,
    "simulate": _cmd_simulate,
}


def run(argv: Sequence[str] | None = None) -> int:
    """Parse ``argv``, dispatch, and map failures to exit codes."""
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    if not logging.getLogger().handlers:
        logging.basicConfig(stream=sys.stderr, format="%(levelname)s: %(message)s")
    log.setLevel(logging.INFO if args.verbose else logging.WARNING)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ModelError, InfeasibleError, ModeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
