"""Command line: solve, sweep, check, oracle, elasticity.

Exit codes: 0 all certificates pass, 1 a certificate fails, 2 usage error,
3 invalid scenario or utility, 4 no strictly positive dual member
(arbitrage), 5 numerical failure in the solver.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import report
from .errors import ArbitrageError, FinancingError, ScenarioError, SizeGuardError, SolverError, UtilityError
from .io import load_scenario, utility_from_spec
from .market_model import validate_scenario
from .scenarios import BUILDERS, random_scenario
from .solver import (
    DualOptions,
    brute_force_primal,
    budget_check,
    cumulative,
    financing_lp,
    recover_portfolio,
    solve,
)
from .utility import asymptotic_elasticity, scenario_domain

EXIT_OK, EXIT_CERT, EXIT_USAGE, EXIT_SCENARIO, EXIT_ARBITRAGE, EXIT_SOLVER = 0, 1, 2, 3, 4, 5

log = logging.getLogger("scenario_duality")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _param(text: str):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    k, v = text.split("=", 1)
    return k, yaml.safe_load(v)


def _utility_arg(text: str):
    """'log', 'power:0.5', or an inline YAML mapping."""
    if ":" in text and not text.lstrip().startswith("{"):
        fam, val = text.split(":", 1)
        if fam == "power":
            return {"family": "power", "alpha": float(val)}
        raise argparse.ArgumentTypeError(f"shorthand only exists for power, got {text!r}")
    doc = yaml.safe_load(text)
    return {"family": doc} if isinstance(doc, str) else doc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scenario-duality", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", type=Path, help="scenario file (YAML)")
    src.add_argument("--builder", choices=sorted(BUILDERS) + ["random"], help="build a canonical scenario")
    common.add_argument("--param", type=_param, action="append", default=[], help="builder parameter key=value")
    common.add_argument("--utility", type=_utility_arg, help="utility override: log, power:A or a YAML mapping")
    common.add_argument("--seed", type=int, default=0, help="seed for the random builder")
    common.add_argument("--tol", type=float, default=1e-13, help="dual optimality tolerance (relative)")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--no-figures", action="store_true", help="skip matplotlib figures")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", parents=[common], help="solve for one or more initial wealths")
    sp.add_argument("--x", type=float, action="append", help="initial wealth (repeatable, default 1)")

    sw = sub.add_parser("sweep", parents=[common], help="value functions on x and y grids")
    sw.add_argument("--x", type=_floats, default=[0.5, 1.0, 2.0, 4.0], help="comma-separated x grid")
    sw.add_argument("--y-grid", type=_floats, default=[0.25, 0.5, 1.0, 2.0, 4.0], help="comma-separated y grid")

    ck = sub.add_parser("check", parents=[common], help="budget and financing certificates for a given plan")
    ck.add_argument("--x", type=float, required=True)
    ck.add_argument("--plan", type=Path, required=True, help="CSV with columns node_id,c")

    oc = sub.add_parser("oracle", parents=[common], help="brute-force primal referee against the dual solve")
    oc.add_argument("--x", type=float, default=1.0)

    el = sub.add_parser("elasticity", parents=[common], help="asymptotic elasticity report of the utility")
    el.add_argument("--x-max", type=float, default=1e6)
    el.add_argument("--gamma", type=float, action="append", default=[])
    return p


def _load(args):
    if args.scenario is not None:
        s, U = load_scenario(args.scenario)
    elif args.builder == "random":
        # the exhaustive referee only handles small trees
        inst = random_scenario(args.seed, max_charged=8 if args.command == "oracle" else None)
        s, U = inst.scenario, inst.field
    else:
        try:
            s = BUILDERS[args.builder](**dict(args.param))
        except TypeError as exc:
            raise ScenarioError(f"builder parameters: {exc}") from exc
        U = None
    if args.utility is not None or U is None:
        U = utility_from_spec(args.utility or {"family": "log"}, s)
    validate_scenario(s).raise_if_failed()
    return s, U


def cmd_solve(args, s, U, opts):
    xs = args.x or [1.0]
    res = report.run(s, U, xs, args.out, figures=not args.no_figures, opts=opts)
    for sol in res.solutions:
        print(f"x={report.fmt(sol.x)} y={report.fmt(sol.y)} U={report.fmt(sol.primal_value)} gap={sol.gap:.3e} ok={sol.ok}")
    return EXIT_OK if res.ok else EXIT_CERT


def cmd_sweep(args, s, U, opts):
    try:
        res = report.sweep(s, U, args.x, args.y_grid, args.out, figures=not args.no_figures, opts=opts)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for k, v in sorted(res.flags.items()):
        print(f"{k}: {v}")
    return EXIT_OK if all(res.flags.values()) else EXIT_CERT


def _read_plan(path: Path, s):
    c = np.zeros(s.tree.n_nodes)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "node_id" not in rows[0] or "c" not in rows[0]:
        raise ScenarioError(f"{path}: plan needs columns node_id,c")
    labels = [str(lab) for lab in s.tree.labels]
    for i, row in enumerate(rows):
        if row["node_id"] not in labels:
            raise ScenarioError(f"{path}: row {i + 2}: unknown node id {row['node_id']!r}")
        c[labels.index(row["node_id"])] = float(row["c"])
    return c


def cmd_check(args, s, U, opts):
    c = _read_plan(args.plan, s)
    C = cumulative(s, c)
    b = budget_check(s, C, args.x)
    feasible_lp, worst_wealth = financing_lp(s, C, args.x)
    try:
        recover_portfolio(s, C, args.x)
        financed = True
    except FinancingError:
        financed = False
    args.out.mkdir(parents=True, exist_ok=True)
    rows = [
        ["budget_slack", b.slack],
        ["budget_method", b.method],
        ["financed_recursion", financed],
        ["financed_global_lp", feasible_lp],
        ["worst_terminal_wealth", worst_wealth],
    ]
    report.write_csv(args.out / "check.csv", ["certificate", "value"], rows)
    for k, v in rows:
        print(f"{k}: {report.fmt(v)}")
    ok = b.slack <= 1e-9 * max(1.0, args.x) and financed and feasible_lp
    return EXIT_OK if ok else EXIT_CERT


def cmd_oracle(args, s, U, opts):
    sol = solve(s, U, args.x, opts, portfolio=False)
    o = brute_force_primal(s, U, args.x)
    rel = abs(o.value - sol.primal_value) / max(1.0, abs(sol.primal_value))
    args.out.mkdir(parents=True, exist_ok=True)
    report.write_csv(
        args.out / "oracle.csv",
        ["x", "dual_route_value", "oracle_value", "relative_difference", "oracle_evaluations"],
        [[args.x, sol.primal_value, o.value, rel, o.evaluations]],
    )
    print(f"dual route {report.fmt(sol.primal_value)}  oracle {report.fmt(o.value)}  rel diff {rel:.3e}")
    return EXIT_OK if rel <= 1e-4 else EXIT_CERT


def cmd_elasticity(args, s, U, opts):
    rep = asymptotic_elasticity(U, scenario_domain(s), x_max=args.x_max, gammas=args.gamma)
    args.out.mkdir(parents=True, exist_ok=True)
    rows = [["estimate", rep.estimate], ["tail", rep.tail], ["reasonably_elastic", rep.reasonably_elastic]]
    for g, chk in sorted(rep.gamma_checks.items()):
        for k, v in sorted(chk.items()):
            rows.append([f"gamma={report.fmt(g)}:{k}", "none" if v is None else v])
    report.write_csv(args.out / "elasticity.csv", ["quantity", "value"], rows)
    for k, v in rows:
        print(f"{k}: {report.fmt(v)}")
    return EXIT_OK if rep.reasonably_elastic else EXIT_CERT


COMMANDS = {
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "check": cmd_check,
    "oracle": cmd_oracle,
    "elasticity": cmd_elasticity,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    opts = DualOptions(tol_opt=args.tol)
    try:
        s, U = _load(args)
        return COMMANDS[args.command](args, s, U, opts)
    except ArbitrageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARBITRAGE
    except (ScenarioError, UtilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except (SolverError, FinancingError, SizeGuardError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
