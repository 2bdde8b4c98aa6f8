"""Deterministic CSV/JSON emission and matplotlib figures for solver runs."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .market_model import MarketScenario
from .solver import DualProblem, Solution, solve

RESULT_FORMAT = "run_result/1"
SUMMARY_COLUMNS = ["x", "y", "primal_value", "dual_value", "gap", "budget_slack", "vi_worst", "certified"]


def fmt(v) -> str:
    """17 significant digits; integers and booleans as such."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, ".17g")


def write_csv(path, header, rows) -> None:
    """Comma-separated, header row, LF line endings."""
    lines = [",".join(header)] + [",".join(fmt(v) for v in row) for row in rows]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return None if not math.isfinite(f) else f
    return v


def solution_record(sol: Solution, s: MarketScenario) -> dict:
    """Flattened solution with per-node arrays keyed by node id."""
    labels = [str(lab) for lab in s.tree.labels]
    return _jsonable(
        {
            "format": RESULT_FORMAT,
            "scenario": s.name,
            "x": sol.x,
            "y": sol.y,
            "primal_value": sol.primal_value,
            "dual_value": sol.dual_value,
            "gap": sol.gap,
            "budget_slack": sol.budget_slack,
            "vi_worst": sol.vi_worst,
            "certificates": sol.certificates,
            "diagnostics": {k: v for k, v in sol.diagnostics.items() if not isinstance(v, str)},
            "q_hat": sol.q_hat,
            "nodes": labels,
            "c_hat": sol.c_hat,
            "Y": sol.Y,
            "H_hat": sol.H_hat,
            "wealth": sol.wealth,
        }
    )


def summary_row(sol: Solution):
    return [sol.x, sol.y, sol.primal_value, sol.dual_value, sol.gap, sol.budget_slack, sol.vi_worst, sol.ok]


def path_rows(sol: Solution, s: MarketScenario):
    tree = s.tree
    header = ["node_id", "time_index", "time", "c_hat", "Y", "wealth", "C"] + [f"H{j}" for j in range(s.d)]
    rows = []
    for n in range(tree.n_nodes):
        ti = int(tree.time_index[n])
        rows.append(
            [str(tree.labels[n]), ti, tree.time_grid[ti], sol.c_hat[n], sol.Y[n], sol.wealth[n], sol.C[n]]
            + list(sol.H_hat[n])
        )
    return header, rows


@dataclass
class RunOutput:
    solutions: list
    files: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(sol.ok for sol in self.solutions)


def run(s: MarketScenario, U, xs, out: Path, figures: bool = True, opts=None) -> RunOutput:
    """Solve for every x (in input order), persist summary, per-run paths and JSON records."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    sols = [solve(s, U, float(x), opts) for x in xs]
    files = []
    write_csv(out / "summary.csv", SUMMARY_COLUMNS, [summary_row(sol) for sol in sols])
    files.append(out / "summary.csv")
    for i, sol in enumerate(sols):
        header, rows = path_rows(sol, s)
        p = out / f"paths_{i:03d}.csv"
        write_csv(p, header, rows)
        files.append(p)
    records = [solution_record(sol, s) for sol in sols]
    (out / "results.json").write_text(json.dumps(records, indent=1, allow_nan=False) + "\n")
    files.append(out / "results.json")
    if figures:
        files.append(plot_consumption(sols, s, out / "consumption.png"))
    return RunOutput(sols, files)


@dataclass
class SweepOutput:
    x_rows: list
    y_rows: list
    flags: dict


def sweep(s: MarketScenario, U, xs, ys, out: Path, figures: bool = True, opts=None) -> SweepOutput:
    """Value functions on grids with finite-difference and formula derivatives plus shape flags.

    Central differences use h = 1e-4 max(1, |x|).
    """
    xs = [float(x) for x in xs]
    ys = [float(y) for y in ys]
    if len(xs) < 3 or len(ys) < 3:
        raise ValueError("sweep needs at least 3 points on each grid")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    dp = DualProblem(s, U)
    x_rows = []
    for x in xs:
        sol = solve(s, U, x, opts, portfolio=False)
        h = 1e-4 * max(1.0, abs(x))
        up = solve(s, U, x + h, opts, portfolio=False).primal_value
        dn = solve(s, U, x - h, opts, portfolio=False).primal_value
        x_rows.append([x, sol.primal_value, (up - dn) / (2 * h), sol.y])
    y_rows = []
    q = None
    for y in ys:
        r = dp.solve(y, q, opts)
        q = r.q
        h = 1e-4 * max(1.0, abs(y))
        vp = dp.solve(y + h, q, opts).value
        vm = dp.solve(y - h, q, opts).value
        y_rows.append([y, r.value, dp.derivative(y, r.q), (vp - vm) / (2 * h)])
    flags = shape_flags(x_rows, y_rows)
    write_csv(out / "value_primal.csv", ["x", "U", "dU_fd", "y"], x_rows)
    write_csv(out / "value_dual.csv", ["y", "V", "dV", "dV_fd"], y_rows)
    write_csv(out / "shape_flags.csv", ["flag", "value"], sorted(flags.items()))
    if figures:
        plot_values(x_rows, y_rows, out / "value_functions.png")
    return SweepOutput(x_rows, y_rows, flags)


def shape_flags(x_rows, y_rows, tol: float = 1e-9) -> dict:
    x = np.array([r[0] for r in x_rows])
    Uv = np.array([r[1] for r in x_rows])
    dU = np.array([r[2] for r in x_rows])
    y = np.array([r[0] for r in y_rows])
    Vv = np.array([r[1] for r in y_rows])
    dV = np.array([r[2] for r in y_rows])
    dVfd = np.array([r[3] for r in y_rows])

    def chord_ok(t, f, sign):
        # f(t_mid) vs linear interpolation of neighbours; sign=+1 concave, -1 convex
        ok = True
        for i in range(1, t.size - 1):
            lam = (t[i + 1] - t[i]) / (t[i + 1] - t[i - 1])
            interp = lam * f[i - 1] + (1 - lam) * f[i + 1]
            ok &= bool(sign * (f[i] - interp) >= -tol * max(1.0, abs(f[i])))
        return ok

    rel = np.abs(dV - dVfd) / np.maximum(1.0, np.abs(dV))
    return {
        "U_increasing": bool(np.all(np.diff(Uv) > 0)),
        "U_concave": chord_ok(x, Uv, 1),
        "dU_decreasing": bool(np.all(np.diff(dU) < 0)),
        "V_convex": chord_ok(y, Vv, -1),
        "dV_nondecreasing": bool(np.all(np.diff(dV) >= -tol)),
        "dV_matches_fd": bool(np.all(rel <= 1e-4)),
    }


# ---------------------------------------------------------------------------
# figures


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path):
    fig.savefig(path, dpi=100, metadata={"Software": None})
    return Path(path)


def plot_consumption(sols, s: MarketScenario, path) -> Path:
    plt = _pyplot()
    tree = s.tree
    fig, ax = plt.subplots(figsize=(6, 3.5))
    charged = s.charged
    for sol in sols:
        ax.plot(range(charged.size), sol.c_hat[charged], marker="o", label=f"x = {sol.x:g}")
    ax.set_xticks(range(charged.size))
    ax.set_xticklabels([str(tree.labels[n]) for n in charged], rotation=60, fontsize=7)
    ax.set_ylabel("optimal consumption rate")
    ax.set_xlabel("charged node")
    ax.legend(fontsize=7)
    fig.tight_layout()
    out = _save(fig, path)
    plt.close(fig)
    return out


def plot_values(x_rows, y_rows, path) -> Path:
    plt = _pyplot()
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3.2))
    a1.plot([r[0] for r in x_rows], [r[1] for r in x_rows], marker="o")
    a1.set_xlabel("x")
    a1.set_ylabel("primal value")
    a2.plot([r[0] for r in y_rows], [r[1] for r in y_rows], marker="o")
    a2.set_xscale("log")
    a2.set_xlabel("y")
    a2.set_ylabel("dual value")
    fig.tight_layout()
    out = _save(fig, path)
    plt.close(fig)
    return out
