"""Command-line front end.

    wkbport solve            --config run.json [--out DIR] [--threads K] [--grad-p MODE] [--no-s1]
    wkbport policy           --config run.json [--wealth W]
    wkbport oracle-compare   --config run.json
    wkbport backtest         --config run.json [--seed S]
    wkbport dump-trajectory  --config run.json [--y Y1,Y2,...]

Exit codes: 0 success, 1 configuration error, 2 some query points failed
(their rows are still written, with the failure in the ``status`` column).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .errors import ConfigError, WKBError
from .hamiltonian import HamiltonianSystem
from .leapfrog import TimeGrid, write_trajectory_csv
from .mcsim import SimConfig, SurfacePolicy, ExactPolicy, compare_policies, scaled_policy
from .oracle import OUOracle, cara_closed_forms, lognormal_policy, lognormal_s0
from .utility import UtilityKind
from .wkb import Numerics, characteristic, policy_at, value_at, value_surface

EXIT_OK, EXIT_CONFIG, EXIT_POINTS = 0, 1, 2


def _fmt(v) -> str:
    return f"{float(v):.17g}"


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


class Run:
    """Validated config plus the objects built from it and CLI overrides."""

    def __init__(self, cfg: RunConfig, args: argparse.Namespace):
        self.cfg = cfg
        num = cfg.numerics
        if args.grad_p is not None:
            num = num.model_copy(update={"grad_p_mode": args.grad_p})
        if args.no_s1:
            num = num.model_copy(update={"s1_enabled": False})
        self.cfg = cfg.model_copy(update={"numerics": num})
        self.model = cfg.model.build()
        self.utility = cfg.utility.build()
        self.num: Numerics = num.build()
        self.sys = HamiltonianSystem(self.model, self.utility.kappa)
        self.out = Path(args.out if args.out is not None else cfg.output.dir)
        self.threads = max(1, int(args.threads or 1))
        self.points = cfg.points()
        self.n = self.model.n

    def want(self, fmt: str) -> bool:
        return fmt in self.cfg.output.formats

    def prepare_out(self):
        self.out.mkdir(parents=True, exist_ok=True)

    def grid(self, t: float) -> TimeGrid:
        return TimeGrid(t, self.cfg.horizon, self.num.N)

    def cols(self, name: str) -> list[str]:
        return [f"{name}_{i + 1}" for i in range(self.n)]


# -- subcommands ----------------------------------------------------------------


def cmd_solve(run: Run) -> int:
    t_start = time.perf_counter()
    w = run.cfg.policy.wealth
    ara = run.utility.absolute_risk_aversion(w)
    header = ["t"] + run.cols("x") + ["S0", "S1"] + run.cols("p") + run.cols("phi") + ["newton_iters", "residual", "status"]
    rows, iters, drifts, fails = [], [], [], 0
    timings = {}
    for t in run.cfg.query_times:
        t0 = time.perf_counter()
        results = value_surface(
            run.sys, t, run.cfg.horizon, run.points, run.num, threads=run.threads, with_grad_s1=run.num.s1_enabled
        )
        timings[_fmt(t)] = time.perf_counter() - t0
        for r in results:
            if r.ok:
                phi = (run.model.myopic_direction(r.x) + r.p + r.gradS1) / ara
                iters.append(r.newton_iters)
                drifts.append(r.h_drift)
            else:
                phi = np.full(run.n, np.nan)
                fails += 1
            rows.append(
                [_fmt(t)]
                + [_fmt(v) for v in r.x]
                + [_fmt(r.S0), _fmt(r.S1)]
                + [_fmt(v) for v in r.p]
                + [_fmt(v) for v in phi]
                + [r.newton_iters, _fmt(r.residual), r.status]
            )
    run.prepare_out()
    if run.want("csv"):
        _write_atomic(run.out / "surface.csv", _csv_text(header, rows))
    summary = {
        "command": "solve",
        "points": len(rows),
        "failures": fails,
        "seconds_total": time.perf_counter() - t_start,
        "seconds_by_time": timings,
        "newton_iterations": {
            "mean": float(np.mean(iters)) if iters else None,
            "max": int(np.max(iters)) if iters else None,
        },
        "hamiltonian_drift_max": float(np.max(drifts)) if drifts else None,
        "config": run.cfg.model_dump(by_alias=True, mode="json"),
    }
    if run.want("json"):
        _write_atomic(run.out / "summary.json", json.dumps(summary, indent=2))
    print(f"solve: {len(rows)} points, {fails} failed, {summary['seconds_total']:.3f} s -> {run.out}")
    return EXIT_POINTS if fails else EXIT_OK


def cmd_policy(run: Run, wealth: float | None = None) -> int:
    w = run.cfg.policy.wealth if wealth is None else wealth
    if not run.utility.in_domain(w):
        raise ConfigError(f"wealth {w} outside the utility domain")
    header = ["t"] + run.cols("x") + ["w"] + run.cols("phi") + run.cols("myopic") + run.cols("hedging") + ["status"]
    rows, fails = [], 0
    for t in run.cfg.query_times:
        grid = run.grid(t)
        for x in run.points:
            try:
                pr = policy_at(run.sys, run.utility, grid, x, w, run.num)
                vals, status = (pr.phi, pr.myopic, pr.hedging), "ok"
            except (WKBError, ValueError, np.linalg.LinAlgError) as exc:
                nan = np.full(run.n, np.nan)
                vals, status = (nan, nan, nan), f"{type(exc).__name__}: {exc}"
                fails += 1
            rows.append([_fmt(t)] + [_fmt(v) for v in x] + [_fmt(w)] + [_fmt(v) for arr in vals for v in arr] + [status])
    run.prepare_out()
    _write_atomic(run.out / "policy.csv", _csv_text(header, rows))
    print(f"policy: {len(rows)} points, {fails} failed -> {run.out / 'policy.csv'}")
    return EXIT_POINTS if fails else EXIT_OK


def _oracle_rows(run: Run) -> list[tuple[str, float, float]]:
    """(quantity, pipeline, oracle) triples for every query (t, x)."""
    T = run.cfg.horizon
    out = []
    w = run.cfg.policy.wealth
    ara = run.utility.absolute_risk_aversion(w)
    kind = run.cfg.model.kind
    cara = run.utility.kind is UtilityKind.CARA
    num = replace(run.num, s1_enabled=True)
    ou = OUOracle.from_model(run.model, run.sys.kappa) if kind == "ou" and not cara else None
    for t in run.cfg.query_times:
        grid = run.grid(t)
        for x in run.points:
            tag = f"[t={t:g},x=({','.join(f'{v:g}' for v in x)})]"
            res = value_at(run.sys, grid, x, num)
            if cara:
                ref = cara_closed_forms(run.model, t, T, x)
                out += [("S0" + tag, res.S0, ref["S0"]), ("S1" + tag, res.S1, ref["S1"])]
                continue
            if kind == "lognormal":
                mu = run.model.params["mu"]
                c = run.model.covariance(np.ones(run.n))
                s0_ref, s1_ref = lognormal_s0(mu, c, run.sys.kappa, t, T), 0.0
                phi_ref = lognormal_policy(mu, c, ara, x)
            else:
                s0_ref, s1_ref = ou.s0(t, T, x), ou.s1(t, T)
                phi_ref = ou.policy(t, T, x, ara)
            out += [("S0" + tag, res.S0, s0_ref), ("S1" + tag, res.S1, s1_ref)]
            # the exact families have x-independent S1, so phi uses p alone
            phi = (run.model.myopic_direction(x) + res.p) / ara
            out += [(f"phi_{i + 1}{tag}", phi[i], phi_ref[i]) for i in range(run.n)]
    return out


def cmd_oracle_compare(run: Run) -> int:
    rows = _oracle_rows(run)
    header = ["quantity", "pipeline", "oracle", "abs_err", "rel_err"]
    table = []
    for q, a, b in rows:
        err = abs(a - b)
        table.append([q, _fmt(a), _fmt(b), _fmt(err), _fmt(err / abs(b) if b != 0 else err)])
    run.prepare_out()
    _write_atomic(run.out / "oracle_compare.csv", _csv_text(header, table))
    width = max(len(r[0]) for r in table)
    print(f"{'quantity':<{width}}  {'pipeline':>24}  {'oracle':>24}  {'abs_err':>10}  {'rel_err':>10}")
    for q, a, b in rows:
        err = abs(a - b)
        rel = err / abs(b) if b != 0 else err
        print(f"{q:<{width}}  {a:>24.17g}  {b:>24.17g}  {err:>10.3e}  {rel:>10.3e}")
    print(f"max abs error {max(abs(a - b) for _, a, b in rows):.3e}")
    return EXIT_OK


def cmd_backtest(run: Run, seed: int | None = None) -> int:
    bt = run.cfg.backtest
    if bt is None:
        raise ConfigError("backtest needs a 'backtest' section")
    sim = SimConfig(paths=bt.paths, steps=bt.steps, seed=bt.seed if seed is None else seed, scheme=bt.scheme)
    T = run.cfg.horizon
    if bt.mode == "exact":
        pol = ExactPolicy(run.sys, run.utility, T, run.num)
        jump = 0.0
    else:
        if bt.surface_grid is not None:
            axes = bt.surface_grid.axes()
        else:
            axes = [[v] for v in bt.x0]
        times = np.linspace(0.0, T, bt.surface_times + 1)[:-1] if bt.surface_times > 1 else [0.0]
        pol = SurfacePolicy.build(run.sys, run.utility, T, times, axes, run.num, threads=run.threads)
        jump = pol.max_cell_jump
    others = {}
    for i in range(run.n):
        for sign in (-1, 1):
            fac = np.ones(run.n)
            fac[i] += sign * bt.bump
            others[f"bump_{i + 1}_{'+' if sign > 0 else '-'}{bt.bump:g}"] = scaled_policy(pol, fac)
    comps = compare_policies(run.model, run.utility, pol, others, bt.x0, bt.w0, T, sim, reference_name="pipeline")
    header = ["policy", "mean", "stderr", "absorbed", "diff_vs_pipeline", "diff_stderr"]
    rows = [[c.name, _fmt(c.mean), _fmt(c.stderr), c.absorbed, _fmt(c.diff), _fmt(c.diff_stderr)] for c in comps]
    run.prepare_out()
    _write_atomic(run.out / "backtest.csv", _csv_text(header, rows))
    for c in comps:
        print(f"{c.name:<16} mean {c.mean:.8g} +- {c.stderr:.2e}  diff {c.diff:+.3e} +- {c.diff_stderr:.2e}")
    print(f"surface lookup bound (max neighbouring jump): {jump:.3e}")
    return EXIT_OK


def cmd_dump_trajectory(run: Run, y=None) -> int:
    tr = run.cfg.trajectory
    if y is None:
        if tr is None:
            raise ConfigError("dump-trajectory needs --y or a 'trajectory' section")
        y = tr.y
    y = np.asarray(y, dtype=float)
    if y.size != run.n:
        raise ConfigError(f"terminal point has {y.size} entries, the model has {run.n} assets")
    t = tr.t if tr is not None and tr.t is not None else run.cfg.query_times[0]
    grid = run.grid(t)
    traj = characteristic(run.sys, grid, y, run.num)
    run.prepare_out()
    path = run.out / "trajectory.csv"
    write_trajectory_csv(traj, path)
    print(f"trajectory: {len(traj.times) if t < grid.T else 1} rows -> {path}")
    return EXIT_OK


# -- entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON run configuration (or a previous summary.json)")
    common.add_argument("--out", default=None, help="output directory (overrides output.dir)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for query points")
    common.add_argument("--grad-p", choices=["bump", "trajectory"], default=None, help="estimator for grad p in S1")
    common.add_argument("--no-s1", action="store_true", help="leading order only")
    common.add_argument("--seed", type=int, default=None, help="Monte Carlo seed (backtest)")

    parser = argparse.ArgumentParser(prog="wkbport", description="Semiclassical portfolio solver")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="value surface S0, S1, p, phi")
    pp = sub.add_parser("policy", parents=[common], help="optimal allocation split into myopic and hedging parts")
    pp.add_argument("--wealth", type=float, default=None)
    sub.add_parser("oracle-compare", parents=[common], help="pipeline against closed forms")
    sub.add_parser("backtest", parents=[common], help="Monte Carlo check against perturbed policies")
    dp = sub.add_parser("dump-trajectory", parents=[common], help="write one characteristic as CSV")
    dp.add_argument("--y", default=None, help="terminal point, comma separated")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run = Run(load_config(args.config), args)
        if args.command == "solve":
            return cmd_solve(run)
        if args.command == "policy":
            return cmd_policy(run, args.wealth)
        if args.command == "oracle-compare":
            return cmd_oracle_compare(run)
        if args.command == "backtest":
            return cmd_backtest(run, args.seed)
        try:
            y = None if args.y is None else [float(v) for v in args.y.split(",")]
        except ValueError as exc:
            raise ConfigError(f"cannot parse --y {args.y!r}") from exc
        return cmd_dump_trajectory(run, y)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (WKBError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_POINTS


if __name__ == "__main__":
    sys.exit(main())
