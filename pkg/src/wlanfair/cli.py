"""Command-line front end: analyze, optimize, simulate, sweep and report."""
from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import __version__, analytic, sim
from .alloc import AllocationError, jain_index, optimize
from .scenario import NetworkScenario, ScenarioError, load_scenario, save_scenario, scenario_digest

EXIT_OK, EXIT_INPUT, EXIT_SOLVER = 0, 2, 3

CSV_COLUMNS = ("scenario", "criterion", "source", "station_id", "lambda_pkt_s", "rate_bps",
               "throughput_bps", "normalized", "w0", "jain", "aggregate_bps")
SWEEP_COLUMN = "sweep_lambda_pkt_s"
OPT_CRITERIA = ("pf", "lpf", "mlpf")
MODES = ("dcf",) + OPT_CRITERIA


class UsageError(ValueError):
    pass


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.6g" % x
    return str(x)


@dataclass
class RunReport:
    """Everything a command prints; CSV and table views are rendered from the same values."""

    command: str
    scenario: str
    digest: str
    rows: list[dict] = field(default_factory=list)
    summary: list[tuple[str, object]] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    # table-only per-station columns, in display order
    extra_columns: tuple[str, ...] = ()
    sweep: bool = False

    def columns(self) -> tuple[str, ...]:
        return ((SWEEP_COLUMN,) if self.sweep else ()) + CSV_COLUMNS

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = self.columns()
        w.writerow(cols)
        for r in self.rows:
            w.writerow([fmt(r[c]) for c in cols])
        return buf.getvalue()

    def to_table(self) -> str:
        out = [f"{self.command}: {self.scenario} [{self.digest}]"]
        width = max((len(k) for k, _ in self.summary), default=0)
        for k, v in self.summary:
            out.append(f"  {k:<{width}}  {fmt(v)}")
        cols = ((SWEEP_COLUMN,) if self.sweep else ()) + (
            "criterion", "source", "station_id", "lambda_pkt_s", "rate_bps",
            "throughput_bps", "normalized", "w0") + self.extra_columns
        cells = [[fmt(r.get(c, "")) for c in cols] for r in self.rows]
        widths = [max([len(c)] + [len(row[j]) for row in cells]) for j, c in enumerate(cols)]
        out.append("")
        out.append("  ".join(c.rjust(wd) for c, wd in zip(cols, widths)))
        for row in cells:
            out.append("  ".join(v.rjust(wd) for v, wd in zip(row, widths)))
        out.append("")
        out.append("  " + ", ".join(f"{k}={fmt(v)}" for k, v in self.provenance.items()))
        return "\n".join(out) + "\n"


def station_rows(scenario: NetworkScenario, criterion: str, source: str, throughput,
                 w0, extra: dict | None = None) -> list[dict]:
    throughput = np.asarray(throughput, dtype=float)
    jain = jain_index(throughput, scenario.rates) if throughput.sum() > 0 else math.nan
    agg = float(throughput.sum())
    rows = []
    for i, st in enumerate(scenario.stations):
        r = {"scenario": scenario.name, "criterion": criterion, "source": source,
             "station_id": st.id, "lambda_pkt_s": st.lambda_pkt_s, "rate_bps": st.rate_bps,
             "throughput_bps": float(throughput[i]), "normalized": float(throughput[i] / st.rate_bps),
             "w0": int(w0[i]), "jain": jain, "aggregate_bps": agg}
        for k, vals in (extra or {}).items():
            r[k] = vals[i]
        rows.append(r)
    return rows


def _provenance(**kw) -> dict:
    return {"wlanfair": __version__, "numpy": np.__version__, **kw}


# ---------------------------------------------------------------------------
# commands


def cmd_analyze(scenario: NetworkScenario, traffic: str = "renewal") -> RunReport:
    eq = analytic.solve_equilibrium(scenario, traffic=traffic)
    rows = station_rows(scenario, "dcf", "analytic", eq.throughput, scenario.cw,
                        {"tau": eq.tau, "p_eq": eq.p_eq, "b_idle": eq.b_idle})
    sl = eq.slot
    summary = [("aggregate_bps", eq.aggregate), ("jain", rows[0]["jain"]),
               ("t_av_us", sl.t_av), ("t_idle_us", sl.t_idle), ("t_success_us", sl.t_success),
               ("t_collision_us", sl.t_collision), ("t_error_us", sl.t_error),
               ("iterations", eq.iterations)]
    return RunReport("analyze", scenario.name, scenario_digest(scenario), rows, summary,
                     _provenance(traffic=traffic), ("tau", "p_eq", "b_idle"))


def cmd_optimize(scenario: NetworkScenario, criterion: str = "mlpf",
                 write_scenario: str | None = None) -> RunReport:
    res = optimize(scenario, criterion)
    rows = station_rows(scenario, criterion, "analytic", res.throughput, res.cw,
                        {"tau": res.tau, "w0_exact": res.cw_exact, "weight": res.weights.weights})
    # what the rounded windows deliver once every chain settles again
    realised = analytic.solve_equilibrium(scenario.with_cw(res.cw))
    summary = [("aggregate_bps", res.aggregate), ("jain", res.jain), ("utility", res.utility),
               ("stationarity_residual", res.stationarity_residual),
               ("realised_aggregate_bps", realised.aggregate),
               ("realised_jain", jain_index(realised.throughput, scenario.rates))]
    if not res.reachable.all():
        bad = [scenario.ids[i] for i in np.flatnonzero(~res.reachable)]
        summary.append(("unreachable_stations", " ".join(bad)))
    if write_scenario:
        save_scenario(scenario.with_cw(res.cw), write_scenario)
    return RunReport("optimize", scenario.name, scenario_digest(scenario), rows, summary,
                     _provenance(criterion=criterion), ("tau", "w0_exact", "weight"))


def simulate_windows(scenario: NetworkScenario, criterion: str) -> np.ndarray:
    if criterion == "dcf":
        return scenario.cw.astype(int)
    return optimize(scenario, criterion).cw


def cmd_simulate(scenario: NetworkScenario, duration_s: float = 100.0, seed: int = 0,
                 runs: int = 3, criterion: str = "dcf", jobs: int = 1,
                 trace: str | None = None) -> RunReport:
    if runs < 1:
        raise UsageError("--runs must be at least 1")
    if not duration_s > 0:
        raise UsageError("--duration-s must be positive")
    cw = simulate_windows(scenario, criterion)
    seeds = list(range(seed, seed + runs))
    outs = []
    if trace:
        with open(trace, "w") as fh:
            outs.append(sim.run(scenario, cw, duration_s, seeds[0], trace=fh))
        seeds = seeds[1:]
    outs += sim.run_many(scenario, seeds, duration_s, cw, jobs)
    thr = np.array([o.throughput for o in outs])
    mean = thr.mean(axis=0)
    std = thr.std(axis=0, ddof=1) if len(outs) > 1 else np.zeros(len(scenario))
    agg = thr.sum(axis=1)
    rows = station_rows(scenario, criterion, "sim", mean, cw, {
        "throughput_std_bps": std,
        "drops": np.mean([o.drops for o in outs], axis=0),
        "collisions": np.mean([o.collisions for o in outs], axis=0),
    })
    summary = [("aggregate_bps", float(agg.mean())),
               ("aggregate_std_bps", float(agg.std(ddof=1)) if len(outs) > 1 else 0.0),
               ("jain", rows[0]["jain"]), ("runs", len(outs)), ("duration_s", duration_s)]
    return RunReport("simulate", scenario.name, scenario_digest(scenario), rows, summary,
                     _provenance(criterion=criterion, seed=seed, runs=runs),
                     ("throughput_std_bps", "drops", "collisions"))


def lambda_grid(lo: float, hi: float, steps: int, spacing: str = "log",
                include: Sequence[float] = ()) -> list[float]:
    if not (lo > 0 and hi >= lo):
        raise UsageError("lambda range must satisfy 0 < min <= max")
    if steps < 1:
        raise UsageError("--steps must be at least 1")
    if steps == 1:
        grid = np.array([lo])
    elif spacing == "log":
        grid = np.geomspace(lo, hi, steps)
    elif spacing == "linear":
        grid = np.linspace(lo, hi, steps)
    else:
        raise UsageError(f"unknown spacing {spacing!r}")
    extra = [float(x) for x in include if lo <= float(x) <= hi]
    return sorted({float("%.12g" % x) for x in np.concatenate([grid, extra])})


def sweep_point(scenario: NetworkScenario, station_id: str, lam: float, modes: Sequence[str],
                simulate: bool = False, duration_s: float = 100.0, seed: int = 0,
                runs: int = 1) -> list[dict]:
    sc = scenario.with_lambda(station_id, lam)
    rows = []
    for mode in modes:
        if mode == "dcf":
            eq = analytic.solve_equilibrium(sc)
            thr, cw = eq.throughput, sc.cw.astype(int)
        else:
            res = optimize(sc, mode)
            thr, cw = res.throughput, res.cw
        rows += station_rows(sc, mode, "analytic", thr, cw)
        if simulate:
            outs = sim.run_many(sc, list(range(seed, seed + runs)), duration_s, cw)
            rows += station_rows(sc, mode, "sim", np.mean([o.throughput for o in outs], axis=0), cw)
    for r in rows:
        r[SWEEP_COLUMN] = lam
    return rows


def cmd_sweep(scenario: NetworkScenario, station_id: str | None = None, lambda_min: float = 10.0,
              lambda_max: float = 3300.0, steps: int = 25, spacing: str = "log",
              modes: Sequence[str] = ("dcf", "lpf", "mlpf"), include: Sequence[float] = (),
              simulate: bool = False, duration_s: float = 100.0, seed: int = 0,
              runs: int = 1, jobs: int = 1) -> RunReport:
    if station_id is None:
        # the station with the lowest bit rate, as in the rate-anomaly set-up
        station_id = scenario.ids[int(np.argmin(scenario.rates))]
    scenario.index_of(station_id)
    for m in modes:
        if m not in MODES:
            raise UsageError(f"unknown mode {m!r}; expected a subset of {','.join(MODES)}")
    grid = lambda_grid(lambda_min, lambda_max, steps, spacing, include)
    args = [(scenario, station_id, lam, tuple(modes), simulate, duration_s, seed, runs)
            for lam in grid]
    if jobs > 1 and len(grid) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(sweep_point, *zip(*args)))
    else:
        parts = [sweep_point(*a) for a in args]
    rows = [r for part in parts for r in part]
    summary = [("station", station_id), ("points", len(grid)), ("modes", ",".join(modes))]
    return RunReport("sweep", scenario.name, scenario_digest(scenario), rows, summary,
                     _provenance(spacing=spacing, simulate=simulate, seed=seed, runs=runs), sweep=True)


def cmd_report(scenarios: Sequence[NetworkScenario], simulate: bool = False,
               duration_s: float = 100.0, seed: int = 0, runs: int = 3,
               jobs: int = 1) -> RunReport:
    """Aggregate throughput and Jain index of every criterion, per scenario."""
    rows, summary = [], []
    for sc in scenarios:
        for crit in MODES:
            if crit == "dcf":
                eq = analytic.solve_equilibrium(sc)
                thr, cw = eq.throughput, sc.cw.astype(int)
            else:
                res = optimize(sc, crit)
                thr, cw = res.throughput, res.cw
            part = station_rows(sc, crit, "analytic", thr, cw)
            rows += part
            summary.append((f"{sc.name} {crit} analytic", f"S={fmt(part[0]['aggregate_bps'])} "
                            f"J={fmt(part[0]['jain'])}"))
            if simulate:
                outs = sim.run_many(sc, list(range(seed, seed + runs)), duration_s, cw, jobs)
                part = station_rows(sc, crit, "sim", np.mean([o.throughput for o in outs], axis=0), cw)
                rows += part
                summary.append((f"{sc.name} {crit} sim", f"S={fmt(part[0]['aggregate_bps'])} "
                                f"J={fmt(part[0]['jain'])}"))
    name = "+".join(sc.name for sc in scenarios)
    digest = "+".join(scenario_digest(sc) for sc in scenarios)
    return RunReport("report", name, digest, rows, summary, _provenance(simulate=simulate, seed=seed, runs=runs))


# ---------------------------------------------------------------------------
# argument handling


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wlanfair", description=__doc__)
    p.add_argument("--version", action="version", version=f"wlanfair {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, sim_opts=False):
        sp.add_argument("--format", choices=("table", "csv"), default="table")
        sp.add_argument("--out", help="write output here instead of stdout")
        if sim_opts:
            sp.add_argument("--duration-s", type=float, default=100.0)
            sp.add_argument("--seed", type=int, default=0)
            sp.add_argument("--runs", type=int, default=3)
            sp.add_argument("--jobs", type=int, default=1)

    sp = sub.add_parser("analyze", help="model throughput under plain DCF")
    sp.add_argument("scenario")
    sp.add_argument("--traffic", choices=sorted(analytic.TRAFFIC_MODELS), default="renewal")
    common(sp)

    sp = sub.add_parser("optimize", help="fair contention windows for a criterion")
    sp.add_argument("scenario")
    sp.add_argument("--criterion", choices=OPT_CRITERIA, default="mlpf")
    sp.add_argument("--write-scenario", metavar="PATH",
                    help="save a copy of the scenario with cw_min set to the emitted windows")
    common(sp)

    sp = sub.add_parser("simulate", help="slot-level simulation over several seeds")
    sp.add_argument("scenario")
    sp.add_argument("--criterion", choices=MODES, default="dcf",
                    help="simulate with the windows this criterion emits (dcf keeps cw_min)")
    sp.add_argument("--trace", metavar="PATH", help="event trace of the first seed")
    common(sp, sim_opts=True)

    sp = sub.add_parser("sweep", help="throughput against one station's packet rate")
    sp.add_argument("scenario")
    sp.add_argument("--station", help="station id to sweep (default: lowest bit rate)")
    sp.add_argument("--lambda-min", type=float, default=10.0)
    sp.add_argument("--lambda-max", type=float, default=3300.0)
    sp.add_argument("--steps", type=int, default=25)
    sp.add_argument("--spacing", choices=("log", "linear"), default="log")
    sp.add_argument("--include", type=float, nargs="*", default=[500.0],
                    help="extra grid points (default: 500)")
    sp.add_argument("--modes", default="dcf,lpf,mlpf")
    sp.add_argument("--simulate", action="store_true", help="add simulated rows per point")
    common(sp, sim_opts=True)

    sp = sub.add_parser("report", help="aggregate and Jain index for every criterion")
    sp.add_argument("scenarios", nargs="+")
    sp.add_argument("--simulate", action="store_true")
    common(sp, sim_opts=True)
    return p


def dispatch(args) -> RunReport:
    if args.command == "report":
        return cmd_report([load_scenario(s) for s in args.scenarios], args.simulate,
                          args.duration_s, args.seed, args.runs, args.jobs)
    scenario = load_scenario(args.scenario)
    if args.command == "analyze":
        return cmd_analyze(scenario, args.traffic)
    if args.command == "optimize":
        return cmd_optimize(scenario, args.criterion, args.write_scenario)
    if args.command == "simulate":
        return cmd_simulate(scenario, args.duration_s, args.seed, args.runs, args.criterion,
                            args.jobs, args.trace)
    modes = [m.strip().lower() for m in args.modes.split(",") if m.strip()]
    return cmd_sweep(scenario, args.station, args.lambda_min, args.lambda_max, args.steps,
                     args.spacing, modes, args.include, args.simulate, args.duration_s,
                     args.seed, args.runs, args.jobs)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        report = dispatch(args)
    except (ScenarioError, sim.SimulationError, UsageError) as exc:
        print(f"wlanfair: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (analytic.ConvergenceError, AllocationError) as exc:
        print(f"wlanfair: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    text = report.to_csv() if args.format == "csv" else report.to_table()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
