"""Command-line entry point: ``mavsim <subcommand> ...``.

Exit status: 0 when every threshold passes, 1 on a threshold violation,
2 on a configuration or usage error, 3 when the simulation aborts. Failures
print a JSON summary on stdout.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .airframe import (DEFAULT_COMPONENTS, AirframeConfig, BatteryState, power_budget,
                       scaling_feasibility)
from .config import ConfigError, dump_scenario, get_path, load_scenario, set_path
from .plots import PRESETS, UnknownSeriesError, emit_plot_data
from .sim import MetricsReport, RunLog, Simulation, SimulationAborted, _jsonable

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2, 3

SWEEP_COLUMNS = ("rms_attitude_error", "max_tilt", "drift_distance", "max_height_error",
                 "min_obstacle_distance", "deadline_misses", "endurance_estimate_min")


def _emit(obj) -> None:
    print(json.dumps(_jsonable(obj), indent=2, sort_keys=True))


def write_run(cfg: dict, out: Path, png: bool = True) -> MetricsReport:
    """Run ``cfg`` and write the full output directory."""
    log, report = Simulation(cfg).run()
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(dump_scenario(cfg) + "\n")
    (out / "runlog.csv").write_text(log.to_csv())
    (out / "annotations.json").write_text(
        json.dumps(_jsonable(log.annotations), indent=2) + "\n")
    (out / "metrics.json").write_text(report.to_json() + "\n")
    for preset in PRESETS:
        emit_plot_data(log, preset, out / "plots", png=png)
    return report


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _sweep_one(args: tuple) -> tuple[str, dict | str]:
    cfg, out, png = args
    try:
        report = write_run(cfg, Path(out), png)
    except SimulationAborted as exc:
        return out, str(exc)
    return out, report.to_dict()


def cmd_run(ns) -> int:
    cfg = load_scenario(ns.config)
    if ns.seed is not None:
        cfg["seed"] = ns.seed
    out = Path(ns.out or f"runs/{cfg['name']}-seed{cfg['seed']}")
    report = write_run(cfg, out, png=not ns.no_png)
    summary = {"scenario": cfg["name"], "seed": cfg["seed"], "out": str(out),
               "passed": report.passed}
    if not report.passed:
        summary["failures"] = report.failures()
    _emit(summary)
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_sweep(ns) -> int:
    base = load_scenario(ns.config)
    try:
        get_path(base, ns.param)
    except (KeyError, TypeError):
        raise ConfigError([f"{ns.param}: unknown field"]) from None
    values = [_parse_value(v) for v in ns.values.split(",")]
    root = Path(ns.out or f"runs/{base['name']}-sweep")
    jobs = []
    for v in values:
        cfg = load_scenario(set_path(base, ns.param, v))
        jobs.append((cfg, str(root / f"{ns.param.rsplit('.', 1)[-1]}={v}"), not ns.no_png))

    if ns.jobs > 1:
        with ProcessPoolExecutor(ns.jobs) as pool:
            results = dict(pool.map(_sweep_one, jobs))
    else:
        results = dict(map(_sweep_one, jobs))

    header = [ns.param, "passed"] + list(SWEEP_COLUMNS)
    lines = [",".join(header)]
    ok = True
    for v, (_, out, _) in zip(values, jobs):
        res = results[out]
        if isinstance(res, str):
            ok = False
            lines.append(",".join([str(v), "aborted"] + [""] * len(SWEEP_COLUMNS)))
            continue
        ok &= res["passed"]
        row = [str(v), str(res["passed"]).lower()]
        row += [repr(float(res["metrics"].get(k, float("nan")))) for k in SWEEP_COLUMNS]
        lines.append(",".join(row))
    table = "\n".join(lines) + "\n"
    root.mkdir(parents=True, exist_ok=True)
    (root / "comparison.csv").write_text(table)
    sys.stdout.write(table)
    if not ok:
        _emit({"passed": False, "failures": {
            out: (res if isinstance(res, str) else MetricsReport(res["metrics"], res["checks"]).failures())
            for out, res in results.items()
            if isinstance(res, str) or not res["passed"]}})
    return EXIT_OK if ok else EXIT_FAIL


def cmd_validate(ns) -> int:
    cfg = load_scenario(ns.config)
    Simulation(cfg)  # also checks the frame schedule
    print(f"ok: {cfg['name']} ({cfg['duration']} s, {len(cfg['thresholds'])} thresholds)")
    return EXIT_OK


def cmd_plots(ns) -> int:
    path = Path(ns.runlog)
    log = RunLog.from_csv(path.read_text())
    out = Path(ns.out) if ns.out else path.parent / "plots"
    selection = ns.preset if ns.preset else ns.series.split(",")
    for p in emit_plot_data(log, selection, out, png=not ns.no_png):
        print(p)
    return EXIT_OK


def cmd_budget(ns) -> int:
    batt = BatteryState(cells=ns.cells, capacity=ns.capacity, charge_remaining=ns.capacity,
                        nominal_voltage=ns.cell_voltage)
    rep = power_budget(battery=batt)
    print(f"{'component':<22}{'power [W]':>12}{'share':>9}")
    for name, (p, _) in DEFAULT_COMPONENTS.items():
        print(f"{name:<22}{p:>12.3f}{rep.shares[name]:>9.1%}")
    print(f"{'total':<22}{rep.total_w:>12.3f}")
    print(f"battery energy: {rep.energy_wh:.3f} Wh "
          f"({batt.cells} x {batt.nominal_voltage} V x {batt.capacity:g} mAh)")
    print(f"endurance: {rep.endurance_min:.1f} min")
    print(f"note: {rep.note}")
    return EXIT_OK


def cmd_scale(ns) -> int:
    rep = scaling_feasibility(AirframeConfig(), ns.diameter)
    _emit({k: getattr(rep, k) for k in rep.__dataclass_fields__})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mavsim", description="Indoor quadrocopter simulator.")
    p.add_argument("--version", action="version", version=f"mavsim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario and write its output directory")
    r.add_argument("config")
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.add_argument("--no-png", action="store_true", help="skip figure rendering")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="rerun a scenario over values of one parameter")
    s.add_argument("config")
    s.add_argument("--param", required=True, help="dotted path, e.g. control.rate_hz")
    s.add_argument("--values", required=True, help="comma-separated JSON values")
    s.add_argument("--out")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--no-png", action="store_true")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)

    pl = sub.add_parser("plots", help="re-emit plot data from a saved run log")
    pl.add_argument("runlog")
    g = pl.add_mutually_exclusive_group(required=True)
    g.add_argument("--preset", choices=sorted(PRESETS))
    g.add_argument("--series", help="comma-separated column names, time first")
    pl.add_argument("--out")
    pl.add_argument("--no-png", action="store_true")
    pl.set_defaults(func=cmd_plots)

    b = sub.add_parser("budget", help="print the power table and derived endurance")
    b.add_argument("--cells", type=int, default=3)
    b.add_argument("--cell-voltage", type=float, default=3.7)
    b.add_argument("--capacity", type=float, default=1250.0, help="mAh")
    b.set_defaults(func=cmd_budget)

    sc = sub.add_parser("scale", help="scaling report for another frame diameter")
    sc.add_argument("--diameter", type=float, required=True, help="m")
    sc.set_defaults(func=cmd_scale)
    return p


def main(argv: list[str] | None = None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        return ns.func(ns)
    except ConfigError as exc:
        _emit({"passed": False, "error": "config", "errors": exc.errors})
    except UnknownSeriesError as exc:
        _emit({"passed": False, "error": "series", "message": str(exc),
               "available": exc.available})
    except (OSError, ValueError) as exc:
        _emit({"passed": False, "error": "usage", "message": str(exc)})
    except SimulationAborted as exc:
        _emit({"passed": False, "error": "aborted", "t": exc.t, "reason": exc.reason})
        return EXIT_ABORT
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
