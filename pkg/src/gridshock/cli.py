"""Command-line front end: ingest -> fit -> predict/simulate/enhance/analyze.

One JSON config file drives everything; command-line flags override config
values, which override built-in defaults. The effective (merged) config is
echoed into the output directory next to the artifacts it produced, so any
result directory is self-describing and reruns are reproducible.

Exit codes: 0 ok, 2 validation/config problem, 3 numeric failure
(divergence, undefined statistic), 4 file/format problem.

`--threads N` pins the numeric thread pools; it must act before numpy is
first imported, which is why this module and the package root import the
numeric stack lazily. Results do not depend on the thread count; pinning
just makes runs repeatable on machines with different core counts.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

DEFAULTS = {
    "units_csv": None,
    "outages_csv": None,
    "weather_csv": None,
    "dataset": None,  # dataset file path (output of ingest, input elsewhere)
    "model": None,  # model file path (output of fit, input elsewhere)
    "output_dir": "out",
    "grid": {"start": "auto", "slot_seconds": 10800, "num_slots": "auto"},
    "aggregation": "mean",
    "graph": {"k_neighbors": 8, "max_km": 100.0},
    "fit": {
        "step_size": 0.01,
        "step_decay": 1.0,
        "batch_slots": 32,
        "max_epochs": 200,
        "tol": 1e-6,
        "seed": 0,
        "optimizer": "adaptive-moments",
        "projection_cadence": 1,
        "hidden_sizes": [32, 16],
        "window_slots": 24,
        "trig_window": 40,
        "eps": 1e-3,
    },
    "sim": {
        "replications": 1000,
        "seed": 0,
        "teacher_forced_until": 0,
        "baseline": "simulated_total",
    },
    "predict": {"horizon": 1},
    "analyze": {"sigmoid_variables": [], "zero_run_threshold": 2},
    "scenario": None,  # scenario JSON path for `enhance`
    "sweep": None,  # {"mode": "edges"|"margins", "axis1": [...], "axis2": [...]}
}


def _set_threads(n: int) -> None:
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
        "VECLIB_MAXIMUM_THREADS",
    ):
        os.environ[var] = str(n)


def _deep_merge(base: dict, override: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            from .errors import ValidationError

            raise ValidationError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _deep_merge(base[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path) -> dict:
    from .errors import ValidationError

    with open(path, encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ValidationError(f"config file {path} must hold a JSON object")
    return payload


def effective_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        cfg = _deep_merge(cfg, load_config(args.config))
    overrides = {}

    def put(dotted, value):
        if value is None:
            return
        node = overrides
        keys = dotted.split(".")
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        node[keys[-1]] = value

    put("output_dir", getattr(args, "output_dir", None))
    put("dataset", getattr(args, "dataset", None))
    put("model", getattr(args, "model", None))
    put("units_csv", getattr(args, "units", None))
    put("outages_csv", getattr(args, "outages", None))
    put("weather_csv", getattr(args, "weather", None))
    put("grid.slot_seconds", getattr(args, "slot_seconds", None))
    put("grid.start", getattr(args, "grid_start", None))
    put("grid.num_slots", getattr(args, "num_slots", None))
    put("aggregation", getattr(args, "aggregation", None))
    put("graph.k_neighbors", getattr(args, "k_neighbors", None))
    put("graph.max_km", getattr(args, "max_km", None))
    put("fit.max_epochs", getattr(args, "epochs", None))
    put("fit.step_size", getattr(args, "step_size", None))
    put("fit.batch_slots", getattr(args, "batch_slots", None))
    put("fit.optimizer", getattr(args, "optimizer", None))
    put("predict.horizon", getattr(args, "horizon", None))
    put("sim.replications", getattr(args, "replications", None))
    put("sim.teacher_forced_until", getattr(args, "teacher_forced_until", None))
    put("sim.baseline", getattr(args, "baseline", None))
    put("scenario", getattr(args, "scenario", None))
    put("analyze.zero_run_threshold", getattr(args, "zero_run_threshold", None))
    if getattr(args, "sigmoid_variable", None):
        put("analyze.sigmoid_variables", list(args.sigmoid_variable))
    if getattr(args, "seed", None) is not None:
        put("fit.seed", args.seed)
        put("sim.seed", args.seed)
    if getattr(args, "sweep_units", None) or getattr(args, "sweep_edges", None):
        sweep = dict(cfg.get("sweep") or {"mode": "edges", "axis1": [], "axis2": []})
        if getattr(args, "sweep_mode", None):
            sweep["mode"] = args.sweep_mode
        if getattr(args, "sweep_units", None):
            sweep["axis1"] = [int(x) for x in args.sweep_units.split(",")]
        if getattr(args, "sweep_edges", None):
            sweep["axis2"] = [int(x) for x in args.sweep_edges.split(",")]
        overrides["sweep"] = sweep
    return _deep_merge(cfg, overrides)


def _echo_config(cfg: dict, command: str) -> None:
    out_dir = Path(cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"command": command, "config": cfg}
    with open(out_dir / "effective_config.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _require(cfg: dict, key: str, hint: str):
    from .errors import ValidationError

    value = cfg.get(key)
    if not value:
        raise ValidationError(f"config key {key!r} is required for this command ({hint})")
    return value


def _require_file(path, kind: str):
    from .errors import ValidationError

    if not Path(path).is_file():
        raise ValidationError(f"{kind} file not found: {path}")
    return Path(path)


# -- ingest -------------------------------------------------------------------


def _resolve_grid(cfg: dict, outage_rows, weather_rows):
    """Build the TimeGrid, deriving span from the data when set to "auto"."""
    from .ingest import TimeGrid, parse_timestamp

    slot_seconds = int(cfg["grid"]["slot_seconds"])
    start_cfg = cfg["grid"]["start"]
    slots_cfg = cfg["grid"]["num_slots"]
    if start_cfg == "auto" or slots_cfg == "auto":
        ts_min, ts_max = None, None
        for _, ts, _ in outage_rows:
            ts_min = ts if ts_min is None or ts < ts_min else ts_min
            ts_max = ts if ts_max is None or ts > ts_max else ts_max
        for _, ts, _ in weather_rows:
            ts_min = ts if ts_min is None or ts < ts_min else ts_min
            ts_max = ts if ts_max is None or ts > ts_max else ts_max
        if ts_min is None:
            from .errors import InsufficientDataError

            raise InsufficientDataError("cannot derive the time grid: no data rows")
        if start_cfg == "auto":
            start = ts_min.replace(hour=0, minute=0, second=0, microsecond=0)
        else:
            start = parse_timestamp(start_cfg)
        if slots_cfg == "auto":
            span = (ts_max - start).total_seconds()
            num_slots = max(int(span // slot_seconds) + 1, 2)
        else:
            num_slots = int(slots_cfg)
    else:
        start = parse_timestamp(start_cfg)
        num_slots = int(slots_cfg)
    return TimeGrid(start=start, slot_seconds=slot_seconds, num_slots=num_slots)


def cmd_ingest(cfg: dict, args) -> int:
    from . import ingest

    units_path = _require_file(_require(cfg, "units_csv", "--units"), "units CSV")
    outages_path = _require_file(_require(cfg, "outages_csv", "--outages"), "outages CSV")
    weather_path = _require_file(_require(cfg, "weather_csv", "--weather"), "weather CSV")
    units = ingest.load_units(units_path)
    variables, _ = ingest.load_weather_rows(weather_path)
    grid = _resolve_grid(
        cfg,
        ingest.load_outage_rows(outages_path),
        ingest.load_weather_rows(weather_path)[1],
    )
    outages = ingest.aggregate_outages(
        ingest.load_outage_rows(outages_path), units, grid, method=cfg["aggregation"]
    )
    weather = ingest.aggregate_weather(
        ingest.load_weather_rows(weather_path)[1], units, grid, variables
    )
    ds = ingest.Dataset(units=units, grid=grid, outages=outages, weather=weather)
    out_dir = Path(cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    ds_path = Path(cfg["dataset"] or out_dir / "dataset.gshk")
    ingest.save_dataset(ds, ds_path)
    _echo_config(cfg, "ingest")
    gaps = ingest.gap_report(ds)
    print(f"K={ds.num_units} T={ds.num_slots} M={ds.num_variables}")
    print(
        f"gap cells: outages {gaps['outage_gap_cells']}/{gaps['total_cells']}, "
        f"weather {gaps['weather_gap_cells']}/{gaps['total_cells']}"
    )
    skipped = getattr(outages, "skipped_rows", 0) + getattr(weather, "skipped_rows", 0)
    if skipped:
        print(f"skipped {skipped} rows outside the grid span")
    print(f"wrote {ds_path}")
    return EXIT_OK


# -- fit ----------------------------------------------------------------------


def _fit_config(cfg: dict):
    from .train import FitConfig

    f = cfg["fit"]
    return FitConfig(
        step_size=float(f["step_size"]),
        step_decay=float(f["step_decay"]),
        batch_slots=None if f["batch_slots"] in (None, "full") else int(f["batch_slots"]),
        max_epochs=int(f["max_epochs"]),
        tol=float(f["tol"]),
        seed=int(f["seed"]),
        optimizer=f["optimizer"],
        projection_cadence=int(f["projection_cadence"]),
        hidden_sizes=tuple(int(h) for h in f["hidden_sizes"]),
        window_slots=int(f["window_slots"]),
        trig_window=int(f["trig_window"]),
        eps=float(f["eps"]),
    )


def cmd_fit(cfg: dict, args) -> int:
    import csv as _csv

    import numpy as np

    from . import ingest, model, topology, train

    ds_path = _require_file(_require(cfg, "dataset", "--dataset"), "dataset")
    ds = ingest.load_dataset(ds_path)
    fit_cfg = _fit_config(cfg)
    graph = topology.build_candidate_graph(
        ds.units, k_neighbors=int(cfg["graph"]["k_neighbors"]), max_km=float(cfg["graph"]["max_km"])
    )
    if getattr(args, "check_gradients", False):
        params0 = train.initialize(ds, graph, seed=fit_cfg.seed, cfg=fit_cfg)
        worst = train.fd_audit(params0, ds, max_coords=40)
        print(f"gradient audit: max rel. err {worst:.3e} over 40 sampled coordinates")
    params, report = train.fit(ds, graph, fit_cfg)
    out_dir = Path(cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    model_path = Path(cfg["model"] or out_dir / "model.gshk")
    model.serialize(params, model_path)
    with open(out_dir / "fit_report.csv", "w", newline="", encoding="utf-8") as fh:
        wr = _csv.writer(fh, lineterminator="\n")
        wr.writerow(["epoch", "loglik", "grad_norm", "projections"])
        for epoch, ll, gn, pc in report.records():
            wr.writerow([epoch, repr(float(ll)), repr(float(gn)), pc])
    _echo_config(cfg, "fit")
    params.check_invariants()
    off = params.alpha.off_diagonal()
    print(
        f"fit done: epochs={report.epochs_run} final_loglik={report.final_loglik:.6f} "
        f"converged={report.converged} seconds={report.seconds:.1f}"
    )
    print(
        "constraints ok: "
        f"min_alpha={params.alpha.alpha.min():.3g} min_beta={params.beta.min():.3g} "
        f"min_gamma={params.gamma.min():.3g} min_omega={params.decay.omega.min():.3g} "
        f"loops={int((off * off.T != 0).sum())} active_edges={int((off > 0).sum())}"
    )
    print(f"wrote {model_path}")
    return EXIT_OK


# -- predict ------------------------------------------------------------------


def cmd_predict(cfg: dict, args) -> int:
    from . import analyze, ingest, model

    ds = ingest.load_dataset(_require_file(_require(cfg, "dataset", "--dataset"), "dataset"))
    params = model.deserialize(_require_file(_require(cfg, "model", "--model"), "model"))
    out_dir = Path(cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    in_sample = analyze.predict_in_sample(params, ds)
    analyze.write_predictions_csv(out_dir / "predictions_insample.csv", in_sample)
    horizon = int(cfg["predict"]["horizon"])
    ahead = analyze.predict_ahead(params, ds, horizon_slots=horizon)
    analyze.write_predictions_csv(out_dir / "predictions_ahead.csv", ahead)
    _echo_config(cfg, "predict")
    print(f"in-sample: MAE={in_sample.mae:.4f} RMSE={in_sample.rmse:.4f}")
    print(
        f"{horizon}-slot ahead: MAE={ahead.mae:.4f} RMSE={ahead.rmse:.4f} "
        f"persistence_MAE={ahead.persistence_mae:.4f} beats_persistence={ahead.beats_persistence}"
    )
    return EXIT_OK


# -- simulate -----------------------------------------------------------------


def cmd_simulate(cfg: dict, args) -> int:
    import csv as _csv

    from . import ingest, model, simulate

    ds = ingest.load_dataset(_require_file(_require(cfg, "dataset", "--dataset"), "dataset"))
    params = model.deserialize(_require_file(_require(cfg, "model", "--model"), "model"))
    sim_cfg = cfg["sim"]
    result = simulate.simulate_paths(
        params,
        ds.weather,
        ds.grid,
        R=int(sim_cfg["replications"]),
        seed=int(sim_cfg["seed"]),
        teacher_forced_until=int(sim_cfg["teacher_forced_until"]),
        observed=ds.outages if int(sim_cfg["teacher_forced_until"]) > 0 else None,
    )
    out_dir = Path(cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "simulation_units.csv", "w", newline="", encoding="utf-8") as fh:
        wr = _csv.writer(fh, lineterminator="\n")
        wr.writerow(["unit", "total_mean"])
        for i, m in enumerate(result.unit_total_mean):
            wr.writerow([i, repr(float(m))])
    quantiles = result.total_quantiles()
    with open(out_dir / "simulation_totals.csv", "w", newline="", encoding="utf-8") as fh:
        wr = _csv.writer(fh, lineterminator="\n")
        wr.writerow(["metric", "value"])
        wr.writerow(["mean_total", repr(result.mean_total)])
        wr.writerow(["std_err", repr(result.total_std_err)])
        for q in sorted(quantiles):
            wr.writerow([f"q{int(q * 100):02d}", repr(quantiles[q])])
        wr.writerow(["replications", result.replications])
        wr.writerow(["seed", result.seed])
    _echo_config(cfg, "simulate")
    print(
        f"simulated R={result.replications}: mean_total={result.mean_total:.2f} "
        f"(se {result.total_std_err:.2f}), observed_total={int(ds.outages.counts.sum())}"
    )
    return EXIT_OK


# -- enhance ------------------------------------------------------------------


def cmd_enhance(cfg: dict, args) -> int:
    import csv as _csv

    from . import analyze, ingest, model, simulate

    ds = ingest.load_dataset(_require_file(_require(cfg, "dataset", "--dataset"), "dataset"))
    params = model.deserialize(_require_file(_require(cfg, "model", "--model"), "model"))
    sim_cfg = cfg["sim"]
    out_dir = Path(cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    R = int(sim_cfg["replications"])
    seed = int(sim_cfg["seed"])
    baseline = sim_cfg["baseline"]
    did_something = False
    if cfg.get("scenario"):
        scenario = simulate.load_scenario(_require_file(cfg["scenario"], "scenario"))
        res = simulate.outage_reduction(
            params, scenario, ds.weather, ds.grid, R, seed, baseline=baseline, observed=ds.outages
        )
        with open(out_dir / "enhancement.csv", "w", newline="", encoding="utf-8") as fh:
            wr = _csv.writer(fh, lineterminator="\n")
            wr.writerow(["reduction_pct", "std_err_pct", "baseline_total", "scenario_total", "replications", "seed"])
            wr.writerow(
                [
                    repr(res.reduction_pct),
                    repr(res.std_err_pct),
                    repr(res.baseline_total),
                    repr(res.scenario_total),
                    res.replications,
                    res.seed,
                ]
            )
        print(f"scenario reduction: {res.reduction_pct:.2f}% +- {res.std_err_pct:.2f}% (R={R})")
        did_something = True
    if cfg.get("sweep"):
        sw = cfg["sweep"]
        rows = simulate.sweep(
            params,
            ds.weather,
            ds.grid,
            axis1=[int(a) for a in sw["axis1"]],
            axis2=[int(a) for a in sw["axis2"]],
            R=R,
            seed=seed,
            mode=sw.get("mode", "edges"),
            observed=ds.outages,
            baseline=baseline,
        )
        names = (
            ("top_units", "edges_per_unit") if sw.get("mode", "edges") == "edges" else ("margin_units", "recovery_units")
        )
        analyze.write_sweep_csv(out_dir / "sweep.csv", rows, axis1_name=names[0], axis2_name=names[1])
        print(f"sweep: {len(rows)} cells written")
        did_something = True
    if not did_something:
        from .errors import ValidationError

        raise ValidationError("enhance needs a scenario file (--scenario) and/or a sweep grid in the config")
    _echo_config(cfg, "enhance")
    return EXIT_OK


# -- analyze ------------------------------------------------------------------


def cmd_analyze(cfg: dict, args) -> int:
    from . import analyze, ingest, model
    from .weather_effect import DecayConfig

    ds = ingest.load_dataset(_require_file(_require(cfg, "dataset", "--dataset"), "dataset"))
    params = model.deserialize(_require_file(_require(cfg, "model", "--model"), "model"))
    out_dir = Path(cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    decomp = analyze.decompose(params, ds)
    analyze.write_decomposition_csv(out_dir / "decomposition.csv", decomp)
    episodes = analyze.restoration_durations(ds, zero_run_threshold=int(cfg["analyze"]["zero_run_threshold"]))
    analyze.write_episodes_csv(out_dir / "episodes.csv", episodes)
    summary = analyze.episode_duration_summary(episodes)
    variables = cfg["analyze"]["sigmoid_variables"] or []
    fits = []
    for var in variables:
        fits.append(analyze.fit_sigmoid(ds, var, cfg=params.decay, population=None))
    if fits:
        analyze.write_sigmoid_csv(out_dir / "sigmoid.csv", fits)
    _echo_config(cfg, "analyze")
    print(
        f"decomposition: direct share {decomp.direct_share:.3f}, "
        f"cascade share {decomp.indirect_share:.3f}"
    )
    print(
        f"episodes: {summary['episodes']} total, {summary['within_share'] * 100 if summary['episodes'] else 0:.1f}% "
        f"within {2 * ds.grid.slot_seconds // 3600} h"
    )
    for f in fits:
        print(f"sigmoid {f.variable}: a={f.a:.4g} c={f.c:.4g} L={f.L:.4g} rmse={f.rmse:.4g} (dtc={analyze.estimate_dtc(f):.4g})")
    return EXIT_OK


# -- export-map ---------------------------------------------------------------


def cmd_export_map(cfg: dict, args) -> int:
    from . import ingest, model, topology

    ds = ingest.load_dataset(_require_file(_require(cfg, "dataset", "--dataset"), "dataset"))
    params = model.deserialize(_require_file(_require(cfg, "model", "--model"), "model"))
    out_dir = Path(cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "propagation_map.csv"
    n = topology.export_propagation_map(params.alpha, ds.outages, params, path)
    scores = topology.criticality_scores(params.alpha, ds.outages, params)
    _echo_config(cfg, "export-map")
    top = sorted(range(len(scores)), key=lambda j: (-scores[j], j))[:5]
    print(f"wrote {n} edges to {path}")
    for j in top:
        if scores[j] > 0:
            print(f"critical unit {j} ({ds.units[j].unit_id}): exported intensity {scores[j]:.2f}")
    return EXIT_OK


# -- validate-only ------------------------------------------------------------


def _validate_csv_header(path, required: set, kind: str) -> None:
    import csv as _csv

    from .errors import SchemaError

    with open(path, newline="", encoding="utf-8") as fh:
        header = next(_csv.reader(fh), [])
    missing = required - set(header)
    if missing:
        raise SchemaError(f"{kind} {path}: missing required column(s) {sorted(missing)}")


def validate_only(cfg: dict, command: str) -> int:
    """Check config ranges and input file schemas without computing anything."""
    from .container import peek_schema
    from .errors import FileFormatError, ValidationError
    from .ingest import DATASET_SCHEMA
    from .model import MODEL_SCHEMA

    _fit_config(cfg)  # range-checks every fit field
    if int(cfg["grid"]["slot_seconds"]) <= 0:
        raise ValidationError("grid.slot_seconds must be positive")
    if int(cfg["sim"]["replications"]) < 1:
        raise ValidationError("sim.replications must be >= 1")
    if int(cfg["predict"]["horizon"]) < 1:
        raise ValidationError("predict.horizon must be >= 1")

    if command == "ingest":
        _validate_csv_header(
            _require_file(_require(cfg, "units_csv", "--units"), "units CSV"),
            {"unit_id", "lat", "lon", "total_customers"},
            "units CSV",
        )
        _validate_csv_header(
            _require_file(_require(cfg, "outages_csv", "--outages"), "outages CSV"),
            {"unit_id", "timestamp", "customers_out"},
            "outages CSV",
        )
        _validate_csv_header(
            _require_file(_require(cfg, "weather_csv", "--weather"), "weather CSV"),
            {"unit_id", "timestamp"},
            "weather CSV",
        )
    else:
        ds_path = _require_file(_require(cfg, "dataset", "--dataset"), "dataset")
        schema = peek_schema(ds_path)
        if schema != DATASET_SCHEMA:
            raise FileFormatError(f"{ds_path}: schema {schema!r}, expected {DATASET_SCHEMA!r}")
        if command != "fit":
            model_path = _require_file(_require(cfg, "model", "--model"), "model")
            schema = peek_schema(model_path)
            if schema != MODEL_SCHEMA:
                raise FileFormatError(f"{model_path}: schema {schema!r}, expected {MODEL_SCHEMA!r}")
    if command == "enhance" and cfg.get("scenario"):
        from .simulate import load_scenario

        load_scenario(_require_file(cfg["scenario"], "scenario"))
    print("validation ok")
    return EXIT_OK


# -- parser / dispatch --------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridshock",
        description="Estimate and analyze a graph-coupled Poisson model of weather-driven power outages.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--output-dir", help="directory for artifacts and reports")
    common.add_argument("--threads", type=int, help="pin numeric thread pools (default: all cores)")
    common.add_argument("--seed", type=int, help="seed for fitting and simulation")
    common.add_argument(
        "--validate-only",
        action="store_true",
        help="validate config and input file schemas, then exit without computing",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="aggregate raw CSVs onto the slot grid")
    p.add_argument("--units", help="units CSV (unit_id,lat,lon,total_customers)")
    p.add_argument("--outages", help="outage samples CSV (unit_id,timestamp,customers_out)")
    p.add_argument("--weather", help="weather samples CSV (unit_id,timestamp,<variables...>)")
    p.add_argument("--dataset", help="output dataset file")
    p.add_argument("--slot-seconds", type=int, dest="slot_seconds")
    p.add_argument("--grid-start", dest="grid_start", help="ISO timestamp or 'auto'")
    p.add_argument("--num-slots", dest="num_slots", help="slot count or 'auto'")
    p.add_argument("--aggregation", choices=["mean", "max", "last"])

    p = sub.add_parser("fit", parents=[common], help="estimate model parameters")
    p.add_argument("--dataset", help="dataset file from ingest")
    p.add_argument("--model", help="output model file")
    p.add_argument("--epochs", type=int)
    p.add_argument("--step-size", type=float, dest="step_size")
    p.add_argument("--batch-slots", type=int, dest="batch_slots")
    p.add_argument("--optimizer", choices=["adaptive-moments", "plain-sgd"])
    p.add_argument("--k-neighbors", type=int, dest="k_neighbors")
    p.add_argument("--max-km", type=float, dest="max_km")
    p.add_argument(
        "--check-gradients",
        action="store_true",
        dest="check_gradients",
        help="audit analytic gradients against finite differences before fitting",
    )

    p = sub.add_parser("predict", parents=[common], help="teacher-forced and h-slot-ahead prediction")
    p.add_argument("--dataset")
    p.add_argument("--model")
    p.add_argument("--horizon", type=int)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo rollout of the fitted process")
    p.add_argument("--dataset")
    p.add_argument("--model")
    p.add_argument("--replications", type=int)
    p.add_argument("--teacher-forced-until", type=int, dest="teacher_forced_until")

    p = sub.add_parser("enhance", parents=[common], help="what-if scenario evaluation / sweep")
    p.add_argument("--dataset")
    p.add_argument("--model")
    p.add_argument("--scenario", help="scenario JSON file")
    p.add_argument("--replications", type=int)
    p.add_argument("--baseline", choices=["simulated_total", "observed_total"])
    p.add_argument("--sweep-mode", choices=["edges", "margins"], dest="sweep_mode")
    p.add_argument("--sweep-units", dest="sweep_units", help="comma list for axis 1")
    p.add_argument("--sweep-edges", dest="sweep_edges", help="comma list for axis 2")

    p = sub.add_parser("analyze", parents=[common], help="decomposition, episodes, sigmoid thresholds")
    p.add_argument("--dataset")
    p.add_argument("--model")
    p.add_argument("--sigmoid-variable", action="append", dest="sigmoid_variable", help="repeatable")
    p.add_argument("--zero-run-threshold", type=int, dest="zero_run_threshold")

    p = sub.add_parser("export-map", parents=[common], help="edge-level propagation table")
    p.add_argument("--dataset")
    p.add_argument("--model")

    return parser


COMMANDS = {
    "ingest": cmd_ingest,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "simulate": cmd_simulate,
    "enhance": cmd_enhance,
    "analyze": cmd_analyze,
    "export-map": cmd_export_map,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    # --threads must act before numpy is imported anywhere in the process.
    if "--threads" in argv:
        try:
            _set_threads(int(argv[argv.index("--threads") + 1]))
        except (IndexError, ValueError):
            print("error: --threads expects an integer", file=sys.stderr)
            return EXIT_VALIDATION
    parser = build_parser()
    args = parser.parse_args(argv)

    from .errors import NumericError, FileFormatError, ValidationError

    try:
        cfg = effective_config(args)
        if args.validate_only:
            return validate_only(cfg, args.command)
        return COMMANDS[args.command](cfg, args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FileFormatError as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
