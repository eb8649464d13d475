"""Command-line pipeline driver.

Subcommands: synth-world, extract-tmc, build-dataset, train, predict,
sweep, report. Logs go to stderr and data to files; stdout carries only
``--json`` machine summaries. Exit codes: 0 success, 1 runtime failure,
2 usage or configuration error. Partially written outputs are removed
when a command fails.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import ConfigError, DrivecastError, MissingInput
from .experiments import run_sweep, train_model_on_matrix, write_report
from .features import build_dataset, dataset_matrix, load_dataset, save_dataset
from .network import load_model, save_model
from .report import format_summary_table, render_report
from .route import build_route, load_shape_points
from .synth import generate_trips, generate_world, write_trips, write_world
from .tmc import extract_tmc_history, load_section_table, map_route_to_tmc, write_history_csv
from .trips import (
    extract_velocity_profile,
    match_trip_to_route,
    parse_iso8601,
    parse_trip_log,
)

logger = logging.getLogger("drivecast")


class _OutputGuard:
    """Tracks output roots so a failed command can remove what it created."""

    def __init__(self):
        self.roots: list[Path] = []
        self.before: set[Path] = set()

    def watch(self, *paths: Path | str) -> None:
        for p in paths:
            root = Path(p)
            self.roots.append(root)
            self.before |= self._files(root)

    @staticmethod
    def _files(root: Path) -> set[Path]:
        if root.is_dir():
            return {p for p in root.rglob("*") if p.is_file()}
        if root.is_file():
            return {root}
        return set()

    def cleanup(self) -> None:
        for root in self.roots:
            for p in self._files(root) - self.before:
                try:
                    p.unlink()
                except OSError:
                    pass


def _load_route_and_history(cfg: RunConfig):
    shape = load_shape_points(str(cfg.path("route")))
    route = build_route(shape, spacing_m=cfg.spacing_m)
    sections = load_section_table(str(cfg.path("sections")))
    threshold = float(cfg.data["matching"]["lateral_threshold_m"])
    codes = map_route_to_tmc(route, sections, lateral_threshold_m=threshold)
    history = extract_tmc_history(codes, cfg.path("history"))
    return route, history, codes


def _load_profiles(cfg: RunConfig, route):
    trips_dir = cfg.path("trips")
    files = sorted(Path(trips_dir).glob("*.csv"))
    if not files:
        raise MissingInput(f"no trip files under {trips_dir}")
    max_offset = float(cfg.data["matching"]["max_offset_m"])
    min_cov = float(cfg.data["matching"]["min_coverage"])
    profiles, rejected = [], []
    for f in files:
        trip = parse_trip_log(str(f))
        verdict = match_trip_to_route(trip, route, max_offset, min_cov)
        if not verdict.accepted:
            logger.warning("rejecting %s: %s", trip.trip_id, verdict.reason)
            rejected.append(trip.trip_id)
            continue
        profiles.append(
            extract_velocity_profile(trip, route, max_offset, min_cov, verdict=verdict)
        )
    return profiles, rejected


def cmd_synth_world(args, guard: _OutputGuard) -> dict:
    cfg = RunConfig.load(args.config, args.set)
    guard.watch(args.out)
    world = generate_world(cfg.world_params())
    paths = write_world(world, args.out)
    trips = generate_trips(
        world, cfg.persona(), int(cfg.data["trips"]["count"]), cfg.seed,
        spacing_m=cfg.spacing_m,
    )
    paths.update(write_trips(trips, args.out))
    return {
        "out": args.out,
        "n_sections": len(world.sections),
        "n_shape_points": len(world.shape_points),
        "n_trips": len(trips),
        **paths,
    }


def cmd_extract_tmc(args, guard: _OutputGuard) -> dict:
    for role, p in (("route", args.route), ("sections", args.sections), ("archive", args.archive)):
        if not Path(p).exists():
            raise MissingInput(f"{role} does not exist: {p}")
    guard.watch(args.out)
    shape = load_shape_points(args.route)
    route = build_route(shape, spacing_m=args.spacing_m)
    sections = load_section_table(args.sections)
    codes = map_route_to_tmc(route, sections, lateral_threshold_m=args.threshold)
    history = extract_tmc_history(codes, args.archive)
    rows = []
    for code in sorted(history.series):
        ts, cur, free = history.series[code]
        rows.extend(zip([code] * len(ts), ts, cur, free))
    write_history_csv(rows, args.out)
    return {
        "out": args.out,
        "codes": codes,
        "n_observations": len(history),
        "missing_codes": list(history.missing_codes),
        "sample_period_s": history.sample_period_s,
    }


def cmd_build_dataset(args, guard: _OutputGuard) -> dict:
    cfg = RunConfig.load(args.config, args.set)
    guard.watch(args.out, f"{args.out}.meta.json")
    route, history, _ = _load_route_and_history(cfg)
    profiles, rejected = _load_profiles(cfg, route)
    if not profiles:
        raise MissingInput("no trips matched the route")
    feature_config = cfg.feature_config()
    vectors = build_dataset(route, history, profiles, feature_config)
    starts = {p.trip_id: p.start_epoch_s for p in profiles}
    save_dataset(args.out, vectors, feature_config, starts)
    return {
        "out": args.out,
        "n_trips": len(profiles),
        "rejected_trips": rejected,
        "n_vectors": len(vectors),
        "input_dim": len(vectors[0].values),
    }


def cmd_train(args, guard: _OutputGuard) -> dict:
    cfg = RunConfig.load(args.config, args.set)
    if not Path(args.dataset).is_file():
        raise MissingInput(f"dataset does not exist: {args.dataset}")
    guard.watch(args.model_out)
    vectors, feature_config, _, _, _ = load_dataset(args.dataset)
    X, y = dataset_matrix(vectors)
    model = train_model_on_matrix(
        X, y, feature_config, cfg.architecture(),
        cfg.hyperparams("pretrain", cfg.seed),
        cfg.hyperparams("supervised", cfg.seed + 1),
        fine_tune_encoder=bool(cfg.data["training"]["fine_tune_encoder"]),
    )
    save_model(model, args.model_out)
    return {
        "model_out": args.model_out,
        "n_vectors": len(vectors),
        "input_dim": X.shape[1],
        "architecture": cfg.architecture().label,
    }


def _parse_trip_start(value: str) -> float:
    try:
        return float(value)
    except ValueError:
        return parse_iso8601(value)


def cmd_predict(args, guard: _OutputGuard) -> dict:
    from .experiments import predict_profile

    cfg = RunConfig.load(args.config, args.set)
    if not Path(args.model).is_file():
        raise MissingInput(f"model does not exist: {args.model}")
    guard.watch(args.out)
    try:
        trip_start = _parse_trip_start(args.trip_start)
    except ValueError as exc:
        raise ConfigError(f"--trip-start: {exc}") from exc
    model = load_model(args.model)
    route, history, _ = _load_route_and_history(cfg)
    profile = predict_profile(model, route, history, trip_start)
    with open(args.out, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["sp_index", "arc_m", "predicted_mps"])
        for sp, v in zip(route.standard_points, profile.speeds_mps):
            writer.writerow([sp.index, repr(sp.arc_position_m), repr(float(v))])
    return {
        "out": args.out,
        "trip_start_epoch_s": trip_start,
        "n_points": len(profile),
        "mean_predicted_mps": float(np.mean(profile.speeds_mps)),
    }


def cmd_sweep(args, guard: _OutputGuard) -> dict:
    cfg = RunConfig.load(args.config, args.set)
    guard.watch(args.out)
    route, history, _ = _load_route_and_history(cfg)
    profiles, _ = _load_profiles(cfg, route)
    sweep_cfg = cfg.data["sweep"]
    workers = args.workers if args.workers else int(sweep_cfg.get("workers", 1))
    report = run_sweep(
        cfg.sweep_grid(),
        route,
        history,
        profiles,
        cfg.hyperparams("pretrain", 0),
        cfg.hyperparams("supervised", 0),
        master_seed=cfg.seed,
        split_strategy=str(sweep_cfg.get("split", "leave-one-out")),
        test_fraction=float(sweep_cfg.get("test_fraction", 0.2)),
        fine_tune_encoder=bool(cfg.data["training"]["fine_tune_encoder"]),
        teacher_forced=bool(sweep_cfg.get("teacher_forced", False)),
        tmc_sample_period_s=float(cfg.data["features"]["tmc_sample_period_s"]),
        workers=workers,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = write_report(report, str(out))
    cfg.dump(str(out / "sweep_config.json"))
    return {
        "out": args.out,
        "n_configs": len([s for s in report.summary if s["config_id"].startswith("cfg")]),
        "n_failures": len(report.failures),
        "best_config_id": report.best_config_id,
        **paths,
    }


def cmd_report(args, guard: _OutputGuard) -> dict:
    guard.watch(Path(args.in_dir) / "plots")
    result = render_report(args.in_dir, with_plots=args.plots)
    if not args.json:
        print(format_summary_table(result["summary"]))
        if result["plots"]:
            print(f"\nwrote {len(result['plots'])} plots under {args.in_dir}/plots")
    result.pop("summary")
    return result


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drivecast",
        description="Driver speed-profile forecasting pipeline.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value (dotted path, JSON value)")
        p.add_argument("--json", action="store_true", help="machine summary on stdout")

    p = sub.add_parser("synth-world", help="generate a synthetic world and trips")
    p.add_argument("--config", required=True, help="run configuration JSON")
    p.add_argument("--out", required=True, help="output directory")
    add_common(p)
    p.set_defaults(func=cmd_synth_world)

    p = sub.add_parser("extract-tmc", help="map a route to sections and pull their history")
    p.add_argument("--route", required=True, help="route geometry CSV")
    p.add_argument("--sections", required=True, help="section table CSV")
    p.add_argument("--archive", required=True, help="history file or directory")
    p.add_argument("--out", required=True, help="merged history CSV to write")
    p.add_argument("--spacing-m", type=float, default=100.0, help="standard point spacing")
    p.add_argument("--threshold", type=float, default=30.0, help="lateral cover threshold, m")
    p.add_argument("--json", action="store_true", help="machine summary on stdout")
    p.set_defaults(func=cmd_extract_tmc)

    p = sub.add_parser("build-dataset", help="trips -> profiles -> feature vectors")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="dataset CSV to write")
    add_common(p)
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("train", help="pretrain + fine-tune one configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--dataset", required=True, help="dataset CSV from build-dataset")
    p.add_argument("--model-out", required=True, help="model JSON to write")
    add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="emit a predicted profile for a trip start time")
    p.add_argument("--model", required=True, help="model JSON from train")
    p.add_argument("--config", required=True, help="config supplying route/history paths")
    p.add_argument("--trip-start", required=True,
                   help="trip start time (ISO-8601 or epoch seconds)")
    p.add_argument("--out", required=True, help="profile CSV to write")
    add_common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("sweep", help="run the hyperparameter grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--workers", type=int, default=0,
                   help="parallel workers (default: sweep.workers from config)")
    add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="summary table and SVG profile plots")
    p.add_argument("--in", dest="in_dir", required=True, help="sweep output directory")
    p.add_argument("--plots", action="store_true", help="render SVG plots")
    p.add_argument("--json", action="store_true", help="machine summary on stdout")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    guard = _OutputGuard()
    try:
        summary = args.func(args, guard)
    except (ConfigError, MissingInput) as exc:
        guard.cleanup()
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return 2
    except DrivecastError as exc:
        guard.cleanup()
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - keep the contract of clean exits
        guard.cleanup()
        print(f"error.unexpected: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if getattr(args, "json", False):
        print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
