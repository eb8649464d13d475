"""Experiment harness: RMSE scoring, non-learned baselines, trip splits,
closed-loop evaluation, and the hyperparameter sweep.

Evaluation is closed-loop by default: the driver-history inputs are fed
back from the model's own predictions, because the whole profile must be
produced at trip start when no actual speeds exist yet. Teacher-forced
evaluation (actual speeds in the history block) is available for
diagnosis. Learned predictions and baselines are always scored on the
same index window (standard points >= r) so comparisons are fair.
"""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyInput, LengthMismatch, NoData, TooFewTrips
from .features import (
    FeatureConfig,
    assemble_input,
    build_dataset,
    dataset_matrix,
    fit_normalizer,
)
from .network import (
    TrainedModel,
    TrainHyperparams,
    assemble_network,
    forward,
    pretrain_sae,
    train_predictor,
)
from .route import Route
from .tmc import TmcHistory, sample_tmc
from .trips import VelocityProfile

logger = logging.getLogger(__name__)

REPORT_FIELDS = ["config_id", "n", "k", "m", "r", "arch", "fold", "rmse_mps"]
SUMMARY_FIELDS = [
    "rank", "config_id", "n", "k", "m", "r", "arch",
    "mean_rmse_mps", "pooled_rmse_mps", "n_folds", "q_per_trip", "status",
]
PROFILE_FIELDS = [
    "config_id", "fold", "trip_id", "sp_index", "arc_m", "actual_mps", "predicted_mps",
    "tmc_direct_mps", "average_speed_mps", "posted_speed_mps",
]


def rmse(predicted: Sequence[float], actual: Sequence[float]) -> float:
    """Root mean squared error between two equal-length speed sequences."""
    p = np.asarray(predicted, dtype=float)
    a = np.asarray(actual, dtype=float)
    if p.shape != a.shape:
        raise LengthMismatch(f"predicted has {p.shape}, actual has {a.shape}")
    if p.size == 0:
        raise EmptyInput("rmse of empty sequences")
    return float(np.sqrt(np.mean((p - a) ** 2)))


def baseline_tmc_direct(route: Route, history: TmcHistory, trip_start: float) -> VelocityProfile:
    """Section speed at trip start, used directly as the prediction."""
    speeds = []
    for sp in route.standard_points:
        try:
            speeds.append(sample_tmc(history, sp.tmc_code, trip_start))
        except NoData as exc:
            raise NoData(exc.tmc_code, index=sp.index) from exc
    return VelocityProfile("baseline_tmc_direct", trip_start, np.array(speeds))


def baseline_average_speed(route: Route, history: TmcHistory) -> VelocityProfile:
    """Historical mean section speed at each standard point."""
    means = {}
    speeds = []
    for sp in route.standard_points:
        code = sp.tmc_code
        if code not in means:
            if code not in history.series or len(history.series[code][0]) == 0:
                raise NoData(code, index=sp.index)
            means[code] = float(np.mean(history.series[code][1]))
        speeds.append(means[code])
    return VelocityProfile("baseline_average_speed", 0.0, np.array(speeds))


def baseline_posted_speed(route: Route) -> VelocityProfile:
    """Posted speed limit at each standard point."""
    speeds = np.array([sp.speed_limit_mps for sp in route.standard_points])
    return VelocityProfile("baseline_posted_speed", 0.0, speeds)


def split_trips(
    trip_ids: Sequence[str],
    strategy: str = "leave-one-out",
    seed: int = 0,
    test_fraction: float = 0.2,
) -> list[tuple[list[str], list[str]]]:
    """Partition trips into (train, test) folds, deterministic per seed."""
    ids = list(trip_ids)
    if len(ids) < 2:
        raise TooFewTrips(f"need at least 2 trips, got {len(ids)}")
    if strategy == "leave-one-out":
        return [([t for t in ids if t != test], [test]) for test in ids]
    if strategy == "fraction":
        if not 0.0 < test_fraction < 1.0:
            raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
        order = list(np.random.default_rng(seed).permutation(len(ids)))
        n_test = max(1, int(round(test_fraction * len(ids))))
        test = sorted(ids[i] for i in order[:n_test])
        train = sorted(ids[i] for i in order[n_test:])
        if not train:
            raise TooFewTrips("fraction split left no training trips")
        return [(train, test)]
    raise ValueError(f"unknown split strategy {strategy!r}")


@dataclass(frozen=True)
class Architecture:
    encoder_sizes: tuple[int, ...]
    head_hidden: int

    def __post_init__(self):
        if self.head_hidden < 1 or any(s < 1 for s in self.encoder_sizes):
            raise ValueError(f"architecture sizes must be >= 1: {self}")

    @property
    def label(self) -> str:
        enc = "x".join(str(s) for s in self.encoder_sizes)
        return f"e{enc}+h{self.head_hidden}"


@dataclass(frozen=True)
class SweepGrid:
    lookahead: tuple[int, ...] = (2,)
    k: tuple[int, ...] = (2,)
    m: tuple[int, ...] = (2,)
    r: tuple[int, ...] = (3,)
    architectures: tuple[Architecture, ...] = (Architecture((24,), 16),)
    allow_extended: bool = False

    def __post_init__(self):
        object.__setattr__(self, "lookahead", tuple(self.lookahead))
        object.__setattr__(self, "k", tuple(self.k))
        object.__setattr__(self, "m", tuple(self.m))
        object.__setattr__(self, "r", tuple(self.r))
        object.__setattr__(
            self,
            "architectures",
            tuple(
                a if isinstance(a, Architecture) else Architecture(tuple(a[0]), a[1])
                for a in self.architectures
            ),
        )
        if not (self.lookahead and self.k and self.m and self.r and self.architectures):
            raise ValueError("sweep grid axes must be non-empty")
        if not self.allow_extended:
            checks = [
                ("lookahead", self.lookahead, 0, 5),
                ("k", self.k, 1, 5),
                ("m", self.m, 0, 10),
                ("r", self.r, 1, 10),
            ]
            for name, values, lo, hi in checks:
                bad = [v for v in values if not lo <= v <= hi]
                if bad:
                    raise ValueError(
                        f"{name} values {bad} outside [{lo}, {hi}]; "
                        "set allow_extended to override"
                    )

    def points(self) -> list[tuple[int, int, int, int, Architecture]]:
        return list(
            itertools.product(
                sorted(self.lookahead), sorted(self.k), sorted(self.m), sorted(self.r),
                self.architectures,
            )
        )


def train_model(
    route: Route,
    history: TmcHistory,
    train_profiles: Sequence[VelocityProfile],
    config: FeatureConfig,
    arch: Architecture,
    pretrain_hp: TrainHyperparams,
    train_hp: TrainHyperparams,
    fine_tune_encoder: bool = True,
) -> TrainedModel:
    """Pretrain and fine-tune one configuration on the given trips."""
    vectors = build_dataset(route, history, train_profiles, config)
    X, y = dataset_matrix(vectors)
    return train_model_on_matrix(
        X, y, config, arch, pretrain_hp, train_hp, fine_tune_encoder
    )


def train_model_on_matrix(
    X: np.ndarray,
    y: np.ndarray,
    config: FeatureConfig,
    arch: Architecture,
    pretrain_hp: TrainHyperparams,
    train_hp: TrainHyperparams,
    fine_tune_encoder: bool = True,
) -> TrainedModel:
    normalizer = fit_normalizer(X)
    target_normalizer = fit_normalizer(y[:, None])
    Xn = normalizer.transform(X)
    yn = target_normalizer.transform(y[:, None])[:, 0]
    stack, _ = pretrain_sae(Xn, list(arch.encoder_sizes), pretrain_hp)
    net = assemble_network(X.shape[1], stack, arch.head_hidden, seed=train_hp.seed)
    train_predictor(net, Xn, yn, train_hp, fine_tune_encoder=fine_tune_encoder)
    return TrainedModel(net, config, normalizer, target_normalizer)


def predict_profile(
    model: TrainedModel,
    route: Route,
    history: TmcHistory,
    trip_start: float,
    actual_profile: VelocityProfile | None = None,
    teacher_forced: bool = False,
) -> VelocityProfile:
    """Predict a full profile for one trip start time.

    Closed loop by default: each prediction becomes driver history for
    the points after it. Teacher forcing substitutes the actual speeds
    and requires ``actual_profile``.
    """
    if teacher_forced and actual_profile is None:
        raise ValueError("teacher-forced prediction needs the actual profile")
    n_points = len(route.standard_points)
    predicted = np.zeros(n_points)
    for i in range(n_points):
        if teacher_forced:
            prefix = actual_profile.speeds_mps[:i]
        else:
            prefix = predicted[:i]
        vec = assemble_input(route, history, prefix, trip_start, i, model.feature_config)
        xn = model.normalizer.transform(vec.values)
        pred_n = forward(model.net, xn)
        pred = float(model.target_normalizer.inverse(np.array([pred_n]))[0])
        predicted[i] = max(pred, 0.0)
    return VelocityProfile("predicted", trip_start, predicted)


def evaluate_model(
    model: TrainedModel,
    route: Route,
    history: TmcHistory,
    actual_profile: VelocityProfile,
    teacher_forced: bool = False,
) -> tuple[VelocityProfile, float]:
    """Predict the test trip's profile and score it on indices >= r."""
    predicted = predict_profile(
        model, route, history, actual_profile.start_epoch_s,
        actual_profile=actual_profile, teacher_forced=teacher_forced,
    )
    r = model.feature_config.history_r
    score = rmse(predicted.speeds_mps[r:], actual_profile.speeds_mps[r:])
    return predicted, score


BASELINE_NAMES = ("baseline_tmc_direct", "baseline_average_speed", "baseline_posted_speed")


def baseline_profiles(
    route: Route, history: TmcHistory, trip_start: float
) -> dict[str, VelocityProfile]:
    return {
        "baseline_tmc_direct": baseline_tmc_direct(route, history, trip_start),
        "baseline_average_speed": baseline_average_speed(route, history),
        "baseline_posted_speed": baseline_posted_speed(route),
    }


@dataclass
class RmseReport:
    """Per-fold rows, ranked per-config summary, and quarantined failures."""

    rows: list[dict] = field(default_factory=list)
    summary: list[dict] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)
    profile_rows: list[dict] = field(default_factory=list)
    best_config_id: str | None = None


def _config_seeds(
    master_seed: int, n: int, k: int, m: int, r: int, arch: Architecture
) -> tuple[int, int]:
    """Per-config seeds derived from the config content, not its grid slot,
    so identical grid points always train identically."""
    entropy = [master_seed, n, k, m, r, arch.head_hidden, *arch.encoder_sizes]
    state = np.random.SeedSequence(entropy).generate_state(2)
    return int(state[0]), int(state[1])


def _run_config(args: dict) -> dict:
    """Train and evaluate one sweep point over all folds (worker task)."""
    route: Route = args["route"]
    history: TmcHistory = args["history"]
    profiles: dict[str, VelocityProfile] = args["profiles"]
    config: FeatureConfig = args["config"]
    arch: Architecture = args["arch"]
    folds = args["folds"]
    pretrain_seed, train_seed = args["seeds"]
    pretrain_hp: TrainHyperparams = replace(args["pretrain_hp"], seed=pretrain_seed)
    train_hp: TrainHyperparams = replace(args["train_hp"], seed=train_seed)

    per_trip = {
        tid: dataset_matrix(build_dataset(route, history, [profiles[tid]], config))
        for tid in sorted(profiles)
    }

    fold_rows = []
    profile_rows = []
    for fold_idx, (train_ids, test_ids) in enumerate(folds):
        X = np.vstack([per_trip[t][0] for t in train_ids])
        y = np.concatenate([per_trip[t][1] for t in train_ids])
        model = train_model_on_matrix(
            X, y, config, arch, pretrain_hp, train_hp,
            fine_tune_encoder=args["fine_tune_encoder"],
        )
        for tid in test_ids:
            actual = profiles[tid]
            predicted, score = evaluate_model(
                model, route, history, actual, teacher_forced=args["teacher_forced"]
            )
            fold_rows.append({"fold": fold_idx, "trip_id": tid, "rmse_mps": score})
            base = baseline_profiles(route, history, actual.start_epoch_s)
            r = config.history_r
            arcs = route.sp_arcs
            for i in range(len(actual)):
                profile_rows.append(
                    {
                        "fold": fold_idx,
                        "trip_id": tid,
                        "sp_index": i,
                        "arc_m": float(arcs[i]),
                        "actual_mps": float(actual.speeds_mps[i]),
                        "predicted_mps": float(predicted.speeds_mps[i]),
                        "tmc_direct_mps": float(base["baseline_tmc_direct"].speeds_mps[i]),
                        "average_speed_mps": float(base["baseline_average_speed"].speeds_mps[i]),
                        "posted_speed_mps": float(base["baseline_posted_speed"].speeds_mps[i]),
                    }
                )
    return {"rows": fold_rows, "profile_rows": profile_rows}


def _baseline_rows(
    route: Route,
    history: TmcHistory,
    profiles: dict[str, VelocityProfile],
    folds: list[tuple[list[str], list[str]]],
    r: int,
) -> dict[str, list[dict]]:
    """Per-fold baseline scores on the same index window as the models."""
    out: dict[str, list[dict]] = {name: [] for name in BASELINE_NAMES}
    for fold_idx, (_, test_ids) in enumerate(folds):
        for tid in test_ids:
            actual = profiles[tid]
            base = baseline_profiles(route, history, actual.start_epoch_s)
            for name, profile in base.items():
                score = rmse(profile.speeds_mps[r:], actual.speeds_mps[r:])
                out[name].append({"fold": fold_idx, "trip_id": tid, "rmse_mps": score})
    return out


def run_sweep(
    grid: SweepGrid,
    route: Route,
    history: TmcHistory,
    profiles: Sequence[VelocityProfile],
    pretrain_hp: TrainHyperparams,
    train_hp: TrainHyperparams,
    master_seed: int = 0,
    split_strategy: str = "leave-one-out",
    test_fraction: float = 0.2,
    fine_tune_encoder: bool = True,
    teacher_forced: bool = False,
    tmc_sample_period_s: float | None = None,
    workers: int = 1,
) -> RmseReport:
    """Run every grid point over all folds plus the three baselines.

    Individual config failures are quarantined into the report rather
    than aborting the sweep. Deterministic for a fixed master seed.
    """
    profile_map = {p.trip_id: p for p in profiles}
    folds = split_trips(sorted(profile_map), split_strategy, seed=master_seed,
                        test_fraction=test_fraction)
    period = tmc_sample_period_s if tmc_sample_period_s else history.sample_period_s

    points = grid.points()
    tasks = []
    for ci, (n, k, m, r, arch) in enumerate(points):
        tasks.append(
            {
                "config_id": f"cfg{ci:04d}",
                "route": route,
                "history": history,
                "profiles": profile_map,
                "config": FeatureConfig(n, k, m, r, period),
                "arch": arch,
                "folds": folds,
                "seeds": _config_seeds(master_seed, n, k, m, r, arch),
                "pretrain_hp": pretrain_hp,
                "train_hp": train_hp,
                "fine_tune_encoder": fine_tune_encoder,
                "teacher_forced": teacher_forced,
            }
        )

    results: dict[str, dict | Exception] = {}
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {t["config_id"]: pool.submit(_run_config, t) for t in tasks}
            for cid, fut in futures.items():
                try:
                    results[cid] = fut.result()
                except Exception as exc:  # noqa: BLE001 - quarantine any config failure
                    results[cid] = exc
    else:
        for t in tasks:
            try:
                results[t["config_id"]] = _run_config(t)
            except Exception as exc:  # noqa: BLE001
                results[t["config_id"]] = exc

    report = RmseReport()
    n_points_route = len(route.standard_points)
    summaries = []
    for t, (n, k, m, r, arch) in zip(tasks, points):
        cid = t["config_id"]
        meta = {"n": n, "k": k, "m": m, "r": r, "arch": arch.label}
        result = results[cid]
        if isinstance(result, Exception):
            logger.warning("config %s failed: %s", cid, result)
            report.failures.append(
                {"config_id": cid, **meta, "error": f"{type(result).__name__}: {result}"}
            )
            summaries.append(
                {"config_id": cid, **meta, "mean_rmse_mps": None, "pooled_rmse_mps": None,
                 "n_folds": 0, "q_per_trip": n_points_route - r, "status": "failed"}
            )
            continue
        scores = [row["rmse_mps"] for row in result["rows"]]
        for row in result["rows"]:
            report.rows.append({"config_id": cid, **meta, **row})
        summaries.append(
            {
                "config_id": cid, **meta,
                "mean_rmse_mps": float(np.mean(scores)),
                "pooled_rmse_mps": float(np.sqrt(np.mean(np.square(scores)))),
                "n_folds": len(folds),
                "q_per_trip": n_points_route - r,
                "status": "ok",
            }
        )
        result["_meta"] = meta

    # baselines once per distinct scoring window
    for r in sorted({p[3] for p in points}):
        suffix = f"_r{r}" if len({p[3] for p in points}) > 1 else ""
        for name, rows in _baseline_rows(route, history, profile_map, folds, r).items():
            cid = f"{name}{suffix}"
            meta = {"n": "", "k": "", "m": "", "r": r, "arch": ""}
            scores = [row["rmse_mps"] for row in rows]
            for row in rows:
                report.rows.append({"config_id": cid, **meta, **row})
            summaries.append(
                {
                    "config_id": cid, **meta,
                    "mean_rmse_mps": float(np.mean(scores)),
                    "pooled_rmse_mps": float(np.sqrt(np.mean(np.square(scores)))),
                    "n_folds": len(folds),
                    "q_per_trip": n_points_route - r,
                    "status": "ok",
                }
            )

    ok_learned = [
        s for s in summaries if s["status"] == "ok" and s["config_id"].startswith("cfg")
    ]
    if ok_learned:
        best = min(ok_learned, key=lambda s: s["mean_rmse_mps"])
        report.best_config_id = best["config_id"]
        best_result = results[report.best_config_id]
        if isinstance(best_result, dict):
            for row in best_result["profile_rows"]:
                report.profile_rows.append({"config_id": report.best_config_id, **row})

    ranked = sorted(
        summaries,
        key=lambda s: (s["mean_rmse_mps"] is None, s["mean_rmse_mps"], s["config_id"]),
    )
    for rank, s in enumerate(ranked, start=1):
        report.summary.append({"rank": rank, **s})
    return report


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_report(report: RmseReport, out_dir: str) -> dict[str, str]:
    """Write report.csv, summary.csv, profiles.csv (and failures.csv)."""
    import csv

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}

    report_path = out / "report.csv"
    with open(report_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(REPORT_FIELDS)
        for row in report.rows:
            writer.writerow([_format_cell(row[k]) for k in REPORT_FIELDS])
    paths["report"] = str(report_path)

    summary_path = out / "summary.csv"
    with open(summary_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(SUMMARY_FIELDS)
        for row in report.summary:
            writer.writerow([_format_cell(row[k]) for k in SUMMARY_FIELDS])
    paths["summary"] = str(summary_path)

    profiles_path = out / "profiles.csv"
    with open(profiles_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(PROFILE_FIELDS)
        for row in report.profile_rows:
            writer.writerow([_format_cell(row[k]) for k in PROFILE_FIELDS])
    paths["profiles"] = str(profiles_path)

    if report.failures:
        failures_path = out / "failures.csv"
        fields = ["config_id", "n", "k", "m", "r", "arch", "error"]
        with open(failures_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(fields)
            for row in report.failures:
                writer.writerow([_format_cell(row[k]) for k in fields])
        paths["failures"] = str(failures_path)
    return paths
