"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with:  pytest tests/test_acceptance.py -v -s
"""

import json
import math
import time

import numpy as np
import pytest

from drivecast.cli import main as cli_main
from drivecast.experiments import Architecture, SweepGrid, rmse, run_sweep
from drivecast.features import FeatureConfig, assemble_input, input_dimension
from drivecast.network import (
    TrainHyperparams,
    encode,
    gradient_check,
    init_network,
    train_autoencoder_layer,
)
from drivecast.route import build_route
from drivecast.synth import (
    DriverPersona,
    WorldParams,
    generate_trips,
    generate_world,
)
from drivecast.tmc import extract_tmc_history, map_route_to_tmc, minimum_interval_cover
from drivecast.trips import extract_velocity_profile

from test_tmc import brute_force_min_cover_size, random_covering_layout


def report_line(criterion: int, name: str, ok: bool, detail: str) -> None:
    status = "PASS" if ok else "FAIL"
    print(f"{status} criterion {criterion}: {name} ({detail})")
    assert ok, f"criterion {criterion} failed: {detail}"


def full_scale_world(seed=2026):
    params = WorldParams(
        seed=seed, route_length_m=5000.0, n_shape_points=40, n_sections=5, history_days=1.0
    )
    world = generate_world(params)
    route = build_route(world.shape_points, spacing_m=100.0)
    map_route_to_tmc(route, world.sections)
    return world, route


def test_criterion_1_gradient_correctness():
    start = time.time()
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(20):
        input_dim = int(rng.integers(2, 21))
        depth = int(rng.integers(1, 4))  # hidden layers including the head hidden
        sizes = [input_dim] + [int(rng.integers(2, 9)) for _ in range(depth)]
        net = init_network(sizes, seed=int(rng.integers(1_000_000)))
        x = rng.uniform(0.1, 0.9, input_dim)
        target = float(rng.uniform(0.1, 0.9))
        worst = max(worst, gradient_check(net, x, target, epsilon=1e-5))
    elapsed = time.time() - start
    report_line(
        1, "gradient correctness",
        worst < 1e-6 and elapsed < 10.0,
        f"max rel err {worst:.2e} over 20 architectures in {elapsed:.1f}s",
    )


def test_criterion_2_sae_pretraining_descent():
    start = time.time()
    rng = np.random.default_rng(22)
    z = rng.uniform(-1, 1, size=(50, 3))
    mix = rng.uniform(-2, 2, size=(3, 20))
    X = 0.5 + 0.35 * np.sin(z @ mix)

    ratios = []
    current = X
    for li, hidden in enumerate([16, 8]):
        hp0 = TrainHyperparams(learning_rate=0.3, epochs=0, batch_size=10,
                               l2_lambda=0.0, seed=li)
        _, initial = train_autoencoder_layer(current, hidden, hp0)
        hp = TrainHyperparams(learning_rate=0.3, epochs=300, batch_size=10,
                              l2_lambda=0.0, seed=li)
        layer, final = train_autoencoder_layer(current, hidden, hp)
        ratios.append(final / initial)
        current = encode([layer], current)
    elapsed = time.time() - start
    report_line(
        2, "SAE pretraining descent",
        all(r < 0.25 for r in ratios) and elapsed < 30.0,
        f"final/initial MSE per layer {[f'{r:.3f}' for r in ratios]} in {elapsed:.1f}s",
    )


def test_criterion_3_pipeline_round_trip():
    world, route = full_scale_world()
    persona = DriverPersona(
        speed_ratio=1.10, curvature_sensitivity=5.0, noise_sigma_mps=0.5, reaction_lag_s=1.0
    )
    trips = generate_trips(world, persona, 21, seed=9)
    worst = 0.0
    for log, truth in trips:
        extracted = extract_velocity_profile(log, route)
        worst = max(worst, rmse(extracted.speeds_mps, truth.speeds_mps))
    report_line(
        3, "pipeline round-trip",
        worst < 0.2,
        f"worst per-trip RMSE {worst:.3f} m/s over 21 trips",
    )


def test_criterion_4_learned_beats_baselines():
    start = time.time()
    world, route = full_scale_world()
    persona = DriverPersona(
        speed_ratio=1.10, curvature_sensitivity=5.0, noise_sigma_mps=0.5, reaction_lag_s=1.0
    )
    profiles = [p for _, p in generate_trips(world, persona, 21, seed=9)]
    grid = SweepGrid(lookahead=(2,), k=(2,), m=(2,), r=(3,),
                     architectures=(Architecture((24,), 16),))
    pretrain_hp = TrainHyperparams(learning_rate=0.1, epochs=100, batch_size=16, l2_lambda=1e-4)
    train_hp = TrainHyperparams(learning_rate=0.05, epochs=300, batch_size=16, l2_lambda=1e-4)
    report = run_sweep(
        grid, route, world.history, profiles, pretrain_hp, train_hp, master_seed=5
    )
    by_id = {s["config_id"]: s["mean_rmse_mps"] for s in report.summary}
    learned = by_id["cfg0000"]
    baselines = {k: v for k, v in by_id.items() if k.startswith("baseline")}
    best_baseline = min(baselines.values())
    elapsed = time.time() - start
    ok = (
        all(learned < v for v in baselines.values())
        and learned <= 0.9 * best_baseline
        and elapsed < 600.0
    )
    report_line(
        4, "learned beats baselines",
        ok,
        f"learned {learned:.3f} vs best baseline {best_baseline:.3f} "
        f"(margin {100 * (1 - learned / best_baseline):.0f}%, need >= 10%) in {elapsed:.0f}s",
    )


def test_criterion_5_dimension_formula_full_grid():
    start = time.time()
    world, route = full_scale_world()
    last_speed = 25.0
    prefix = np.full(6, last_speed)
    trip_start = float(world.history.series["SEC01"][0][100])
    checked = 0
    for n in range(6):
        for k in range(1, 6):
            for m in range(11):
                for r in range(1, 11):
                    config = FeatureConfig(n, k, m, r)
                    vec = assemble_input(
                        route, world.history, prefix, trip_start, 6, config
                    )
                    assert len(vec.values) == input_dimension(config), (n, k, m, r)
                    checked += 1
    elapsed = time.time() - start
    report_line(
        5, "dimension formula over full grid",
        checked == 3300 and elapsed < 60.0,
        f"{checked} configs recounted in {elapsed:.1f}s",
    )


def test_criterion_6_rmse_oracle():
    exact = rmse([13.0, 7.0], [10.0, 10.0])
    rng = np.random.default_rng(66)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 50))
        p = rng.uniform(0, 40, n)
        a = rng.uniform(0, 40, n)
        naive = math.sqrt(sum((x - y) ** 2 for x, y in zip(p, a)) / n)
        worst = max(worst, abs(rmse(p, a) - naive))
    report_line(
        6, "RMSE oracle",
        exact == 3.0 and worst < 1e-12,
        f"hand case {exact}, max |diff| vs naive {worst:.1e} over 1000 pairs",
    )


def test_criterion_7_minimum_cover_oracle():
    rng = np.random.default_rng(77)
    mismatches = 0
    for _ in range(100):
        intervals, n = random_covering_layout(rng)
        chosen = minimum_interval_cover(intervals, n)
        covered = set()
        for c in chosen:
            covered.update(range(intervals[c][0], intervals[c][1] + 1))
        if len(chosen) != brute_force_min_cover_size(intervals, n) or not covered >= set(range(n)):
            mismatches += 1
    report_line(
        7, "minimum-cover oracle",
        mismatches == 0,
        f"{mismatches} mismatches over 100 random layouts (<= 10 sections)",
    )


def test_criterion_8_sweep_determinism(tmp_path):
    config = {
        "seed": 404,
        "paths": {
            "route": "world/route.csv",
            "sections": "world/sections.csv",
            "history": "world/history",
            "trips": "world/trips",
        },
        "world": {
            "route_length_m": 2000.0, "n_shape_points": 18, "n_sections": 2,
            "history_days": 0.5,
        },
        "persona": {"speed_ratio": 1.1, "noise_sigma_mps": 0.4},
        "trips": {"count": 5},
        "training": {
            "pretrain": {"learning_rate": 0.1, "epochs": 20, "batch_size": 16},
            "supervised": {"learning_rate": 0.05, "epochs": 50, "batch_size": 16},
        },
        "sweep": {
            "lookahead": [1], "k": [1], "m": [1], "r": [2],
            "architectures": [{"encoder": [8], "head_hidden": 6}],
        },
    }
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(config))
    assert cli_main(["synth-world", "--config", str(config_path),
                     "--out", str(tmp_path / "world")]) == 0
    for run in ("s1", "s2"):
        assert cli_main(["sweep", "--config", str(config_path),
                         "--out", str(tmp_path / run)]) == 0
    identical = all(
        (tmp_path / "s1" / name).read_bytes() == (tmp_path / "s2" / name).read_bytes()
        for name in ["report.csv", "summary.csv", "profiles.csv", "sweep_config.json"]
    )
    report_line(
        8, "sweep determinism",
        identical,
        "two sweep runs with the same master seed are byte-identical",
    )


def test_criterion_9_ingest_throughput(tmp_path):
    path = tmp_path / "big_history.csv"
    codes = [f"SEC{i:02d}" for i in range(1, 6)]
    target_bytes = 10 * 1024 * 1024
    with open(path, "w", encoding="utf-8") as f:
        f.write("tmc_code,timestamp_utc_s,current_speed_mps,freeflow_speed_mps\n")
        ts = 1_700_000_000.0
        i = 0
        while f.tell() < target_bytes:
            code = codes[i % 5]
            f.write(f"{code},{ts + 60.0 * (i // 5)},{20.0 + (i % 17) * 0.25},31.5\n")
            i += 1
    size_mb = path.stat().st_size / 1024 / 1024

    start = time.time()
    history = extract_tmc_history(codes, [path])
    elapsed = time.time() - start
    report_line(
        9, "ingest throughput",
        elapsed <= 2.0 and len(history) > 0,
        f"{size_mb:.1f} MB ({len(history)} records) parsed in {elapsed:.2f}s",
    )
