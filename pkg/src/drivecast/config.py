"""Run configuration: one JSON document drives every subcommand.

Relative paths inside the config resolve against the config file's
directory, so a config and its data can be archived together. Values
can be overridden on the command line with ``--set dotted.key=value``
(values parse as JSON, falling back to raw strings).
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .errors import ConfigError, MissingInput
from .experiments import Architecture, SweepGrid
from .features import FeatureConfig
from .network import TrainHyperparams
from .synth import DriverPersona, WorldParams

DEFAULT_CONFIG: dict = {
    "seed": 1234,
    "paths": {
        "route": "world/route.csv",
        "sections": "world/sections.csv",
        "history": "world/history",
        "trips": "world/trips",
    },
    "route": {"spacing_m": 100.0},
    "matching": {
        "max_offset_m": 50.0,
        "min_coverage": 0.95,
        "lateral_threshold_m": 30.0,
    },
    "world": {
        "route_length_m": 5000.0,
        "n_shape_points": 40,
        "n_sections": 5,
        "diurnal_amplitude_mps": 6.0,
        "diurnal_phase_h": 7.0,
        "congestion_rate_per_day": 2.0,
        "congestion_depth_mps": 8.0,
        "tmc_sample_period_s": 60.0,
        "history_days": 1.0,
        "base_speed_mps": 30.0,
        "winding_rad": 0.35,
    },
    "persona": {
        "speed_ratio": 1.08,
        "curvature_sensitivity": 5.0,
        "noise_sigma_mps": 0.5,
        "reaction_lag_s": 1.0,
    },
    "trips": {"count": 21},
    "features": {
        "lookahead_n": 2,
        "tmc_k": 2,
        "tmc_m": 2,
        "history_r": 3,
        "tmc_sample_period_s": 60.0,
    },
    "training": {
        "pretrain": {"learning_rate": 0.1, "epochs": 200, "batch_size": 16, "l2_lambda": 1e-4},
        "supervised": {"learning_rate": 0.05, "epochs": 500, "batch_size": 16, "l2_lambda": 1e-4},
        "architecture": {"encoder": [24], "head_hidden": 16},
        "fine_tune_encoder": True,
    },
    "sweep": {
        "lookahead": [2],
        "k": [2],
        "m": [2],
        "r": [3],
        "architectures": [{"encoder": [24], "head_hidden": 16}],
        "split": "leave-one-out",
        "test_fraction": 0.2,
        "teacher_forced": False,
        "allow_extended": False,
        "workers": 1,
    },
}


def _deep_merge(base: dict, overlay: dict) -> dict:
    merged = copy.deepcopy(base)
    for key, value in overlay.items():
        if key in merged and isinstance(merged[key], dict) and isinstance(value, dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _apply_set(config: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set expects dotted.key=value, got {assignment!r}")
    dotted, raw = assignment.split("=", 1)
    keys = [k for k in dotted.strip().split(".") if k]
    if not keys:
        raise ConfigError(f"--set has an empty key in {assignment!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = config
    for key in keys[:-1]:
        nxt = node.get(key)
        if not isinstance(nxt, dict):
            nxt = {}
            node[key] = nxt
        node = nxt
    node[keys[-1]] = value


class RunConfig:
    """Validated view over the merged configuration document."""

    def __init__(self, data: dict, base_dir: Path):
        self.data = data
        self.base_dir = base_dir

    @classmethod
    def load(cls, path: str, sets: list[str] | None = None) -> "RunConfig":
        p = Path(path)
        if not p.is_file():
            raise MissingInput(f"config file not found: {path}")
        try:
            with open(p, encoding="utf-8") as f:
                user = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        merged = _deep_merge(DEFAULT_CONFIG, user)
        for assignment in sets or []:
            _apply_set(merged, assignment)
        return cls(merged, p.parent.resolve())

    @property
    def seed(self) -> int:
        try:
            return int(self.data["seed"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"seed must be an integer: {self.data['seed']!r}") from exc

    @property
    def spacing_m(self) -> float:
        return float(self.data["route"]["spacing_m"])

    def path(self, role: str, must_exist: bool = True) -> Path:
        rel = self.data["paths"].get(role)
        if rel is None:
            raise ConfigError(f"paths.{role} missing from config")
        p = Path(rel)
        if not p.is_absolute():
            p = self.base_dir / p
        if must_exist and not p.exists():
            raise MissingInput(f"paths.{role} does not exist: {p}")
        return p

    def world_params(self) -> WorldParams:
        block = dict(self.data["world"])
        block.setdefault("seed", self.seed)
        try:
            return WorldParams(**block)
        except TypeError as exc:
            raise ConfigError(f"world block: {exc}") from exc

    def persona(self) -> DriverPersona:
        try:
            return DriverPersona(**self.data["persona"])
        except TypeError as exc:
            raise ConfigError(f"persona block: {exc}") from exc

    def feature_config(self) -> FeatureConfig:
        try:
            return FeatureConfig(**self.data["features"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"features block: {exc}") from exc

    def hyperparams(self, phase: str, seed: int) -> TrainHyperparams:
        block = dict(self.data["training"][phase])
        block["seed"] = seed
        try:
            return TrainHyperparams(**block)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"training.{phase} block: {exc}") from exc

    def architecture(self) -> Architecture:
        block = self.data["training"]["architecture"]
        try:
            return Architecture(tuple(block["encoder"]), int(block["head_hidden"]))
        except (TypeError, KeyError, ValueError) as exc:
            raise ConfigError(f"training.architecture block: {exc}") from exc

    def sweep_grid(self) -> SweepGrid:
        block = self.data["sweep"]
        try:
            archs = tuple(
                Architecture(tuple(a["encoder"]), int(a["head_hidden"]))
                for a in block["architectures"]
            )
            return SweepGrid(
                lookahead=tuple(block["lookahead"]),
                k=tuple(block["k"]),
                m=tuple(block["m"]),
                r=tuple(block["r"]),
                architectures=archs,
                allow_extended=bool(block.get("allow_extended", False)),
            )
        except (TypeError, KeyError, ValueError) as exc:
            raise ConfigError(f"sweep block: {exc}") from exc

    def dump(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.data, f, indent=2, sort_keys=True)
            f.write("\n")
