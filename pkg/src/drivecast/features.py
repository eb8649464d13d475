"""Model-input assembly: three feature blocks plus min-max normalization.

Each vector describes one standard point of one trip and concatenates,
in this fixed order:

  geometric block   5*(n+1) values: (upstream distance, curvature,
                    altitude, lanes, speed limit) for the current point
                    and the n points ahead
  TMC block         (2k+1)*(m+1) values: section speed at the points
                    k behind..k ahead, at the trip start time and the m
                    previous sample periods (spatial index inner, time
                    outer, newest first)
  history block     r values: driver speed at the r previous standard
                    points, newest first

The speed at the current point is the target and never appears among
the inputs. Indices past either route end replicate the nearest valid
point; missing earlier driver speeds fall back to the section speed at
the trip start.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyTrainingSet, InvalidIndex, ParseError
from .route import Route
from .tmc import TmcHistory, sample_tmc
from .trips import VelocityProfile

NORM_LO = 0.1
NORM_HI = 0.9


@dataclass(frozen=True)
class FeatureConfig:
    lookahead_n: int
    tmc_k: int
    tmc_m: int
    history_r: int
    tmc_sample_period_s: float = 60.0

    def __post_init__(self):
        if not 0 <= self.lookahead_n <= 5:
            raise ValueError(f"lookahead_n must be in [0, 5], got {self.lookahead_n}")
        if self.tmc_k < 1:
            raise ValueError(f"tmc_k must be >= 1, got {self.tmc_k}")
        if self.tmc_m < 0:
            raise ValueError(f"tmc_m must be >= 0, got {self.tmc_m}")
        if self.history_r < 1:
            raise ValueError(f"history_r must be >= 1, got {self.history_r}")
        if self.tmc_sample_period_s <= 0:
            raise ValueError(f"tmc_sample_period_s must be > 0, got {self.tmc_sample_period_s}")

    def to_dict(self) -> dict:
        return {
            "lookahead_n": self.lookahead_n,
            "tmc_k": self.tmc_k,
            "tmc_m": self.tmc_m,
            "history_r": self.history_r,
            "tmc_sample_period_s": self.tmc_sample_period_s,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureConfig":
        return cls(**d)


@dataclass
class FeatureVector:
    values: np.ndarray
    target: float
    trip_id: str = ""
    sp_index: int = -1


def input_dimension(config: FeatureConfig) -> int:
    """Total assembled vector length for a feature configuration."""
    n, k, m, r = config.lookahead_n, config.tmc_k, config.tmc_m, config.history_r
    return 5 * (n + 1) + (2 * k + 1) * (m + 1) + r


def assemble_input(
    route: Route,
    history: TmcHistory,
    profile_prefix: Sequence[float],
    trip_start: float,
    sp_index: int,
    config: FeatureConfig,
    target: float = float("nan"),
) -> FeatureVector:
    """Build the input vector for one standard point of one trip.

    ``profile_prefix`` holds the driver's speeds at standard points
    0..sp_index-1 (actual speeds when building training data, fed-back
    predictions during closed-loop evaluation).
    """
    sps = route.standard_points
    last = len(sps) - 1
    if not 0 <= sp_index <= last:
        raise InvalidIndex(f"sp_index {sp_index} outside route [0, {last}]")
    if len(profile_prefix) < sp_index:
        raise InvalidIndex(
            f"profile_prefix has {len(profile_prefix)} speeds, need {sp_index}"
        )

    def clamp(j: int) -> int:
        return min(max(j, 0), last)

    values: list[float] = []
    for j in range(sp_index, sp_index + config.lookahead_n + 1):
        sp = sps[clamp(j)]
        values.extend(
            [
                sp.dist_to_upstream_shape_m,
                sp.curvature_per_m,
                sp.altitude_m,
                float(sp.lanes),
                sp.speed_limit_mps,
            ]
        )

    for j in range(config.tmc_m + 1):
        t = trip_start - j * config.tmc_sample_period_s
        for s in range(-config.tmc_k, config.tmc_k + 1):
            code = sps[clamp(sp_index + s)].tmc_code
            values.append(sample_tmc(history, code, t))

    if len(profile_prefix) > 0:
        pad = float(profile_prefix[0])
    else:
        pad = sample_tmc(history, sps[0].tmc_code, trip_start)
    for d in range(1, config.history_r + 1):
        idx = sp_index - d
        values.append(float(profile_prefix[idx]) if idx >= 0 else pad)

    return FeatureVector(
        values=np.array(values, dtype=float),
        target=float(target),
        sp_index=sp_index,
    )


def build_dataset(
    route: Route,
    history: TmcHistory,
    profiles: Sequence[VelocityProfile],
    config: FeatureConfig,
) -> list[FeatureVector]:
    """Assemble training vectors for every (trip, standard point) pair."""
    vectors = []
    for profile in profiles:
        if len(profile) != len(route.standard_points):
            raise InvalidIndex(
                f"profile {profile.trip_id!r} length {len(profile)} != route {len(route.standard_points)}"
            )
        speeds = profile.speeds_mps
        for i in range(len(speeds)):
            vec = assemble_input(
                route, history, speeds[:i], profile.start_epoch_s, i, config,
                target=float(speeds[i]),
            )
            vec.trip_id = profile.trip_id
            vectors.append(vec)
    return vectors


class Normalizer:
    """Per-dimension affine map from [min, max] to [0.1, 0.9].

    Constant dimensions map to 0.5; out-of-range values at apply time
    clamp to [0, 1]. Fit on the training split only.
    """

    def __init__(self, lo: np.ndarray, hi: np.ndarray):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if lo.shape != hi.shape or (hi < lo).any():
            raise ValueError("normalizer requires max >= min per dimension")
        self.lo = lo
        self.hi = hi
        self._span = hi - lo
        self._const = self._span == 0.0

    @property
    def dim(self) -> int:
        return len(self.lo)

    def transform(self, values: np.ndarray) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        span = np.where(self._const, 1.0, self._span)
        out = NORM_LO + (NORM_HI - NORM_LO) * (v - self.lo) / span
        out = np.where(self._const, 0.5, out)
        return np.clip(out, 0.0, 1.0)

    def inverse(self, normalized: np.ndarray) -> np.ndarray:
        v = np.asarray(normalized, dtype=float)
        out = (v - NORM_LO) / (NORM_HI - NORM_LO) * self._span + self.lo
        return np.where(self._const, self.lo, out)

    def to_dict(self) -> dict:
        return {"min": self.lo.tolist(), "max": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(np.array(d["min"], dtype=float), np.array(d["max"], dtype=float))


def fit_normalizer(training_values: np.ndarray | Sequence[Sequence[float]]) -> Normalizer:
    """Fit per-dimension min/max bounds on training rows.

    Raises:
        EmptyTrainingSet: no rows supplied.
    """
    matrix = np.atleast_2d(np.asarray(training_values, dtype=float))
    if matrix.size == 0:
        raise EmptyTrainingSet("cannot fit a normalizer on an empty training set")
    return Normalizer(matrix.min(axis=0), matrix.max(axis=0))


def dataset_matrix(vectors: Sequence[FeatureVector]) -> tuple[np.ndarray, np.ndarray]:
    """(inputs, targets) arrays from assembled vectors."""
    X = np.stack([v.values for v in vectors])
    y = np.array([v.target for v in vectors])
    return X, y


def _sidecar_path(path: str) -> str:
    return f"{path}.meta.json"


def save_dataset(
    path: str,
    vectors: Sequence[FeatureVector],
    config: FeatureConfig,
    trip_starts: dict[str, float],
    normalizer: Normalizer | None = None,
    target_normalizer: Normalizer | None = None,
) -> None:
    """Write the dataset CSV and its JSON sidecar (bit-exact round trip)."""
    dim = input_dimension(config)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["trip_id", "sp_index", "target_mps"] + [f"v_{i}" for i in range(dim)])
        for vec in vectors:
            writer.writerow(
                [vec.trip_id, vec.sp_index, repr(float(vec.target))]
                + [repr(float(x)) for x in vec.values]
            )
    sidecar = {
        "feature_config": config.to_dict(),
        "trip_starts": {k: float(v) for k, v in trip_starts.items()},
        "normalizer": normalizer.to_dict() if normalizer else None,
        "target_normalizer": target_normalizer.to_dict() if target_normalizer else None,
    }
    with open(_sidecar_path(path), "w", encoding="utf-8") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")


def load_dataset(path: str):
    """Read a dataset CSV + sidecar.

    Returns (vectors, config, trip_starts, normalizer, target_normalizer);
    the normalizers are None when the sidecar carries none.
    """
    with open(_sidecar_path(path), encoding="utf-8") as f:
        sidecar = json.load(f)
    config = FeatureConfig.from_dict(sidecar["feature_config"])
    dim = input_dimension(config)
    vectors = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        expected = ["trip_id", "sp_index", "target_mps"] + [f"v_{i}" for i in range(dim)]
        if header is None or [h.strip() for h in header] != expected:
            raise ParseError(path, 1, "dataset header does not match feature config dimension")
        for row in reader:
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            try:
                vectors.append(
                    FeatureVector(
                        values=np.array([float(x) for x in row[3:]], dtype=float),
                        target=float(row[2]),
                        trip_id=row[0],
                        sp_index=int(row[1]),
                    )
                )
            except (ValueError, IndexError) as exc:
                raise ParseError(path, reader.line_num, str(exc)) from exc
    normalizer = Normalizer.from_dict(sidecar["normalizer"]) if sidecar.get("normalizer") else None
    target_norm = (
        Normalizer.from_dict(sidecar["target_normalizer"])
        if sidecar.get("target_normalizer")
        else None
    )
    return vectors, config, sidecar["trip_starts"], normalizer, target_norm
