"""Exception types shared across the package.

Every error carries a stable machine-parseable ``code`` that the CLI
prints on stderr (``<code>: <message>``).
"""

from __future__ import annotations


class DrivecastError(Exception):
    """Base class for all package errors."""

    code = "error"


class ConfigError(DrivecastError):
    code = "config.invalid"


class MissingInput(DrivecastError):
    code = "io.missing_input"


class ParseError(DrivecastError):
    code = "io.parse"

    def __init__(self, source: str, line: int, message: str):
        super().__init__(f"{source}:{line}: {message}")
        self.source = source
        self.line = line


class NonMonotonicTime(ParseError):
    code = "io.non_monotonic_time"


class DegenerateRoute(DrivecastError):
    code = "route.degenerate"


class UncoveredPoint(DrivecastError):
    code = "tmc.uncovered_point"

    def __init__(self, index: int, message: str = ""):
        super().__init__(message or f"standard point {index} not covered by any section")
        self.index = index


class NoData(DrivecastError):
    code = "tmc.no_data"

    def __init__(self, tmc_code: str, index: int | None = None):
        at = f" (standard point {index})" if index is not None else ""
        super().__init__(f"no observations for section {tmc_code!r}{at}")
        self.tmc_code = tmc_code
        self.index = index


class UnmatchedTrip(DrivecastError):
    code = "trips.unmatched"


class InvalidIndex(DrivecastError):
    code = "features.invalid_index"


class EmptyTrainingSet(DrivecastError):
    code = "features.empty_training_set"


class InvalidArchitecture(DrivecastError):
    code = "network.invalid_architecture"


class DimensionMismatch(DrivecastError):
    code = "network.dimension_mismatch"


class NonFiniteLoss(DrivecastError):
    code = "network.non_finite_loss"

    def __init__(self, epoch: int, message: str = ""):
        super().__init__(message or f"loss became non-finite at epoch {epoch}")
        self.epoch = epoch


class LengthMismatch(DrivecastError):
    code = "experiments.length_mismatch"


class EmptyInput(DrivecastError):
    code = "experiments.empty_input"


class TooFewTrips(DrivecastError):
    code = "experiments.too_few_trips"


class InvalidParams(DrivecastError):
    code = "synth.invalid_params"
