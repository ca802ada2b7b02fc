"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration or infeasible generation spec."""


class ScenarioFormatError(ValueError):
    """Malformed or wrong-version scenario/report payload."""


class InternalStateError(RuntimeError):
    """Pipeline state drifted out of its invariants (a bug, not bad input)."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; diagnostics are attached."""

    def __init__(self, message: str, dump: dict):
        super().__init__(message)
        self.dump = dump


class EmptyReportError(RuntimeError):
    """No events available to aggregate."""
