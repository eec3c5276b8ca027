"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes or lengths are incompatible."""


class DegenerateVectorError(ValueError):
    """A vector that must have nonzero norm is (numerically) zero."""


class OracleFailureError(RuntimeError):
    """The finite-difference oracle hit a non-finite function value."""


class ConfigError(ValueError):
    """A configuration value is outside its legal range."""


class LabelError(ValueError):
    """A class label is out of range or unknown to the model."""


class PairingError(ValueError):
    """Batch structure does not give every anchor exactly one positive."""


class InvalidTripletError(ValueError):
    """A triplet violates the anchor/positive/negative label constraints."""


class DegenerateBatchError(ValueError):
    """No anchor in the batch has the structure the loss requires."""


class ScheduleError(ValueError):
    """A step index falls outside the configured schedule."""


class TrainingDivergedError(RuntimeError):
    """Loss or parameters went non-finite during training."""


class DatasetParseError(ValueError):
    """A dataset file line could not be parsed; carries the line number."""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class StratificationError(ValueError):
    """Few-shot quota cannot cover every class under strict stratification."""
