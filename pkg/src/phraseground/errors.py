"""Shared exception types."""


class DimensionError(ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class ConfigurationError(ValueError):
    """A config value is invalid (e.g. hidden width not divisible by heads)."""


class ValidationError(ValueError):
    """Input data violates a documented precondition or invariant."""


class StateError(RuntimeError):
    """An operation was called in the wrong state (e.g. Adam before backward)."""


class GenerationError(RuntimeError):
    """Scene/description generation could not satisfy its constraints."""


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss); details are dumped alongside."""


class SchemaError(ValueError):
    """A serialized record does not match the expected schema.

    The message names the offending record and field, e.g. "samples[3].target_id".
    """
