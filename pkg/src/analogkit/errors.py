"""Exception types shared across the package."""


class AnalogkitError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(AnalogkitError):
    """Invalid or inconsistent experiment configuration."""


class SchemaError(AnalogkitError):
    """Malformed input file (bad row, bad header, duplicate key, no records)."""


class DataError(AnalogkitError):
    """Data content makes the requested operation impossible."""


class WindowUnavailable(DataError):
    """A forecast window cannot be constructed.

    Raised both when the window would extend past the lead axis and when it
    would contain missing values. Search code treats either case as
    "candidate unavailable".
    """


class InsufficientAnalogs(DataError):
    """Fewer ranked candidates than requested ensemble members."""

    def __init__(self, available: int, requested: int):
        super().__init__(
            f"insufficient analogs: {available} candidates for {requested} members"
        )
        self.available = available
        self.requested = requested


class DivergenceError(AnalogkitError):
    """Training produced a non-finite loss, gradient, or parameter."""

    def __init__(self, iteration: int, checkpoint_path=None):
        msg = f"numerical divergence at iteration {iteration}"
        if checkpoint_path is not None:
            msg += f" (last good checkpoint saved to {checkpoint_path})"
        super().__init__(msg)
        self.iteration = iteration
        self.checkpoint_path = checkpoint_path
