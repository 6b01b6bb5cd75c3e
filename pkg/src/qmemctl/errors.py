"""Exception types shared across the package."""


class QmemctlError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(QmemctlError, ValueError):
    """A dimension or matrix shape violates the model's structural rules."""


class InvalidScenarioError(QmemctlError, ValueError):
    """A scenario failed validation; carries the offending report."""

    def __init__(self, report):
        self.report = report
        super().__init__("invalid scenario:\n" + report.summary())


class DivergenceError(QmemctlError, RuntimeError):
    """A numerical state stopped being finite during integration."""


class GridMismatchError(QmemctlError, ValueError):
    """Two solutions expected on a shared time grid disagree about it."""


class ScenarioFormatError(QmemctlError, ValueError):
    """A scenario file failed to parse or contains malformed fields."""


class PipelineError(QmemctlError, RuntimeError):
    """A pipeline stage failed; message names the stage."""
