"""Exception types shared across the package."""


class FlowAlignError(Exception):
    """Base class for all package errors."""


class ValidationError(FlowAlignError):
    """Bad configuration or degenerate input."""


class ShapeError(FlowAlignError):
    """Array dimensions inconsistent with a declared contract."""


class UsageError(FlowAlignError):
    """API called out of order or on mismatched inputs."""


class ParseError(FlowAlignError):
    """Malformed or truncated artifact file."""


class TrainingError(FlowAlignError):
    """Non-finite loss or gradient during optimization."""


class TransportError(FlowAlignError):
    """ODE integration produced a non-finite state."""


class CompatibilityError(FlowAlignError):
    """Artifacts whose fingerprints do not match."""


class DegenerateTaskError(ValidationError):
    """Pose statistics cannot be computed because every axis has zero variance."""
