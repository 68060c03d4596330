"""Exception hierarchy shared by all patchdesc modules.

Exit-code mapping used by the CLI: configuration/shape errors exit 2,
I/O errors exit 3, numerical/degenerate/topology errors exit 4.
"""


class PatchdescError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(PatchdescError):
    """Invalid parameter or option value."""


class ShapeError(ConfigurationError):
    """Array dimensions incompatible with an operation."""


class DegenerateInputError(PatchdescError):
    """Geometrically degenerate input (coincident points, zero area, ...)."""


class TopologyError(PatchdescError):
    """Mesh connectivity violates a required property."""


class NumericalError(PatchdescError):
    """Numerical failure (non-finite values, convergence failure)."""


class DatasetIOError(PatchdescError):
    """Corrupt, truncated or version-mismatched on-disk artifact."""
