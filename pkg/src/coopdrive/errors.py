"""Exception types shared across the package."""


class CoopDriveError(Exception):
    """Base class for all package errors."""


class ConfigError(CoopDriveError):
    """Invalid or inconsistent configuration value. Names the offending field."""


class UnreachableCellError(CoopDriveError):
    """A cell cannot be reached under the given kinematic state (stopped with
    no forward acceleration, or braking to a halt before the far edge)."""


class InfeasibleRouteError(CoopDriveError):
    """The requested route crosses blocked cells or has no room for the
    required lane-change maneuver."""


class InfeasibleTargetsError(CoopDriveError):
    """No piecewise-constant-acceleration profile within the kinematic limits
    meets the requested per-cell arrival targets."""


class SafetyViolationError(CoopDriveError):
    """The simulator observed a cell-headway or spacing violation."""

    def __init__(self, message: str, *, time: float | None = None,
                 cell=None, vehicles=None):
        super().__init__(message)
        self.time = time
        self.cell = cell
        self.vehicles = vehicles or []


class OracleMismatchError(CoopDriveError):
    """Exhaustive enumeration disagreed with the tree search at saturation."""
