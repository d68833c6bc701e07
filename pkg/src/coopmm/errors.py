"""Exception types shared across the package."""


class CoopError(Exception):
    """Base class for all package errors."""


class SingularRepresentation(CoopError):
    """Roll-pitch-yaw rates are undefined (pitch at +-pi/2)."""


class Unreachable(CoopError):
    """Arm inverse kinematics found no solution."""

    def __init__(self, message="no IK solution", iterations=0):
        super().__init__(message)
        self.iterations = iterations


class DegenerateProjection(CoopError):
    """Ground projections coincide, so an alignment angle is undefined."""


class UncalibratedModel(CoopError):
    """The robot model has no omega_max normalizer."""


class EmptyList(CoopError, ValueError):
    pass


class ParseError(CoopError, ValueError):
    """Malformed scene or model document."""

    def __init__(self, message, field=None, line=None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if field is not None:
            loc.append(f"field '{field}'")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.field = field
        self.line = line


class VersionMismatch(CoopError):
    pass


class InvalidResolution(CoopError, ValueError):
    pass


class EmptyMap(CoopError):
    """Capability map construction kept no entries."""


class FormatError(CoopError):
    """Capability map file is truncated or malformed."""


class ChecksumMismatch(FormatError):
    pass


class Diverged(CoopError):
    """Projection onto the closed-chain manifold did not converge."""

    def __init__(self, message="projection diverged", residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class DivergedTracking(CoopError):
    """End-effector tracking error exceeded the abort limit."""

    def __init__(self, message, tick=None):
        super().__init__(message)
        self.tick = tick
