"""Exception types raised across the package."""


class CcaError(Exception):
    """Base class for every error raised by ccasim."""


# path model
class TooFewWaypoints(CcaError, ValueError):
    pass


class DuplicateWaypoint(CcaError, ValueError):
    pass


class LambdaOutOfRange(CcaError, ValueError):
    pass


class DegenerateTangent(CcaError, ValueError):
    pass


# elastic band
class WindowTooSmall(CcaError, ValueError):
    pass


class NodeInsideObstacle(CcaError, ValueError):
    pass


class LengthMismatch(CcaError, ValueError):
    pass


# decision
class EgoTooSlow(CcaError, ValueError):
    pass


class StaleBsm(CcaError, ValueError):
    pass


# v2v codec
class BsmDecodeError(CcaError, ValueError):
    pass


class BadMagic(BsmDecodeError):
    pass


class BadLength(BsmDecodeError):
    pass


class NonFiniteField(BsmDecodeError):
    pass


# vehicle
class UnknownProfile(CcaError, ValueError):
    pass


# scenario files
class ParseError(CcaError, ValueError):
    """Scenario file could not be parsed, or contains an unknown key."""

    def __init__(self, message, *, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class ValidationError(CcaError, ValueError):
    """Scenario parsed but violates one or more constraints."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class SimulationError(CcaError, RuntimeError):
    """Wraps a module error with the tick at which it happened."""

    def __init__(self, tick, time_s, cause):
        self.tick = tick
        self.time_s = time_s
        self.cause = cause
        super().__init__(f"tick {tick} (t={time_s:.2f} s): {type(cause).__name__}: {cause}")


# plot data
class UnknownKind(CcaError, ValueError):
    pass


class CorruptTrace(CcaError, ValueError):
    pass
