"""Exception hierarchy shared by every accelscale module."""

from __future__ import annotations


class AccelScaleError(Exception):
    """Base class for all accelscale errors."""


class InputError(AccelScaleError, ValueError):
    """Bad user input: malformed spec, profile, config or flag."""


class ComputationError(AccelScaleError):
    """A well-formed request that cannot be computed."""


# -- architecture IR -------------------------------------------------------

class SpecError(InputError):
    pass


class EmptyModel(SpecError):
    pass


class NonDivisibleStride(SpecError):
    pass


class InvalidPhi(InputError):
    pass


class ParseError(InputError):
    """Raised while loading a JSON document; carries the offending location."""

    def __init__(self, message: str, *, path: str | None = None, field: str | None = None,
                 line: int | None = None):
        self.path = path
        self.field = field
        self.line = line
        where = []
        if path:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field '{field}'")
        prefix = ": ".join([", ".join(where)]) + ": " if where else ""
        super().__init__(prefix + message)


# -- cost model ------------------------------------------------------------

class UnsupportedOp(ComputationError):
    pass


class BadRange(InputError):
    pass


# -- scaling / search ------------------------------------------------------

class Unreachable(ComputationError):
    pass


class NonMonotone(ComputationError):
    pass


class EmptyGrid(InputError):
    pass


class NoMutationPossible(ComputationError):
    pass


class SpaceTooLarge(ComputationError):
    pass


class LevelMismatch(InputError):
    pass
