"""Exception types and the CLI exit codes they map to."""


class SuperpatchError(Exception):
    exit_code = 1


class InputError(SuperpatchError, ValueError):
    """Malformed arguments: wrong dimensions, invalid labels, bad scopes."""

    exit_code = 2


class FormatError(InputError):
    """Unparseable image or table file."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class CoverError(InputError):
    """A factor scope is not contained in any patch."""


class ModelError(SuperpatchError):
    """The model cannot be built or has no feasible labeling."""

    exit_code = 3


class InfeasibleModelError(ModelError):
    pass


class CapacityError(SuperpatchError):
    """Exhaustive search would exceed the configured assignment cap."""

    exit_code = 4
