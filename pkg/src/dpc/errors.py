"""Exception hierarchy shared by every stage of the solver."""


class DPCError(Exception):
    """Base class for all library errors."""

    exit_code = 2


class EmptyInput(DPCError):
    pass


class DegenerateInput(DPCError):
    pass


class ShapeError(DPCError):
    pass


class NumericalError(DPCError):
    exit_code = 3


class ConfigError(DPCError):
    exit_code = 1


class StateError(DPCError):
    pass


class DataError(DPCError):
    pass


class StageError(DPCError):
    """Wraps a failure inside one pipeline stage; ``stage`` names it."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 2)
