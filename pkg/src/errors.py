from typing import Any, Optional


class HredError(Exception):
    pass


class ContractViolation(HredError, ValueError):
    pass


class DataError(HredError):
    pass


class CheckpointError(DataError):
    pass


class UsageError(HredError):
    pass


class NonFiniteGradientError(HredError):

    def __init__(self, parameter: str):
        super().__init__(f"Non-finite gradient for parameter '{parameter}'")
        self.parameter = parameter


class DivergenceError(HredError):

    def __init__(self, message: str, last_checkpoint: Optional[Any] = None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint
