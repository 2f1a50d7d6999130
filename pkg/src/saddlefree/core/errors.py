class SaddleFreeError(Exception):
    """Base class for every error raised by the solvers and the harness."""


class OracleError(SaddleFreeError):
    def __init__(self, message: str = "oracle returned non-finite value") -> None:
        super().__init__(message)


class NonFiniteObjectiveError(SaddleFreeError):
    def __init__(self, message: str = "objective not finite along step") -> None:
        super().__init__(message)


class StepsizeUnderflowError(SaddleFreeError):
    def __init__(self, message: str = "stepsize underflow") -> None:
        super().__init__(message)


class SubsolverContractError(SaddleFreeError):
    def __init__(self, message: str = "subsolver contract violated") -> None:
        super().__init__(message)


class EmptyBoxError(SaddleFreeError, ValueError):
    def __init__(self, message: str = "empty box") -> None:
        super().__init__(message)


class InhomogeneousReportsError(SaddleFreeError):
    def __init__(self, message: str = "inhomogeneous reports") -> None:
        super().__init__(message)
