"""Exception hierarchy shared by all modules."""


class CpaSynthError(Exception):
    """Base class for every error raised by the package."""


class ProblemError(CpaSynthError):
    """Malformed problem file. ``path`` names the offending field."""

    def __init__(self, message, path=""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class DimensionError(ProblemError):
    pass


class OutOfDomainError(CpaSynthError):
    pass


class MeshError(CpaSynthError):
    pass


class MinimumSizeError(MeshError):
    pass


class NotStabilizableError(CpaSynthError):
    pass


class InfeasibleQPError(CpaSynthError):
    pass
