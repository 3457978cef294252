"""Exception types raised across splatprint."""


class SplatprintError(Exception):
    """Base class for all library errors."""


class NonPositiveDepth(SplatprintError):
    pass


class InvalidConfig(SplatprintError):
    pass


class ConfigError(SplatprintError):
    """Run-level configuration problem (missing files, bad values)."""


class IndexOutOfRange(SplatprintError, IndexError):
    pass


class DegeneratePointmap(SplatprintError):
    pass


class DegenerateCorrespondences(SplatprintError):
    pass


class DisconnectedGraph(SplatprintError):
    pass


class NonFiniteObjective(SplatprintError):
    pass


class EmptyCloud(SplatprintError):
    pass


class SingularCovariance(SplatprintError):
    pass


class DimensionMismatch(SplatprintError, ValueError):
    pass


class NonFiniteLoss(SplatprintError):
    pass


class NoViews(SplatprintError):
    pass


class AllPruned(SplatprintError):
    pass


class EmptySet(SplatprintError):
    pass


class NoSharedMinutiae(SplatprintError):
    pass


class EmptyOverlap(SplatprintError):
    pass


class InvalidCount(SplatprintError, ValueError):
    pass


class MalformedFile(SplatprintError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class StageError(SplatprintError):
    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
