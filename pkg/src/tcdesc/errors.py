"""Exception hierarchy shared by all tcdesc modules."""


class TCDescError(Exception):
    """Base class for all errors raised by this package."""


class ZeroRow(TCDescError):
    def __init__(self, index):
        self.index = index
        super().__init__(f"row {index} has (near-)zero norm and cannot be normalized")


class KTooLarge(TCDescError):
    pass


class KNotLessThanD(TCDescError):
    pass


class NonPositiveT(TCDescError):
    pass


class SingularGram(TCDescError):
    pass


class IndexOutOfBatch(TCDescError):
    pass


class LengthMismatch(TCDescError):
    pass


class TieDetected(TCDescError):
    """Two candidate neighbors are equidistant within tolerance; finite
    differences may disagree with the analytic gradient at this point."""


class HingeBoundary(TCDescError):
    """A pair sits exactly on the hinge boundary of the triplet loss."""


class ToleranceExceeded(TCDescError):
    def __init__(self, message, worst_coord=None):
        self.worst_coord = worst_coord
        super().__init__(message)


class Divergence(TCDescError):
    pass


class EmptyClass(TCDescError):
    pass


class ConfigError(TCDescError):
    pass
