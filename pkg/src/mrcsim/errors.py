"""Exception types shared across the package."""


class MrcError(Exception):
    """Base class for all domain errors raised by mrcsim."""


class NotUnitDiagonal(MrcError):
    def __init__(self, index, value):
        self.index = index
        self.value = value
        super().__init__(f"diagonal entry {index} is {value!r}, expected 1")


class NotPositiveSemidefinite(MrcError):
    def __init__(self, eigenvalue, what="matrix"):
        self.eigenvalue = eigenvalue
        super().__init__(f"{what} has negative eigenvalue {eigenvalue!r}")


class NonpositiveDiagonal(MrcError):
    def __init__(self, index, value):
        self.index = index
        self.value = value
        super().__init__(f"diagonal entry {index} is {value!r}, expected > 0")


class DegreeLimitExceeded(MrcError):
    pass


class ZeroSpeedPair(MrcError):
    pass


class NonIntegrableAlpha(MrcError):
    pass


class WrongDimension(MrcError):
    pass


class LeftDomain(MrcError):
    """A flow or scheme output failed correlation-matrix validation."""


class StepTooLarge(MrcError):
    """Time step exceeds the validity window of the direct scheme."""


class PriceOutOfBounds(MrcError):
    pass


class ParseError(MrcError):
    pass


class WeightSumError(MrcError):
    pass
