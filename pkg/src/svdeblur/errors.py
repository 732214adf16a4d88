"""Exception types raised across the package."""


class DeblurError(Exception):
    """Base class for all errors raised by svdeblur."""


class AngleTooLarge(DeblurError, ValueError):
    pass


class SingularProjection(DeblurError, ValueError):
    pass


class DegenerateHomography(DeblurError, ValueError):
    pass


class MissingSegment(DeblurError, KeyError):
    def __init__(self, label):
        super().__init__(label)
        self.label = label

    def __str__(self):
        return f"segment label {self.label} has no plane patch"


class DimensionMismatch(DeblurError, ValueError):
    pass


class NumericalBreakdown(DeblurError, ArithmeticError):
    pass


class ParseError(DeblurError, ValueError):
    def __init__(self, path, field, reason):
        super().__init__(f"{path}: {field}: {reason}")
        self.path = path
        self.field = field


class InvariantViolation(DeblurError, ValueError):
    pass


class NotARotation(InvariantViolation):
    pass
