"""Errors raised by the negative feedback library."""


class NegativeFeedbackError(Exception):
    """Base class for every error raised by the avoidance app"""


class InvalidConfig(NegativeFeedbackError, ValueError):
    pass


class InvalidDemonstration(NegativeFeedbackError, ValueError):
    pass


class InvalidTaskSpec(NegativeFeedbackError, ValueError):
    pass


class UnknownBehavior(NegativeFeedbackError, KeyError):
    pass


class SpecMismatch(NegativeFeedbackError):
    """Two grids (or a grid and a mask) do not share one GridSpec"""


class DeadEnd(NegativeFeedbackError):
    """A phase slice has no reachable probability mass from the previous cell"""


class AllMassNegative(NegativeFeedbackError):
    """Negative weighting removed every mixture component"""


class EmptySelection(NegativeFeedbackError):
    """A trajectory selector kept no points"""


class NoiseTooLarge(NegativeFeedbackError):
    """Demonstration noise keeps producing colliding demos"""


class MalformedTable(NegativeFeedbackError):
    """A result table is missing columns or has unusable values"""
