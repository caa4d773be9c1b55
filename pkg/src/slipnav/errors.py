"""Exception hierarchy shared across the package."""


class SlipnavError(Exception):
    """Base class for all package errors."""


# dynamics
class DynamicsError(SlipnavError):
    pass


class NoTouchdown(DynamicsError):
    pass


class LegCollapse(DynamicsError):
    pass


class GroundPenetration(DynamicsError):
    pass


class InterstitialMissed(DynamicsError):
    pass


# controller
class ExhaustedSampling(SlipnavError):
    pass


class Diverged(SlipnavError):
    pass


# gp
class SingularKernel(SlipnavError):
    pass


# abstraction
class NonTiling(SlipnavError):
    pass


# automata
class ParseError(SlipnavError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", column {column})" if column is not None else ")")
        super().__init__(message + where)


class NondeterministicTransition(ParseError):
    pass


class UnknownStateReference(ParseError):
    pass


class AlphabetMismatch(SlipnavError):
    pass


# synthesis
class NonConvergence(SlipnavError):
    pass


class InitialStateViolating(SlipnavError):
    pass


class SatisfactionUnreachable(SlipnavError):
    pass


class NoEligibleAction(SlipnavError):
    pass


# harness
class ConfigError(SlipnavError):
    pass


class OutputError(SlipnavError):
    """An output file or directory could not be written."""
