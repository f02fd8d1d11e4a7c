"""
Exceptions raised by chebvio.

Everything derives from ChebVioError. The ones that are argument
problems also derive from ValueError, so ``except ValueError`` keeps
working for callers that do not care about the finer split.
"""


class ChebVioError(Exception):
    """ Base class of every chebvio error """


class DomainError(ChebVioError, ValueError):
    """ A normalized time tau fell outside [-1, 1] """


class ExtrapolationError(DomainError):
    """ Interpolant evaluated outside the span of its samples """


class ParameterError(ChebVioError, ValueError):
    """ Bad order, bad node count, non-equispaced samples, bad shapes """


class ConfigError(ChebVioError, ValueError):
    """ Invalid configuration file or scenario """


class FitError(ChebVioError):
    """ Least-squares trajectory fit could not be carried out """


class CheiralityError(ChebVioError):
    """ Landmark is not in front of the camera """


class TriangulationError(ChebVioError):
    """ Landmark cannot be triangulated from the given views """


class AssemblyError(ChebVioError):
    """ Estimation problem is inconsistent with its time interval """


class DatasetError(ChebVioError):
    """ Missing, malformed or non-monotone recording files """


class SolverFailure(ChebVioError):
    """
    The solver diverged. The report of the failed solve is attached
    so the harness can still record what happened.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
