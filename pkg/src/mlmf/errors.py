"""Exception and warning classes.

Every error carries an ``exit_code`` so the command line front-end can map
failures to a stable process status without inspecting messages.
"""


class MLMFError(Exception):
    exit_code = 1
    category = "error"


class ConfigError(MLMFError, ValueError):
    exit_code = 2
    category = "config"


class DataError(MLMFError, ValueError):
    exit_code = 3
    category = "ingestion"


class SolverError(MLMFError, ArithmeticError):
    exit_code = 4
    category = "solver"


class EvaluationError(MLMFError, ValueError):
    exit_code = 5
    category = "evaluation"


# configuration
class NonDecreasingLayers(ConfigError):
    pass


class UnknownView(ConfigError, KeyError):
    pass


# ingestion / dataset construction
class UnknownSample(DataError):
    pass


class DuplicateSample(DataError):
    pass


class DegenerateShape(DataError):
    pass


class OrphanedSample(DataError):
    pass


class NonFiniteInput(DataError):
    pass


# solvers
class RankTooLarge(SolverError):
    pass


class ShapeMismatch(SolverError):
    pass


class SingularNormalMatrix(SolverError):
    pass


class NonFiniteGradient(SolverError):
    pass


class IsolatedVertex(SolverError):
    pass


class EigensolveFailure(SolverError):
    pass


class EmptyClusterUnrecoverable(SolverError):
    pass


# evaluation
class SingleGroup(EvaluationError):
    pass


class NoEvents(EvaluationError):
    pass


class LengthMismatch(EvaluationError):
    pass


# non-fatal conditions
class StepUnderflow(RuntimeWarning):
    """Backtracking shrank the step below ``min_step`` without descent."""


class DegenerateEmbedding(RuntimeWarning):
    """All embedded points coincide; the similarity graph is complete."""


class AllMissing(RuntimeWarning):
    """A clinical parameter had no usable values and was scored p = 1."""


class SmallExpectedCounts(RuntimeWarning):
    """A contingency table has expected cell counts below 5."""
