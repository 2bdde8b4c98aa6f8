"""Exception hierarchy shared by every module of the package."""


class ScenarioDualityError(Exception):
    """Base class for all package errors."""


class ScenarioError(ScenarioDualityError, ValueError):
    """Structural or invariant violation in scenario data (tree, prices, mu, cone)."""

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = list(violations or [])


class ArbitrageError(ScenarioError):
    """The supermartingale polytope has no strictly positive member."""


class UtilityError(ScenarioDualityError, ValueError):
    """Invalid utility specification or argument outside the domain (y <= 0)."""


class SizeGuardError(ScenarioDualityError):
    """A brute-force routine was asked to run on an instance above its size guard."""


class SolverError(ScenarioDualityError, RuntimeError):
    """Numerical failure: non-convergence, bracket exhaustion, infeasible subproblem."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DegenerateDualError(SolverError):
    """The dual optimizer vanishes on a consumption-charged node where I(t, 0+) is infinite."""


class FinancingError(ScenarioDualityError):
    """A consumption plan cannot be financed: some node of the superhedging recursion is infeasible."""

    def __init__(self, message, node=None, shortfall=None):
        super().__init__(message)
        self.node = node
        self.shortfall = shortfall
