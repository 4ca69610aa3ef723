"""Exception hierarchy shared by every module."""


class IvselError(Exception):
    """Base class for all package errors."""


class ModelSpecError(IvselError, ValueError):
    """A model specification is malformed (bad roles, cycles, unknown nodes, ...)."""


class InfeasibleModelError(IvselError, ValueError):
    """Unit-variance standardization would need a non-positive shock variance."""

    def __init__(self, node, shock_variance):
        self.node = node
        self.shock_variance = shock_variance
        super().__init__(
            f"infeasible standardization at node {node!r}: "
            f"shock variance {shock_variance:.6g} is not positive"
        )


class DegenerateEstimandError(IvselError, ArithmeticError):
    """An estimand's denominator vanishes (e.g. a zero first stage)."""


class ScenarioMismatchError(IvselError, ValueError):
    """Two reports that must share a scenario do not."""
