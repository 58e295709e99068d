"""Exception types shared across the package."""

from __future__ import annotations


class SwitchlabError(Exception):
    """Base class for all package-specific errors."""


class SchemaError(SwitchlabError):
    """A dataset, config, or file failed structural validation."""


class AllWeightsZero(SwitchlabError):
    """Every kernel weight vanished: the bandwidth leaves the target point
    with no support on the evaluation grid."""


class IsolatedRegion(SchemaError):
    """An adjacency matrix contains a region with no neighbors."""


class TiMismatch(SchemaError):
    """The treatment-interval length does not divide the number of decision
    points in a day."""


class EmptyArm(SwitchlabError):
    """One action arm has no observations, so arm-specific surfaces cannot
    be fit."""

    def __init__(self, arm: int):
        self.arm = arm
        super().__init__(f"no observations with action == {arm}")


class DegenerateDesign(SwitchlabError):
    """The regressor Gram matrix at some decision point is singular and no
    ridge stabilization was requested."""

    def __init__(self, tau: int, region: int | None = None):
        self.tau = tau
        self.region = region
        where = f"decision point {tau}"
        if region is not None:
            where += f", region {region}"
        super().__init__(f"singular regressor Gram matrix at {where}")


class BootstrapDegenerate(SwitchlabError):
    """All bootstrap draws collapsed to a single value; no quantile-based
    decision is possible."""
