"""Exception hierarchy. Each family maps onto one CLI exit code."""

from __future__ import annotations


class BHRouteError(Exception):
    exit_code = 5


class TopologyError(BHRouteError):
    """Malformed or inconsistent topology input."""

    exit_code = 2

    def __init__(self, message: str, element: str | None = None):
        self.element = element
        if element is not None:
            message = f"{message} [{element}]"
        super().__init__(message)


class SchemaError(TopologyError):
    pass


class DanglingReferenceError(TopologyError):
    pass


class DuplicateIdError(TopologyError):
    pass


class NonpositiveRateError(TopologyError):
    pass


class CycleError(TopologyError):
    pass


class UnreachableEgressError(TopologyError):
    pass


class InstabilityError(BHRouteError):
    """One or more queues have arrival rate >= service rate."""

    exit_code = 3

    def __init__(self, queues: dict[str, tuple[float, float]] | list[str], message: str | None = None):
        if isinstance(queues, dict):
            self.queues = dict(queues)
            detail = ", ".join(f"{q} (lambda={lam:.6g}, mu={mu:.6g})" for q, (lam, mu) in queues.items())
        else:
            self.queues = {q: (float("nan"), float("nan")) for q in queues}
            detail = ", ".join(queues)
        super().__init__(message or f"unstable queues: {detail}")


class InfeasibleError(BHRouteError):
    """A request that cannot be satisfied by the given topology or splits."""

    exit_code = 4


class NumericalError(BHRouteError):
    """Grid horizon, series truncation or similar numerical limits were hit."""

    exit_code = 5
