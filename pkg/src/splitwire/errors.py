"""Exception hierarchy shared by all splitwire modules."""


class SplitwireError(ValueError):
    """Base class for every error raised by the toolkit."""


class CorruptPayload(SplitwireError):
    """A serialized tensor, payload or rANS stream failed validation."""


class Infeasible(SplitwireError):
    """No planner candidate satisfies both the accuracy floor and the memory cap."""

    def __init__(self, message, binding=None, near_miss=None):
        super().__init__(message)
        self.binding = binding or []
        self.near_miss = near_miss


class BudgetUnsatisfiable(SplitwireError):
    """Even the smallest early-exit configuration misses the deadline."""
