"""Exception types shared across the pipeline."""


class ContractError(Exception):
    """A caller broke an operation's precondition (bad arity, unknown id, ...)."""


class DomainError(ValueError):
    """A value is outside the domain an operation supports."""


class ImmediateRangeError(ValueError):
    """An immediate does not fit the bit-width of its instruction field."""


class FuelExhausted(Exception):
    """A bounded iteration ran out of fuel; the caller must take its fallback."""

    def __init__(self, steps):
        super().__init__(f"fuel exhausted after {steps} steps")
        self.steps = steps
