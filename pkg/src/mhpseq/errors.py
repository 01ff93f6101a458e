class ContractViolation(ValueError):
    """An operation was called outside its documented preconditions."""


class NonFiniteError(ContractViolation):
    """A NaN or infinity appeared in a tensor."""
