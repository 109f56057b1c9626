class CapacityError(RuntimeError):
    """Requested instance exceeds a configured enumeration/solver cap."""


class SolverError(RuntimeError):
    """A numerical subroutine failed to reach its contract."""
