"""Exception types raised by the simulator."""


class SpaceMismatchError(ValueError):
    """Operands live on different tensor-product spaces."""


class CutoffError(ValueError):
    """A Fock or thermal cutoff is too small for the requested state."""


class TruncationError(RuntimeError):
    """A truncated-space operator did not converge when the guard was enlarged."""


class PropagationError(RuntimeError):
    """Time propagation failed (step underflow, lost positivity, ...)."""


class ConvergenceError(RuntimeError):
    """A result moved by more than the allowed amount when cutoffs were raised."""


class NonadiabaticError(RuntimeError):
    """An adiabatic transfer lost most of its population; the pulses are too fast or too weak."""
