class NonConvergence(RuntimeError):
    """Newton iteration failed to meet its tolerances."""

    def __init__(self, message, *, step_index=None, residual=None, iterations=None):
        super().__init__(message)
        self.step_index = step_index
        self.residual = residual
        self.iterations = iterations

    def at_step(self, n):
        """Copy of this error tagged with the failing time-step index."""
        return NonConvergence(f"step {n}: {self}", step_index=n,
                              residual=self.residual, iterations=self.iterations)


class ZeroInitialEnergy(ValueError):
    """Relative energy error requested for a state with zero energy."""


class NoPeriodicity(ValueError):
    """Signal has no detectable fundamental period."""
