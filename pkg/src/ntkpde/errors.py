"""Exception hierarchy shared by all modules."""


class NtkPdeError(Exception):
    """Base class for every error raised by the package."""


class ConfigurationError(NtkPdeError, ValueError):
    """A domain, operator, network or study configuration is invalid."""


class ContractError(NtkPdeError, ValueError):
    """A caller violated an operation's precondition."""


class IntegrationDivergedError(NtkPdeError, FloatingPointError):
    """Training produced non-finite parameters."""

    def __init__(self, step, t):
        super().__init__(f"non-finite parameters at step {step} (t={t:.6g})")
        self.step = step
        self.t = t


class StepSizeError(NtkPdeError, FloatingPointError):
    """Explicit time stepping became unstable."""


class AssemblyError(NtkPdeError, ValueError):
    """Kernel or block-operator assembly produced an inconsistent matrix."""


class PSDViolationError(AssemblyError):
    """A matrix that must be positive semi-definite has a negative eigenvalue."""
