"""Exception types shared across the package."""


class CmalabError(Exception):
    """Base class for all package-specific failures."""


class MemoryCapError(CmalabError):
    """Requested resolution exceeds the configured memory cap."""


class StencilViolationError(CmalabError):
    """A finite-difference stencil reaches outside the valued node set."""


class DegenerateHessianError(CmalabError):
    """Complex Hessian is not positive definite where positivity is required."""

    def __init__(self, message: str, min_eigenvalue: float):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class NonConvergenceError(CmalabError):
    """Newton iteration hit the cap before reaching the residual target."""

    def __init__(self, message: str, last_residual: float, iterations: int):
        super().__init__(message)
        self.last_residual = last_residual
        self.iterations = iterations


class DegeneracyError(CmalabError):
    """Plurisubharmonicity was lost and damping could not repair it."""


class SectionEscapeError(CmalabError):
    """A sublevel set reached the domain boundary instead of closing up."""


class ChainBrokenError(CmalabError):
    """Section chain construction failed at a specific level."""

    def __init__(self, message: str, level: int):
        super().__init__(message)
        self.level = level


class CoverageError(CmalabError):
    """Target set is not covered by the supplied family."""


class DomainMismatchError(CmalabError):
    """Two grid functions were expected to share a domain but do not."""


class EnvelopeConvergenceError(CmalabError):
    """Convex envelope relaxation failed to reach its fixed point."""
