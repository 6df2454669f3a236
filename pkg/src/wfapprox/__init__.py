"""Wright-Fisher chains with mutation, their diffusion approximation and explicit error bounds."""
from .model import (
    DomainError,
    LatticeState,
    MutationMatrix,
    adjusted_frequencies,
    b_star,
    covariance,
    drift,
    one_step_moments,
    sup_covariance_hs,
    u_star,
)
from .testfuncs import TestFunction, derivative_norm_sup
from .bounds import BoundReport, constants_r2, constants_r3, en77_bound, total_bound

__version__ = "0.1.0"
