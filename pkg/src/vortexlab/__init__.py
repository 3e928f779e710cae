"""Monte Carlo toolkit for stochastic point-vortex systems and their long-time limits."""
import warnings

from numba.core.errors import NumbaWarning

# harmless notice about an old TBB; numba falls back to another threading layer
warnings.filterwarnings("ignore", message="The TBB threading layer", category=NumbaWarning)

from .dynamics import (NumericalFailure, SimParams, StateBatch, SystemSpec, Variant,
                       cir_exact_transition, point_mass, product_gaussian, simulate,
                       stationary, step_original, step_rescaled)
from .rng import make_streams

__version__ = "0.1.0"

__all__ = [
    "NumericalFailure", "SimParams", "StateBatch", "SystemSpec", "Variant",
    "cir_exact_transition", "make_streams", "point_mass", "product_gaussian",
    "simulate", "stationary", "step_original", "step_rescaled", "__version__",
]
