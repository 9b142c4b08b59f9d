"""Multigroup thermal radiative transfer in 1D slab geometry.

The solver couples the discrete-ordinates transport equation to low-order
quasidiffusion (variable Eddington factor) moment systems and a material
energy balance, advanced with backward-Euler time integration.  The
previous-step intensity can be kept in full or compressed per group by a
truncated SVD, either of the intensity itself or of the remainder after
removing its P2 angular expansion.
"""

from .constants import PhysicalConstants
from .spectral import GroupStructure

__version__ = "0.1.0"

__all__ = ["PhysicalConstants", "GroupStructure", "__version__"]
