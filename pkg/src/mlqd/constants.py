"""Physical constants for the cm / ns / keV unit system.

Energies are measured in Jerks (1 Jk = 1e9 J), lengths in cm, times in
ns and temperatures / photon energies in keV.
"""

from dataclasses import dataclass

LIGHT_SPEED = 29.9792458  # cm / ns
RADIATION_CONSTANT = 0.01372  # Jk / (cm^3 keV^4)


@dataclass(frozen=True)
class PhysicalConstants:
    """Speed of light and radiation constant, fixed for a whole run.

    The defaults are the standard values for the cm/ns/keV/Jk system.
    Tests may pass c = a_rad = 1 to exercise solvers in reduced units.
    """

    c: float = LIGHT_SPEED
    a_rad: float = RADIATION_CONSTANT

    def __post_init__(self):
        if self.c <= 0.0 or self.a_rad <= 0.0:
            raise ValueError("physical constants must be positive")
