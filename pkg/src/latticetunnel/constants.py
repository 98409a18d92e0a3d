"""Physical constants in the package unit system.

Energies are in meV, masses in amu, lengths in Angstrom, and phonon
coordinates in sqrt(amu)*Angstrom.
"""

import math

# CODATA 2018
_HBAR_J_S = 1.054571817e-34
_AMU_KG = 1.66053906660e-27
_MEV_J = 1.602176634e-22
_ANGSTROM_M = 1e-10

#: hbar^2 in meV * amu * Angstrom^2 (4.18016...)
HBAR2 = _HBAR_J_S**2 / (_AMU_KG * _ANGSTROM_M**2) / _MEV_J
HBAR = math.sqrt(HBAR2)

# Particle masses in amu. Muon: m_mu/m_e * m_e/u (CODATA 2018).
MASS_MUON = 206.7682830 * 5.48579909065e-4
MASS_H = 1.00782503207
MASS_D = 2.01410177812

MASSES = {"muon": MASS_MUON, "H": MASS_H, "D": MASS_D}

#: Light-particle phonon axes; every other axis is a lattice mode.
LIGHT_AXES = ("q_x", "q_y", "q_z")
LATTICE_AXES = ("Q", "T")
KNOWN_AXES = LIGHT_AXES + LATTICE_AXES


def resolve_mass(value):
    """Accept a float mass in amu or one of the names in ``MASSES``."""
    if isinstance(value, str):
        try:
            return MASSES[value]
        except KeyError:
            raise ValueError(f"unknown particle name {value!r}; known: {sorted(MASSES)}") from None
    mass = float(value)
    if not mass > 0:
        raise ValueError(f"mass must be positive, got {value!r}")
    return mass
