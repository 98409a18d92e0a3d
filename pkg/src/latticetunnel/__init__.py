"""Grid-based tunnel splittings of light interstitials coupled to lattice modes."""

__version__ = "0.1.0"

from latticetunnel.constants import HBAR2, MASS_D, MASS_H, MASS_MUON
from latticetunnel.eigen import ConvergenceError, Spectrum, dense_solve, lanczos_lowest
from latticetunnel.energetics import critical_splitting, populations, two_level_ground_energy
from latticetunnel.grid import AxisSpec, GridSpec, build_grid, refine_grid
from latticetunnel.hamiltonian import SparseHamiltonian, Wavefunction, assemble
from latticetunnel.lpa import build_adiabatic_surfaces, separability_error, solve_lpa
from latticetunnel.lrbo import mass_sweep, solve_lrbo, tunnel_splitting
from latticetunnel.pes import ModelParams, PesSample, interpolate, load_pes, model_pes, save_pes

__all__ = [
    "HBAR2",
    "MASS_D",
    "MASS_H",
    "MASS_MUON",
    "AxisSpec",
    "ConvergenceError",
    "GridSpec",
    "ModelParams",
    "PesSample",
    "SparseHamiltonian",
    "Spectrum",
    "Wavefunction",
    "assemble",
    "build_adiabatic_surfaces",
    "build_grid",
    "critical_splitting",
    "dense_solve",
    "interpolate",
    "lanczos_lowest",
    "load_pes",
    "mass_sweep",
    "model_pes",
    "populations",
    "refine_grid",
    "save_pes",
    "separability_error",
    "solve_lpa",
    "solve_lrbo",
    "tunnel_splitting",
    "two_level_ground_energy",
    "__version__",
]
