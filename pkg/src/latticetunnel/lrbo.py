"""Fully coupled light-particle + lattice-mode solves.

The whole reduced space (up to ``q_x, q_y, q_z, Q, T``) is diagonalized at
once: interpolate the sampled PES onto the solve grid, assemble the
Hamiltonian for the requested mass, and take the lowest Lanczos pairs.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from latticetunnel.constants import KNOWN_AXES, MASS_D, MASS_H, MASS_MUON
from latticetunnel.eigen import DEFAULT_TOL, Spectrum, lanczos_lowest
from latticetunnel.grid import GridSpec, refine_grid
from latticetunnel.hamiltonian import Wavefunction, assemble
from latticetunnel.pes import PesSample, PotentialField, interpolate

log = logging.getLogger(__name__)


@dataclass
class TunnelingSolution:
    spectrum: Spectrum
    mass: float
    grid: GridSpec
    energy_reference: float = 0.0
    provenance: dict = field(default_factory=dict)

    @property
    def splitting(self) -> float:
        return tunnel_splitting(self)

    @property
    def energies(self) -> np.ndarray:
        """Eigenvalues relative to the PES minimum (meV)."""
        return self.spectrum.eigenvalues

    def state(self, i: int) -> Wavefunction:
        return self.spectrum.wavefunction(i)


@dataclass(frozen=True)
class ReducedDensity:
    """Probability density on the kept axes after integrating the rest out."""

    grid: GridSpec
    values: np.ndarray
    dropped_cell_volume: float

    def total(self) -> float:
        return float(np.sum(self.values) * self.grid.cell_volume)

    def argmax(self) -> dict[str, float]:
        idx = np.unravel_index(int(np.argmax(self.values)), self.values.shape)
        return {ax.name: float(ax.points()[i]) for ax, i in zip(self.grid.axes, idx)}


def _refine_factors(pes: PesSample, refine) -> tuple[int, ...]:
    if refine is None:
        return (1,) * pes.grid.ndim
    if np.isscalar(refine):
        return (int(refine),) * pes.grid.ndim
    if isinstance(refine, dict):
        return tuple(int(refine.get(name, 1)) for name in pes.grid.names)
    return tuple(int(f) for f in refine)


def prepare_potential(pes: PesSample, refine=None) -> PotentialField:
    """Solve-grid potential referenced to the sample minimum."""
    unknown = [n for n in pes.grid.names if n not in KNOWN_AXES]
    if unknown:
        raise ValueError(f"PES axes must be a subset of {KNOWN_AXES}; got unknown {unknown}")
    solve = refine_grid(pes.grid, _refine_factors(pes, refine))
    return interpolate(pes.shifted(-pes.energy_reference), solve)


def solve_potential(
    potential: PotentialField,
    mass: float,
    reference_mass: float = MASS_H,
    k: int = 4,
    stencil_order: int = 2,
    tol: float = DEFAULT_TOL,
    seed: int = 0,
    max_restarts: int = 1000,
) -> Spectrum:
    H = assemble(potential, mass, reference_mass, stencil_order)
    return lanczos_lowest(H, k=min(k, H.n), tol=tol, seed=seed, max_restarts=max_restarts)


def solve_lrbo(
    pes: PesSample,
    refine=None,
    mass: float = MASS_H,
    k: int = 4,
    stencil_order: int = 2,
    tol: float = DEFAULT_TOL,
    seed: int = 0,
    potential: PotentialField | None = None,
) -> TunnelingSolution:
    """Lowest ``k`` coupled states of the reduced nuclear Hamiltonian.

    ``refine`` gives integer subdivision factors of the sample grid (scalar,
    per-axis sequence, or ``{axis: factor}``). A pre-interpolated
    ``potential`` may be passed to skip interpolation in sweeps.
    """
    if not mass > 0:
        raise ValueError(f"mass must be positive, got {mass}")
    factors = _refine_factors(pes, refine)
    if potential is None:
        potential = prepare_potential(pes, factors)
    spec = solve_potential(potential, mass, pes.reference_mass, k, stencil_order, tol, seed)
    provenance = {
        "pes_source": pes.meta.get("source", "unknown"),
        "refine": dict(zip(pes.grid.names, factors)),
        "stencil_order": stencil_order,
        "tol": tol,
        "seed": seed,
        "iterations": spec.iterations,
        "interpolation_notes": list(potential.notes),
    }
    return TunnelingSolution(spec, float(mass), potential.grid, pes.energy_reference, provenance)


def tunnel_splitting(sol: TunnelingSolution | Spectrum) -> float:
    """``E_1 - E_0`` in meV."""
    spec = sol.spectrum if isinstance(sol, TunnelingSolution) else sol
    if len(spec.eigenvalues) < 2:
        raise ValueError("tunnel splitting needs at least two states")
    return float(spec.eigenvalues[1] - spec.eigenvalues[0])


def reduced_density(psi: Wavefunction, keep: Iterable[str]) -> ReducedDensity:
    """Integrate ``|psi|^2`` over every axis not in ``keep``."""
    keep = list(keep)
    if not keep:
        raise ValueError("keep must name at least one axis")
    grid = psi.grid
    kept = grid.subgrid(keep)
    drop_axes = tuple(i for i, n in enumerate(grid.names) if n not in kept.names)
    dropped_dv = float(np.prod([grid.spacings[i] for i in drop_axes])) if drop_axes else 1.0
    rho = np.sum(psi.amplitudes**2, axis=drop_axes) * dropped_dv if drop_axes else psi.amplitudes**2
    total = np.sum(rho) * kept.cell_volume
    return ReducedDensity(kept, rho / total, dropped_dv)


def _map(fn, items, workers):
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def mass_sweep(
    pes: PesSample,
    masses: Sequence[float],
    refine=None,
    k: int = 2,
    stencil_order: int = 2,
    tol: float = DEFAULT_TOL,
    seed: int = 0,
    workers: int = 1,
) -> list[tuple[float, float]]:
    """``(mass, J)`` for each mass, one independent solve per entry."""
    masses = [float(m) for m in masses]
    if any(not m > 0 for m in masses):
        raise ValueError("masses must be positive")
    if any(b < a for a, b in zip(masses, masses[1:])):
        raise ValueError("masses must be sorted ascending")
    potential = prepare_potential(pes, refine)

    def one(m):
        sol = solve_lrbo(pes, refine, m, k, stencil_order, tol, seed, potential=potential)
        return m, sol.splitting

    return _map(one, masses, workers)


def default_sweep_masses(n_between: int = 12) -> list[float]:
    """Muon, H and D plus log-spaced intermediates between muon and D."""
    inner = np.geomspace(MASS_MUON, MASS_D, n_between + 2)[1:-1]
    return sorted({MASS_MUON, MASS_H, MASS_D, *inner.tolist()})


@dataclass
class ConvergenceRow:
    refine: tuple[int, ...]
    splitting: float
    delta: float


@dataclass
class ConvergenceTable:
    rows: list[ConvergenceRow]
    tol: float
    converged: bool

    @property
    def splittings(self) -> np.ndarray:
        return np.array([r.splitting for r in self.rows])


def converge_splitting(
    pes: PesSample,
    mass: float,
    refine_sequence: Sequence,
    k: int = 2,
    stencil_order: int = 2,
    tol: float = DEFAULT_TOL,
    convergence_tol: float = 1e-3,
    seed: int = 0,
) -> ConvergenceTable:
    """J at each refinement level and the change from the previous level.

    ``delta`` of the first row is NaN. ``converged`` is set when the last
    ``|delta|`` is below ``convergence_tol`` (meV).
    """
    if len(refine_sequence) < 2:
        raise ValueError("need at least two refinement levels")
    rows = []
    prev = None
    for refine in refine_sequence:
        factors = _refine_factors(pes, refine)
        J = solve_lrbo(pes, factors, mass, k, stencil_order, tol, seed).splitting
        rows.append(ConvergenceRow(factors, J, float("nan") if prev is None else J - prev))
        prev = J
    converged = abs(rows[-1].delta) < convergence_tol
    return ConvergenceTable(rows, convergence_tol, converged)


def richardson(values: Sequence[float], ratio: float = 2.0, order: int = 2) -> float:
    """Extrapolate the last two levels assuming error ~ h^order and h shrinking by ``ratio``."""
    if len(values) < 2:
        raise ValueError("need two levels")
    f = ratio**order
    return float((f * values[-1] - values[-2]) / (f - 1.0))


def write_sweep_tsv(rows, path) -> Path:
    path = Path(path)
    lines = ["# mass_amu\tJ_meV"] + [f"{float(m)!r}\t{float(J)!r}" for m, J in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def write_convergence_tsv(table: ConvergenceTable, path) -> Path:
    path = Path(path)
    lines = ["# refine\tJ_meV\tdJ_meV"]
    for r in table.rows:
        lines.append(f"{','.join(map(str, r.refine))}\t{float(r.splitting)!r}\t{float(r.delta)!r}")
    path.write_text("\n".join(lines) + "\n")
    return path
