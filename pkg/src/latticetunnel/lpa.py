"""Nested adiabatic (light-particle) approximation.

The light particle is solved in a frozen lattice at every (Q, T) node,
giving adiabatic surfaces ``E_p^v(Q, T)``. The lattice modes are then
solved on one surface, and the product ``psi_p^v * psi_n^w`` is compared
with the fully coupled eigenstate.

Per-node light states are defined only up to sign. Signs are fixed by a
row-major sweep: node 0 has its largest-magnitude amplitude positive, every
other node is aligned (positive overlap) with its predecessor, i.e. the
node obtained by decrementing the last nonzero lattice index.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.interpolate import CubicSpline

from latticetunnel.constants import LIGHT_AXES, MASS_H
from latticetunnel.eigen import DEFAULT_TOL, Spectrum, dense_solve, lanczos_lowest
from latticetunnel.grid import GridSpec, refine_grid
from latticetunnel.hamiltonian import Wavefunction, assemble
from latticetunnel.lrbo import _refine_factors, prepare_potential
from latticetunnel.pes import PesSample, PotentialField, interpolate

log = logging.getLogger(__name__)

#: light grids up to this size are diagonalized densely
DENSE_LIGHT_LIMIT = 1500


@dataclass
class LightLevels:
    """Light-particle levels at one frozen lattice configuration."""

    energies: np.ndarray
    states: np.ndarray  # (nlevels, *light_shape), sum psi^2 dV_light = 1
    grid: GridSpec


def _split_axes(grid: GridSpec):
    light = [n for n in grid.names if n in LIGHT_AXES]
    lattice = [n for n in grid.names if n not in LIGHT_AXES]
    return light, lattice


def _solve_levels(potential: PotentialField, mass, reference_mass, nlevels, stencil_order, tol, seed, solver):
    H = assemble(potential, mass, reference_mass, stencil_order)
    if nlevels > H.n:
        raise ValueError(f"asked for {nlevels} levels on a grid of {H.n} points")
    use_dense = solver == "dense" or (solver == "auto" and H.n <= DENSE_LIGHT_LIMIT)
    if use_dense:
        spec = dense_solve(H, k=nlevels)
    else:
        spec = lanczos_lowest(H, k=nlevels, tol=tol, seed=seed)
    dv = np.sqrt(potential.grid.cell_volume)
    states = (spec.vectors.T / dv).reshape((nlevels,) + potential.grid.shape)
    return LightLevels(spec.eigenvalues.copy(), states, potential.grid)


def light_potential(potential: PotentialField, at: Mapping[str, int]) -> PotentialField:
    """Slice a full-grid potential at lattice node indices ``at``."""
    light, lattice = _split_axes(potential.grid)
    if set(at) != set(lattice):
        raise ValueError(f"need indices for lattice axes {lattice}, got {sorted(at)}")
    idx = tuple(int(at[n]) if n in lattice else slice(None) for n in potential.grid.names)
    return PotentialField(potential.grid.subgrid(light), potential.values[idx])


def solve_light_particle(
    potential: PotentialField,
    at: Mapping[str, int] | None = None,
    mass: float = MASS_H,
    v_max: int = 2,
    reference_mass: float = MASS_H,
    stencil_order: int = 2,
    tol: float = DEFAULT_TOL,
    seed: int = 0,
    solver: str = "auto",
) -> LightLevels:
    """Light-particle levels ``0..v_max`` with the lattice frozen at node ``at``.

    ``potential`` may be a full-grid field (then ``at`` selects the lattice
    node by index) or already restricted to the light axes (``at=None``).
    """
    if v_max < 0:
        raise ValueError("v_max must be >= 0")
    if at is not None:
        potential = light_potential(potential, at)
    light, lattice = _split_axes(potential.grid)
    if lattice:
        raise ValueError(f"light-particle solve needs lattice axes {lattice} frozen")
    return _solve_levels(potential, mass, reference_mass, v_max + 1, stencil_order, tol, seed, solver)


def light_potential_at(pes: PesSample, point: Mapping[str, float], refine=None) -> PotentialField:
    """Light-axis potential at an arbitrary lattice point, referenced to the PES minimum.

    The lattice coordinates are interpolated with not-a-knot cubic splines;
    the light axes are refined by ``refine`` (factors for the light axes in
    grid order, or a mapping).
    """
    light, lattice = _split_axes(pes.grid)
    if set(point) != set(lattice):
        raise ValueError(f"need coordinates for lattice axes {lattice}, got {sorted(point)}")
    y = np.asarray(pes.values) - pes.energy_reference
    # interpolate lattice axes one at a time, highest axis index first so indices stay valid
    for name in sorted(lattice, key=pes.grid.axis_index, reverse=True):
        i = pes.grid.axis_index(name)
        ax = pes.grid.axis(name)
        x = float(point[name])
        slack = 1e-12 * max(ax.length, abs(ax.min), abs(ax.max))
        if not ax.min - slack <= x <= ax.max + slack:
            raise ValueError(f"{name}={x} outside the sampled range [{ax.min}, {ax.max}]")
        x = min(max(x, ax.min), ax.max)
        if ax.count >= 3:
            y = CubicSpline(ax.points(), y, axis=i, bc_type="not-a-knot")(x)
        else:
            pts = ax.points()
            t = (x - pts[0]) / (pts[1] - pts[0])
            y = np.take(y, 0, axis=i) * (1 - t) + np.take(y, 1, axis=i) * t
    light_grid = pes.grid.subgrid(light)
    sample = PesSample(light_grid, y, {})
    if isinstance(refine, Mapping):
        factors = tuple(int(refine.get(n, 1)) for n in light)
    elif refine is None:
        factors = (1,) * len(light)
    elif np.isscalar(refine):
        factors = (int(refine),) * len(light)
    else:
        factors = tuple(int(f) for f in refine)
    return interpolate(sample, refine_grid(light_grid, factors))


def fix_signs(states: np.ndarray, lattice_shape: tuple[int, ...]) -> np.ndarray:
    """Apply the row-major continuity sign convention to per-node states.

    ``states`` has shape ``lattice_shape + light_shape`` (one level). A new
    array is returned; the input is not modified.
    """
    out = np.array(states, dtype=np.float64, copy=True)
    nodes = int(np.prod(lattice_shape))
    flat = out.reshape(nodes, -1)
    first = flat[0]
    if first[np.argmax(np.abs(first))] < 0:
        flat[0] = -first
    for idx in range(1, nodes):
        multi = list(np.unravel_index(idx, lattice_shape))
        for ax in range(len(multi) - 1, -1, -1):
            if multi[ax] > 0:
                multi[ax] -= 1
                break
        ref = flat[int(np.ravel_multi_index(tuple(multi), lattice_shape))]
        if np.dot(ref, flat[idx]) < 0:
            flat[idx] = -flat[idx]
    return out


@dataclass
class AdiabaticSurface:
    """``E_p^v(Q, T)`` for ``v = 0..v_max`` and, optionally, the light states.

    ``levels`` has shape ``lattice_shape + (v_max + 1,)``; ``states`` has
    shape ``(v_max + 1,) + lattice_shape + light_shape`` with signs fixed.
    """

    lattice_grid: GridSpec
    light_grid: GridSpec
    full_grid: GridSpec
    levels: np.ndarray
    states: np.ndarray | None
    mass: float
    discontinuities: list = field(default_factory=list)

    @property
    def v_max(self) -> int:
        return self.levels.shape[-1] - 1

    def level(self, v: int) -> np.ndarray:
        if not 0 <= v <= self.v_max:
            raise ValueError(f"surface level {v} not available (v_max={self.v_max})")
        return self.levels[..., v]

    def write_tsv(self, path) -> Path:
        path = Path(path)
        names = self.lattice_grid.names
        header = "# " + "\t".join(names) + "\t" + "\t".join(f"E_p^{v}" for v in range(self.v_max + 1))
        lines = [header]
        mesh = [m.reshape(-1) for m in self.lattice_grid.mesh()]
        flat = self.levels.reshape(-1, self.v_max + 1)
        for i in range(flat.shape[0]):
            coords = "\t".join(repr(float(m[i])) for m in mesh)
            lines.append(coords + "\t" + "\t".join(repr(float(e)) for e in flat[i]))
        path.write_text("\n".join(lines) + "\n")
        return path


def _find_jumps(levels, threshold):
    flags = []
    if threshold is None:
        return flags
    for v in range(levels.shape[-1]):
        E = levels[..., v]
        for ax in range(E.ndim):
            jumps = np.abs(np.diff(E, axis=ax))
            for idx in zip(*np.nonzero(jumps > threshold)):
                flags.append({"level": v, "axis": ax, "node": tuple(int(i) for i in idx), "jump": float(jumps[idx])})
    return flags


def build_adiabatic_surfaces(
    pes: PesSample,
    refine=None,
    mass: float = MASS_H,
    v_max: int = 2,
    keep_states: bool = True,
    stencil_order: int = 2,
    tol: float = DEFAULT_TOL,
    seed: int = 0,
    solver: str = "auto",
    jump_threshold: float | None = None,
    workers: int = 1,
    potential: PotentialField | None = None,
) -> AdiabaticSurface:
    """Solve the light particle at every lattice node of the solve grid.

    Levels are energy ordered at each node (adiabatic labelling). Jumps
    between neighbouring nodes larger than ``jump_threshold`` meV are
    recorded in ``discontinuities`` but are not an error.
    """
    if potential is None:
        potential = prepare_potential(pes, _refine_factors(pes, refine))
    grid = potential.grid
    light, lattice = _split_axes(grid)
    if not light or not lattice:
        raise ValueError(f"PES needs both light and lattice axes, got {grid.names}")
    lattice_grid = grid.subgrid(lattice)
    light_grid = grid.subgrid(light)
    lat_pos = [grid.axis_index(n) for n in lattice]
    light_pos = [grid.axis_index(n) for n in light]
    # lattice axes first, light axes last
    V = np.transpose(potential.values, lat_pos + light_pos)
    nodes = lattice_grid.size
    Vflat = V.reshape((nodes,) + light_grid.shape)
    nlev = v_max + 1

    def one(i):
        field_i = PotentialField(light_grid, Vflat[i])
        return _solve_levels(field_i, mass, pes.reference_mass, nlev, stencil_order, tol, seed, solver)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(nodes)))
    else:
        results = [one(i) for i in range(nodes)]

    levels = np.array([r.energies for r in results]).reshape(lattice_grid.shape + (nlev,))
    states = None
    if keep_states:
        raw = np.array([r.states for r in results])  # (nodes, nlev, *light)
        raw = np.moveaxis(raw, 1, 0).reshape((nlev,) + lattice_grid.shape + light_grid.shape)
        states = np.array([fix_signs(raw[v], lattice_grid.shape) for v in range(nlev)])
    flags = _find_jumps(levels, jump_threshold)
    if flags:
        log.info("adiabatic surfaces: %d nearest-node jumps above %s meV", len(flags), jump_threshold)
    return AdiabaticSurface(lattice_grid, light_grid, grid, levels, states, float(mass), flags)


def solve_lattice(
    surface: AdiabaticSurface,
    v: int = 0,
    w_max: int = 4,
    stencil_order: int = 2,
    tol: float = DEFAULT_TOL,
    seed: int = 0,
) -> Spectrum:
    """Lattice-mode states on the adiabatic surface ``E_p^v``."""
    field_v = PotentialField(surface.lattice_grid, surface.level(v))
    H = assemble(field_v, 1.0, 1.0, stencil_order)
    k = min(w_max + 1, H.n)
    return lanczos_lowest(H, k=k, tol=tol, seed=seed)


def product_state(surface: AdiabaticSurface, light_v: int, lattice_state: Wavefunction) -> Wavefunction:
    """``psi_p^v(q; Q, T) * psi_n(Q, T)`` on the full grid."""
    if surface.states is None:
        raise ValueError("surface was built without light-particle states")
    if lattice_state.grid != surface.lattice_grid:
        raise ValueError("lattice state grid does not match the surface lattice grid")
    psi_p = surface.states[light_v]
    amp = psi_p * lattice_state.amplitudes.reshape(lattice_state.amplitudes.shape + (1,) * surface.light_grid.ndim)
    full = surface.full_grid
    order = list(surface.lattice_grid.names) + list(surface.light_grid.names)
    perm = [order.index(n) for n in full.names]
    return Wavefunction(full, np.transpose(amp, perm))


def separability_error(psi_full: Wavefunction, psi_p, psi_n: Wavefunction | None = None) -> float:
    """``eps = min_s || psi_full - s * psi_p psi_n ||_2`` over a global sign ``s``.

    ``psi_p`` is either an already assembled product :class:`Wavefunction`
    (leave ``psi_n`` unset) or an :class:`AdiabaticSurface` together with a
    light level given as ``(surface, v)``. The norm uses the grid cell
    volume, so for normalized inputs ``0 <= eps <= sqrt(2)``.
    """
    if psi_n is None:
        product = psi_p
    else:
        surface, v = psi_p
        product = product_state(surface, v, psi_n)
    if product.grid != psi_full.grid:
        raise ValueError("grid mismatch between the full and product states")
    a = psi_full.amplitudes
    b = product.amplitudes
    dv = psi_full.grid.cell_volume
    overlap = float(np.sum(a * b))
    s = 1.0 if overlap >= 0 else -1.0
    return float(np.sqrt(np.sum((a - s * b) ** 2) * dv))


@dataclass
class LpaSolution:
    """Adiabatic surfaces with the lattice spectrum on each of them.

    The LPA spectrum is the ladder ``E_n^w(v)`` over all surfaces ``v`` and
    lattice states ``w``. Its ground state is always ``(0, 0)``; the first
    excited state is whichever pair comes next, usually ``(0, 1)`` for a
    self-trapped particle and ``(1, 0)`` when the frozen-lattice light
    doublet is the softest excitation.
    """

    surface: AdiabaticSurface
    lattice: dict[int, Spectrum]

    @property
    def splitting(self) -> float:
        return lpa_tunnel_splitting(self)

    def ladder(self) -> list[tuple[float, int, int]]:
        """``(E, v, w)`` for every computed product state, ascending in energy."""
        rows = [(float(e), v, w) for v, spec in self.lattice.items() for w, e in enumerate(spec.eigenvalues)]
        return sorted(rows)

    def pair(self, i: int) -> tuple[int, int]:
        """``(v, w)`` of the ``i``-th LPA state."""
        _, v, w = self.ladder()[i]
        return v, w

    def lattice_state(self, v: int, w: int) -> Wavefunction:
        return self.lattice[v].wavefunction(w)

    def product(self, v: int, w: int) -> Wavefunction:
        return product_state(self.surface, v, self.lattice_state(v, w))

    def epsilon(self, psi_full: Wavefunction, v: int = 0, w: int = 0) -> float:
        return separability_error(psi_full, self.product(v, w))

    def energies(self, v: int = 0) -> np.ndarray:
        return self.lattice[v].eigenvalues


def solve_lpa(
    pes: PesSample,
    refine=None,
    mass: float = MASS_H,
    v_max: int = 2,
    w_max: int = 4,
    stencil_order: int = 2,
    tol: float = DEFAULT_TOL,
    seed: int = 0,
    solver: str = "auto",
    workers: int = 1,
    potential: PotentialField | None = None,
) -> LpaSolution:
    surface = build_adiabatic_surfaces(
        pes, refine, mass, v_max, True, stencil_order, tol, seed, solver, workers=workers, potential=potential
    )
    lattice = {v: solve_lattice(surface, v, w_max, stencil_order, tol, seed) for v in range(v_max + 1)}
    return LpaSolution(surface, lattice)


def lpa_tunnel_splitting(sol: LpaSolution, surface: int | None = None) -> float:
    """LPA tunnel splitting in meV.

    By default the gap between the two lowest states of the LPA ladder.
    With ``surface=v`` the doublet ``E_n^1 - E_n^0`` on that surface only.
    """
    if surface is not None:
        spec = sol.lattice.get(surface)
        if spec is None or len(spec.eigenvalues) < 2:
            raise ValueError(f"need at least two lattice states on the v={surface} surface")
        return float(spec.eigenvalues[1] - spec.eigenvalues[0])
    ladder = sol.ladder()
    if len(ladder) < 2:
        raise ValueError("need at least two LPA states")
    return ladder[1][0] - ladder[0][0]
