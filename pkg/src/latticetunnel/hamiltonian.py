"""Matrix-free nuclear Hamiltonian on a rectilinear grid.

In mass-normalized coordinates the kinetic operator carries the same
coefficient ``-hbar^2/2`` on every axis. The potential is diagonal.
Boundaries are Dirichlet: the wavefunction vanishes on ghost nodes one
spacing outside each end of every axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from latticetunnel.constants import HBAR2, LIGHT_AXES, MASS_H
from latticetunnel.grid import GridSpec
from latticetunnel.pes import PotentialField

# central second-difference weights, offset 0 first
_STENCILS = {
    2: (-2.0, 1.0),
    4: (-5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0),
}


class HamiltonianError(ValueError):
    pass


@dataclass(frozen=True)
class Wavefunction:
    """Real amplitudes on a grid, normalized so that sum |psi|^2 dV = 1."""

    grid: GridSpec
    amplitudes: np.ndarray

    def __post_init__(self):
        amp = np.asarray(self.amplitudes, dtype=np.float64).reshape(self.grid.shape)
        if not np.all(np.isfinite(amp)):
            raise ValueError("wavefunction amplitudes must be finite")
        object.__setattr__(self, "amplitudes", amp)

    @classmethod
    def normalized(cls, grid: GridSpec, amplitudes, cell_volume: float | None = None) -> Wavefunction:
        amp = np.asarray(amplitudes, dtype=np.float64).reshape(grid.shape)
        dv = grid.cell_volume if cell_volume is None else cell_volume
        norm = np.sqrt(np.sum(amp**2) * dv)
        if norm == 0:
            raise ValueError("cannot normalize a zero wavefunction")
        return cls(grid, amp / norm)

    def norm(self, cell_volume: float | None = None) -> float:
        dv = self.grid.cell_volume if cell_volume is None else cell_volume
        return float(np.sqrt(np.sum(self.amplitudes**2) * dv))

    def density(self) -> np.ndarray:
        return self.amplitudes**2


@dataclass(frozen=True)
class SparseHamiltonian:
    """``H = -(hbar^2/2) sum_i d^2/dx_i^2 + V`` applied without storing a matrix.

    ``mass_scale`` maps stored grid coordinates to the phonon coordinates of
    the particle being solved, per axis; ``spacings`` are the scaled ones.
    """

    grid: GridSpec
    potential: PotentialField
    hbar2: float = HBAR2
    stencil_order: int = 2
    mass_scale: tuple[float, ...] = ()
    mass: float = MASS_H
    reference_mass: float = MASS_H

    def __post_init__(self):
        if self.stencil_order not in _STENCILS:
            raise HamiltonianError(f"unsupported stencil order {self.stencil_order}; use 2 or 4")
        if not self.mass_scale:
            object.__setattr__(self, "mass_scale", (1.0,) * self.grid.ndim)
        if len(self.mass_scale) != self.grid.ndim:
            raise HamiltonianError("mass_scale needs one entry per axis")

    @property
    def n(self) -> int:
        return self.grid.size

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n)

    @property
    def spacings(self) -> tuple[float, ...]:
        return tuple(h * s for h, s in zip(self.grid.spacings, self.mass_scale))

    @property
    def cell_volume(self) -> float:
        """Cell volume in the solved particle's phonon coordinates."""
        return float(np.prod(self.spacings))

    def kinetic_coefficients(self) -> np.ndarray:
        return np.array([0.5 * self.hbar2 / h**2 for h in self.spacings])

    def diagonal(self) -> np.ndarray:
        w0 = _STENCILS[self.stencil_order][0]
        return self.potential.values.reshape(-1) - w0 * float(np.sum(self.kinetic_coefficients()))

    def trace(self) -> float:
        return float(np.sum(self.diagonal()))

    def apply(self, v: np.ndarray) -> np.ndarray:
        return apply(self, v)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return apply(self, v)

    def to_sparse(self) -> sp.csr_matrix:
        """Explicit sparse matrix with the same stencil and boundaries as ``apply``."""
        weights = _STENCILS[self.stencil_order]
        shape = self.grid.shape
        total = sp.diags(self.potential.values.reshape(-1))
        for axis, coef in enumerate(self.kinetic_coefficients()):
            na = shape[axis]
            offsets = [0]
            bands = [np.full(na, -coef * weights[0])]
            for d, w in enumerate(weights[1:], start=1):
                if d >= na:
                    break
                offsets += [d, -d]
                bands += [np.full(na - d, -coef * w)] * 2
            op1 = sp.diags(bands, offsets, shape=(na, na))
            left = sp.identity(int(np.prod(shape[:axis], dtype=np.int64)))
            right = sp.identity(int(np.prod(shape[axis + 1 :], dtype=np.int64)))
            total = total + sp.kron(sp.kron(left, op1), right)
        return sp.csr_matrix(total)

    def to_dense(self) -> np.ndarray:
        """Explicit matrix, for small grids only."""
        return self.to_sparse().toarray()


def mass_scaling(grid: GridSpec, mass: float, reference_mass: float) -> tuple[float, ...]:
    """``sqrt(m / m_ref)`` on light-particle axes, 1 on lattice axes.

    The PES is a fixed function of real-space position, and q = sqrt(m) r,
    so a different particle mass stretches each light axis by this factor.
    """
    s = float(np.sqrt(mass / reference_mass))
    return tuple(s if name in LIGHT_AXES else 1.0 for name in grid.names)


def assemble(
    potential: PotentialField,
    mass: float = MASS_H,
    reference_mass: float = MASS_H,
    stencil_order: int = 2,
    hbar2: float = HBAR2,
) -> SparseHamiltonian:
    """Build the Hamiltonian for a particle of ``mass`` amu on ``potential``.

    ``potential.grid`` is in the phonon coordinates of ``reference_mass``;
    the light axes (``q_x``, ``q_y``, ``q_z``) are rescaled to ``mass``.
    """
    if not mass > 0 or not reference_mass > 0:
        raise HamiltonianError(f"masses must be positive (mass={mass}, reference={reference_mass})")
    if not np.all(np.isfinite(potential.values)):
        raise HamiltonianError("potential must be finite")
    return SparseHamiltonian(
        grid=potential.grid,
        potential=potential,
        hbar2=hbar2,
        stencil_order=stencil_order,
        mass_scale=mass_scaling(potential.grid, mass, reference_mass),
        mass=float(mass),
        reference_mass=float(reference_mass),
    )


def _accumulate_laplacian(out, u, axis, coef, weights):
    """out += -coef * (discrete second derivative of u along axis)."""
    nd = u.ndim
    n = u.shape[axis]

    def sl(a, b):
        idx = [slice(None)] * nd
        idx[axis] = slice(a, b)
        return tuple(idx)

    out -= (coef * weights[0]) * u
    for k, w in enumerate(weights[1:], start=1):
        if k >= n:
            break
        c = coef * w
        # neighbour at +k and -k; ghost values beyond the edges are zero
        out[sl(0, n - k)] -= c * u[sl(k, n)]
        out[sl(k, n)] -= c * u[sl(0, n - k)]


def apply(H: SparseHamiltonian, v: np.ndarray) -> np.ndarray:
    """Return ``H @ v`` for a flat vector (or a stack of vectors as columns)."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] != H.n:
        raise HamiltonianError(f"vector length {v.shape[0]} does not match grid size {H.n}")
    extra = v.shape[1:]
    u = v.reshape(H.grid.shape + extra)
    pot = H.potential.values.reshape(H.grid.shape + (1,) * len(extra))
    out = pot * u
    weights = _STENCILS[H.stencil_order]
    for axis, coef in enumerate(H.kinetic_coefficients()):
        _accumulate_laplacian(out, u, axis, coef, weights)
    return out.reshape(v.shape)
