"""Two-level energetic balance between local and symmetric lattice configurations.

Here ``J`` is twice the tunnelling matrix element of a two-well model. For
a symmetric double well, it equals the grid solvers' ``E_1 - E_0``.
``fixed_lattice_energy_diffs`` is the only function here that mixes the two
conventions, and it reports ground-state energies only.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from latticetunnel.constants import MASS_H
from latticetunnel.eigen import DEFAULT_TOL
from latticetunnel.lpa import light_potential_at, solve_light_particle
from latticetunnel.pes import PesSample


class NoThresholdError(ValueError):
    """Raised when the symmetric configuration can never win the balance."""


@dataclass(frozen=True)
class TwoLevelParams:
    delta: float
    J: float
    E_c: float = 0.0

    def __post_init__(self):
        if self.J < 0:
            raise ValueError("J must be non-negative")
        if self.E_c < 0:
            raise ValueError("E_c must be non-negative")


def two_level_ground_energy(delta: float, J: float) -> float:
    """``-1/2 sqrt(delta^2 + J^2) + delta/2``, measured from the lower well."""
    if J < 0:
        raise ValueError("J must be non-negative")
    return -0.5 * math.hypot(delta, J) + 0.5 * delta


def symmetric_energy(J_sym: float, E_c: float) -> float:
    """``-J_sym/2 + E_c`` for the lattice held in the symmetric configuration."""
    if J_sym < 0:
        raise ValueError("J_sym must be non-negative")
    return -0.5 * J_sym + E_c


def critical_splitting(delta: float, E_c: float) -> float:
    """Smallest J for which the symmetric configuration is favoured.

    Assumes the same J in the local and symmetric geometries, and solves
    ``symmetric_energy(J, E_c) == two_level_ground_energy(delta, J)``, giving
    ``J* = 2 E_c (delta - E_c) / (delta - 2 E_c)``.

    Raises
    ------
    NoThresholdError
        If ``E_c >= delta / 2``: the symmetric configuration is never
        favoured by this balance.
    """
    if E_c < 0:
        raise ValueError("E_c must be non-negative")
    if E_c >= 0.5 * delta:
        raise NoThresholdError(
            f"E_c={E_c} >= delta/2={0.5 * delta}: symmetric never favored by this balance"
        )
    return 2.0 * E_c * (delta - E_c) / (delta - 2.0 * E_c)


def populations(delta: float, J: float) -> tuple[float, float]:
    """Ground-state well populations ``(|psi_1|^2, |psi_2|^2)``.

    ``delta = V_2 - V_1``; positive ``delta`` favours well 1.
    """
    r = math.hypot(delta, J)
    if r == 0:
        raise ValueError("populations are indeterminate for delta = J = 0")
    x = 0.5 * delta / r
    return 0.5 + x, 0.5 - x


def fixed_lattice_energy_diffs(
    pes: PesSample,
    points: Sequence[Mapping[str, float]],
    mass: float = MASS_H,
    refine=None,
    stencil_order: int = 2,
    tol: float = DEFAULT_TOL,
    seed: int = 0,
    workers: int = 1,
) -> list[float]:
    """Light-particle ground energies at frozen lattice points, minus the first one.

    ``points`` are ``{axis: value}`` mappings over the lattice axes of the
    PES (e.g. ``{"Q": 0.0, "T": 0.0}``); values may fall between sample
    nodes. ``refine`` applies to the light axes. Points are solved
    independently, on ``workers`` threads when more than one.
    """
    if not points:
        raise ValueError("need at least one lattice point")

    def ground(pt):
        field = light_potential_at(pes, pt, refine)
        lv = solve_light_particle(field, None, mass, 0, pes.reference_mass, stencil_order, tol, seed)
        return float(lv.energies[0])

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            energies = list(pool.map(ground, points))
    else:
        energies = [ground(pt) for pt in points]
    return [e - energies[0] for e in energies]


def write_report(rows: Sequence[tuple[str, float]], path) -> Path:
    """``label<TAB>value_meV`` block."""
    path = Path(path)
    lines = ["# label\tvalue_meV"] + [f"{label}\t{float(v)!r}" for label, v in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def balance_report(delta: float, E_c: float, J_sym: float | None = None, J_local: float | None = None):
    """Rows for the CLI report; entries that cannot be computed are NaN."""
    rows = [("delta", delta), ("E_c", E_c)]
    try:
        rows.append(("J_critical", critical_splitting(delta, E_c)))
    except NoThresholdError:
        rows.append(("J_critical", float("nan")))
    if J_sym is not None:
        J_loc = J_sym if J_local is None else J_local
        e_loc = two_level_ground_energy(delta, J_loc)
        e_sym = symmetric_energy(J_sym, E_c)
        rows += [
            ("J_sym", J_sym),
            ("J_local", J_loc),
            ("E_local", e_loc),
            ("E_sym", e_sym),
            ("symmetric_favored", float(e_sym < e_loc)),
        ]
        p1, p2 = populations(delta, J_loc) if (delta or J_loc) else (float("nan"), float("nan"))
        rows += [("population_1", p1), ("population_2", p2)]
    return rows


__all__ = [
    "NoThresholdError",
    "TwoLevelParams",
    "balance_report",
    "critical_splitting",
    "fixed_lattice_energy_diffs",
    "populations",
    "symmetric_energy",
    "two_level_ground_energy",
    "write_report",
]
