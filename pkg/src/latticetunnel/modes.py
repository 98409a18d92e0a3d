"""Lattice mode vectors from relaxed structures and projections onto them.

Structure files are extended XYZ::

    <number of atoms>
    masses=Nb:92.90637,O:15.999 com=false light=H
    Nb  0.000  0.000  0.000
    ...

The comment line holds ``key=value`` tokens. ``masses`` overrides the
built-in table. ``com=true`` marks positions already referenced to the
lattice center of mass. ``light`` names the light-particle label, whose
atom (at most one) is kept apart from the lattice.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

# standard atomic weights (IUPAC); isotopes by mass number
ATOMIC_MASSES = {
    "H": 1.00782503207,
    "D": 2.01410177812,
    "Mu": 0.1134289259,
    "C": 12.011,
    "N": 14.007,
    "O": 15.999,
    "Ti": 47.867,
    "Zr": 91.224,
    "Nb": 92.90637,
    "Ta": 180.94788,
    "V": 50.9415,
    "Fe": 55.845,
}


class ModeError(ValueError):
    pass


class DegenerateBasisError(ModeError):
    pass


@dataclass
class Structure:
    """Lattice atoms (light particle excluded) with an optional light-particle site."""

    positions: np.ndarray
    masses: np.ndarray
    labels: tuple[str, ...]
    light_position: np.ndarray | None = None
    light_label: str | None = None
    com_referenced: bool = False

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.masses = np.asarray(self.masses, dtype=np.float64).reshape(-1)
        self.labels = tuple(self.labels)
        n = len(self.positions)
        if len(self.masses) != n or len(self.labels) != n:
            raise ModeError("positions, masses and labels must have the same length")
        if np.any(self.masses <= 0):
            raise ModeError("masses must be positive")
        if self.light_position is not None:
            self.light_position = np.asarray(self.light_position, dtype=np.float64).reshape(3)

    @property
    def natoms(self) -> int:
        return len(self.positions)

    def center_of_mass(self) -> np.ndarray:
        return self.masses @ self.positions / self.masses.sum()

    def centered(self) -> Structure:
        """Copy with lattice positions (and the light site) relative to the lattice center of mass."""
        com = self.center_of_mass()
        light = None if self.light_position is None else self.light_position - com
        return Structure(self.positions - com, self.masses, self.labels, light, self.light_label, True)

    def translated(self, shift) -> Structure:
        shift = np.asarray(shift, dtype=np.float64)
        light = None if self.light_position is None else self.light_position + shift
        return Structure(self.positions + shift, self.masses, self.labels, light, self.light_label, False)

    def with_positions(self, positions) -> Structure:
        return Structure(positions, self.masses, self.labels, self.light_position, self.light_label, False)

    def mass_weighted(self) -> np.ndarray:
        """``M^(1/2) R`` flattened to 3N components."""
        return (np.sqrt(self.masses)[:, None] * self.positions).reshape(-1)


def _check_compatible(*structures: Structure):
    ref = structures[0]
    for s in structures[1:]:
        if s.natoms != ref.natoms:
            raise ModeError(f"atom count mismatch: {ref.natoms} vs {s.natoms}")
        if s.labels != ref.labels:
            raise ModeError("atom labels differ between structures")
        if not np.allclose(s.masses, ref.masses, rtol=1e-12, atol=0):
            raise ModeError("atom masses differ between structures")


@dataclass
class ModeBasis:
    """Mass-weighted Q and T mode vectors (sqrt(amu) A, 3N components)."""

    Q_vec: np.ndarray
    T_vec: np.ndarray
    masses: np.ndarray
    labels: tuple[str, ...]
    degenerate: dict = field(default_factory=dict)

    @property
    def Q_lr(self) -> float:
        return float(np.linalg.norm(self.Q_vec))

    @property
    def T_st(self) -> float:
        return float(np.linalg.norm(self.T_vec))

    @property
    def Q_hat(self) -> np.ndarray:
        if self.degenerate.get("Q"):
            raise DegenerateBasisError("Q mode has zero length")
        return self.Q_vec / self.Q_lr

    @property
    def T_hat(self) -> np.ndarray:
        if self.degenerate.get("T"):
            raise DegenerateBasisError("T mode has zero length")
        return self.T_vec / self.T_st

    def T_hat_orthogonal(self) -> np.ndarray:
        """T-hat with its Q-hat component removed, renormalized."""
        q = self.Q_hat
        t = self.T_hat - (self.T_hat @ q) * q
        norm = np.linalg.norm(t)
        if norm < 1e-12:
            raise DegenerateBasisError("T mode is parallel to Q mode")
        return t / norm


def _referenced(s: Structure) -> Structure:
    return s if s.com_referenced else s.centered()


def build_mode_basis(R_l: Structure, R_r: Structure, R_ts: Structure, strict: bool = True) -> ModeBasis:
    """``Q = M^(1/2)(R_r - R_l)`` and ``T = M^(1/2)(R_ts - R_l/2 - R_r/2)``.

    Structures not flagged ``com_referenced`` are first referenced to their
    own lattice center of mass; flagged ones are used as given. A zero-length mode raises :class:`DegenerateBasisError` when ``strict``;
    otherwise it is flagged in ``degenerate``.
    """
    _check_compatible(R_l, R_r, R_ts)
    l, r, ts = (_referenced(s) for s in (R_l, R_r, R_ts))
    sq = np.sqrt(l.masses)[:, None]
    Q = (sq * (r.positions - l.positions)).reshape(-1)
    T = (sq * (ts.positions - 0.5 * l.positions - 0.5 * r.positions)).reshape(-1)
    scale = max(float(np.max(np.abs(sq * l.positions))), 1.0)
    flags = {
        "Q": bool(np.linalg.norm(Q) <= 1e-12 * scale),
        "T": bool(np.linalg.norm(T) <= 1e-12 * scale),
    }
    if strict:
        if flags["Q"]:
            raise DegenerateBasisError("R_r equals R_l: Q mode has zero length")
        if flags["T"]:
            raise DegenerateBasisError("R_ts is the midpoint of R_l and R_r: T mode has zero length")
    return ModeBasis(Q, T, l.masses.copy(), l.labels, flags)


def displacement(R_final: Structure, R_initial: Structure) -> np.ndarray:
    """Center-of-mass referenced ``R_final - R_initial`` as an (N, 3) array in A."""
    _check_compatible(R_final, R_initial)
    return _referenced(R_final).positions - _referenced(R_initial).positions


@dataclass(frozen=True)
class Projection:
    c_Q: float
    c_T: float

    @property
    def c_Q2(self) -> float:
        return self.c_Q**2

    @property
    def c_T2(self) -> float:
        return self.c_T**2

    @property
    def c_R2(self) -> float:
        return 1.0 - self.c_Q**2 - self.c_T**2

    def as_tuple(self) -> tuple[float, float, float]:
        return self.c_Q2, self.c_T2, self.c_R2


def project_displacement(delta_R, basis: ModeBasis) -> Projection:
    """Project a lattice displacement (A, shape (N, 3)) onto Q-hat and T-hat.

    The displacement is mass weighted, ``Q_ad = M^(1/2) dR``, and normalized.
    ``T-hat`` is orthonormalized against ``Q-hat`` first, so
    ``c_Q^2 + c_T^2 + c_R^2 = 1`` holds for any input.
    """
    dR = np.asarray(delta_R, dtype=np.float64).reshape(-1, 3)
    if len(dR) != len(basis.masses):
        raise ModeError(f"displacement has {len(dR)} atoms, basis has {len(basis.masses)}")
    q_ad = (np.sqrt(basis.masses)[:, None] * dR).reshape(-1)
    norm = np.linalg.norm(q_ad)
    if norm == 0:
        raise ModeError("zero displacement cannot be projected")
    u = q_ad / norm
    return Projection(float(u @ basis.Q_hat), float(u @ basis.T_hat_orthogonal()))


# ---------------------------------------------------------------------------
# extended XYZ


def _parse_comment(line: str) -> dict[str, str]:
    out = {}
    for tok in line.split():
        if "=" in tok:
            k, v = tok.split("=", 1)
            out[k] = v
    return out


def read_xyz(path, masses: dict[str, float] | None = None) -> Structure:
    lines = Path(path).read_text().splitlines()
    if len(lines) < 2:
        raise ModeError(f"{path}: too short for an XYZ file")
    try:
        n = int(lines[0].split()[0])
    except (ValueError, IndexError):
        raise ModeError(f"{path}: first line must be the atom count") from None
    opts = _parse_comment(lines[1])
    table = dict(ATOMIC_MASSES)
    if "masses" in opts:
        for item in opts["masses"].split(","):
            label, _, m = item.partition(":")
            table[label] = float(m)
    if masses:
        table.update(masses)
    light_label = opts.get("light")
    com = opts.get("com", "false").lower() in ("1", "true", "yes")
    rows = [ln.split() for ln in lines[2 : 2 + n]]
    if len(rows) != n or any(len(r) < 4 for r in rows):
        raise ModeError(f"{path}: expected {n} atom lines 'label x y z'")
    labels, pos, light = [], [], None
    for r in rows:
        xyz = [float(x) for x in r[1:4]]
        if light_label is not None and r[0] == light_label:
            if light is not None:
                raise ModeError(f"{path}: more than one light particle {light_label!r}")
            light = np.array(xyz)
            continue
        labels.append(r[0])
        pos.append(xyz)
    try:
        m = [table[lb] for lb in labels]
    except KeyError as exc:
        raise ModeError(f"{path}: no mass for label {exc.args[0]!r}; add it to masses=") from None
    return Structure(np.array(pos), np.array(m), tuple(labels), light, light_label, com)


def _xyz(p) -> str:
    return " ".join(repr(float(x)) for x in p)


def write_xyz(structure: Structure, path, comment_extra: str = "") -> Path:
    path = Path(path)
    table = {}
    for lb, m in zip(structure.labels, structure.masses):
        table.setdefault(lb, float(m))
    n = structure.natoms + (structure.light_position is not None)
    opts = ["masses=" + ",".join(f"{lb}:{m!r}" for lb, m in table.items())]
    opts.append(f"com={'true' if structure.com_referenced else 'false'}")
    if structure.light_position is not None:
        opts.append(f"light={structure.light_label or 'H'}")
    if comment_extra:
        opts.append(comment_extra)
    lines = [str(n), " ".join(opts)]
    for lb, p in zip(structure.labels, structure.positions):
        lines.append(f"{lb} {_xyz(p)}")
    if structure.light_position is not None:
        lines.append(f"{structure.light_label or 'H'} {_xyz(structure.light_position)}")
    path.write_text("\n".join(lines) + "\n")
    return path


def write_projection_tsv(proj: Projection, basis: ModeBasis, path) -> Path:
    path = Path(path)
    rows = [
        ("Q_lr", basis.Q_lr),
        ("T_st", basis.T_st),
        ("QdotT", float(basis.Q_hat @ basis.T_hat)),
        ("c_Q", proj.c_Q),
        ("c_T", proj.c_T),
        ("c_Q2", proj.c_Q2),
        ("c_T2", proj.c_T2),
        ("c_R2", proj.c_R2),
    ]
    path.write_text("# label\tvalue\n" + "".join(f"{k}\t{float(v)!r}\n" for k, v in rows))
    return path


def random_structures(n_atoms: int, rng: np.random.Generator, labels: Sequence[str] | None = None):
    """Three random structures (left, right, transition) sharing atoms; for tests and demos."""
    labels = tuple(labels) if labels is not None else tuple("Nb" for _ in range(n_atoms))
    masses = rng.uniform(1.0, 100.0, n_atoms)
    base = rng.normal(size=(n_atoms, 3)) * 3.0
    out = []
    for _ in range(3):
        out.append(Structure(base + 0.1 * rng.normal(size=base.shape), masses, labels))
    return out
