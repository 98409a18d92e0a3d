"""Population-weighted force averaging and coincidence relaxation.

The light particle is treated as a set of point images ``r_i`` with weights
``w_i`` (the well populations, or ``|psi|^2 dV`` over a grid). The lattice
feels ``F_n = sum_i w_i f_n(r_i)``. Relaxation minimizes
``E_bar(R) = sum_i w_i E(R, r_i(R))``, where each image sits on a local
extremum of the light-particle potential of the current lattice. By the
envelope theorem ``-grad E_bar`` is exactly the averaged force.

Units: positions in A, energies in meV, forces in meV/A, stress in meV/A^3.
"""

from __future__ import annotations

import logging
import os
import shlex
import subprocess
import tempfile
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from latticetunnel.constants import LIGHT_AXES, MASS_H
from latticetunnel.hamiltonian import Wavefunction
from latticetunnel.modes import Structure, read_xyz, write_xyz

log = logging.getLogger(__name__)

DEFAULT_FORCE_TOL = 10.0  # meV/A, i.e. 1e-2 eV/A
DEFAULT_POS_TOL = 1e-5  # A
VOIGT = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))


class CalculatorError(RuntimeError):
    pass


class CapabilityError(CalculatorError):
    pass


class ImageSearchError(RuntimeError):
    pass


class StationarityError(ValueError):
    pass


@dataclass
class CalcResult:
    energy: float
    forces: np.ndarray
    stress: np.ndarray | None = None  # Voigt xx yy zz yz xz xy


def voigt_to_tensor(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    t = np.empty((3, 3))
    for k, (i, j) in enumerate(VOIGT):
        t[i, j] = t[j, i] = v[k]
    return t


def tensor_to_voigt(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    return np.array([0.5 * (t[i, j] + t[j, i]) for i, j in VOIGT])


class Calculator(ABC):
    """Energy, forces and (optionally) stress with the light particle fixed at ``site``."""

    capabilities: frozenset = frozenset({"energy", "forces"})
    reentrant: bool = False

    @abstractmethod
    def evaluate(self, structure: Structure, site) -> CalcResult: ...

    def light_energy(self, structure: Structure, site) -> float:
        return self.evaluate(structure, site).energy


# ---------------------------------------------------------------------------
# analytic model backend


@dataclass
class ModelCalculator(Calculator):
    """Harmonic lattice coupled to a light-particle double well along y.

    ``E = sum_n k_n |u_n|^2 / 2 + A (y^2 - d^2)^2 + omega2 (x^2 + z^2) / 2
    - (g . u) y - (h . u) y^2`` with ``u = R - sites`` and ``(x, y, z) = r - center``.

    The ``g`` term tilts the wells (site-energy coupling, odd under the
    mirror), the ``h`` term deepens both (even). When ``g`` and ``h`` are
    orthogonal in the ``1/k`` metric the equal-population minimizer is
    closed-form, see :meth:`symmetric_minimizer`.
    """

    sites: np.ndarray
    k: np.ndarray
    g: np.ndarray
    h: np.ndarray
    labels: tuple[str, ...]
    masses: np.ndarray
    A: float = 500.0
    d: float = 0.5
    omega2: float = 800.0
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    volume: float = 100.0

    capabilities = frozenset({"energy", "forces", "stress"})
    reentrant = True

    def __post_init__(self):
        self.sites = np.asarray(self.sites, dtype=np.float64).reshape(-1, 3)
        n = len(self.sites)
        self.k = np.broadcast_to(np.asarray(self.k, dtype=np.float64), (n,)).copy()
        self.g = np.asarray(self.g, dtype=np.float64).reshape(n, 3)
        self.h = np.asarray(self.h, dtype=np.float64).reshape(n, 3)
        self.masses = np.asarray(self.masses, dtype=np.float64).reshape(n)
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        if np.any(self.k <= 0):
            raise ValueError("spring constants must be positive")

    @classmethod
    def default(cls) -> ModelCalculator:
        """Four-atom cell, mirror symmetric under y -> -y (atoms 0 and 1 swap)."""
        sites = [(0.0, 1.6, 0.0), (0.0, -1.6, 0.0), (1.5, 0.0, 0.0), (-1.5, 0.0, 0.0)]
        g = [(0, 300.0, 0), (0, 300.0, 0), (0, 200.0, 0), (0, 200.0, 0)]
        h = [(0, 300.0, 0), (0, -300.0, 0), (-200.0, 0, 0), (200.0, 0, 0)]
        return cls(
            sites=np.array(sites),
            k=np.array([2000.0, 2000.0, 3000.0, 3000.0]),
            g=np.array(g),
            h=np.array(h),
            labels=("Nb", "Nb", "O", "O"),
            masses=np.array([92.90637, 92.90637, 15.999, 15.999]),
        )

    @property
    def kappa(self) -> float:
        return float(np.sum(self.h**2 / self.k[:, None]))

    def reference_structure(self) -> Structure:
        return Structure(self.sites.copy(), self.masses, self.labels)

    def mirror(self, structure: Structure) -> Structure:
        """Image under y -> -y with atoms 0 and 1 exchanged (the default cell's mirror)."""
        p = structure.positions * np.array([1.0, -1.0, 1.0])
        perm = np.arange(len(p))
        perm[[0, 1]] = [1, 0]
        return structure.with_positions(p[perm])

    def _parts(self, structure: Structure, site):
        if structure.natoms != len(self.sites):
            raise CalculatorError(f"model has {len(self.sites)} atoms, structure has {structure.natoms}")
        u = structure.positions - self.sites
        x, y, z = np.asarray(site, dtype=np.float64) - self.center
        return u, x, y, z, float(np.sum(self.g * u)), float(np.sum(self.h * u))

    def evaluate(self, structure: Structure, site) -> CalcResult:
        u, x, y, z, gu, hu = self._parts(structure, site)
        e = (
            0.5 * float(np.sum(self.k * np.sum(u**2, axis=1)))
            + self.A * (y * y - self.d**2) ** 2
            + 0.5 * self.omega2 * (x * x + z * z)
            - gu * y
            - hu * y * y
        )
        forces = -self.k[:, None] * u + self.g * y + self.h * (y * y)
        # strain derivative with atoms and light particle deformed about the origin
        f_light = -self.light_gradient(structure, site)
        r = np.asarray(site, dtype=np.float64)
        D = -(forces.T @ structure.positions) - np.outer(f_light, r)
        stress = tensor_to_voigt(0.5 * (D + D.T) / self.volume)
        return CalcResult(e, forces, stress)

    def light_gradient(self, structure: Structure, site) -> np.ndarray:
        u, x, y, z, gu, hu = self._parts(structure, site)
        dy = 4.0 * self.A * y * (y * y - self.d**2) - gu - 2.0 * hu * y
        return np.array([self.omega2 * x, dy, self.omega2 * z])

    def symmetric_minimizer(self) -> tuple[Structure, np.ndarray]:
        """Closed-form equal-population minimizer: lattice and the two images.

        Requires ``sum_n g_n . h_n / k_n = 0`` and ``kappa < 2 A``. The images
        sit at ``y^2 = d^2 / (1 - kappa / (2A))`` and ``u_n = h_n y^2 / k_n``.
        """
        if abs(float(np.sum(self.g * self.h / self.k[:, None]))) > 1e-12 * (1 + self.kappa):
            raise ValueError("g and h must be orthogonal in the 1/k metric")
        if self.kappa >= 2 * self.A:
            raise ValueError("kappa >= 2A: the coupling destroys the double well")
        y2 = self.d**2 / (1.0 - self.kappa / (2.0 * self.A))
        u = self.h * y2 / self.k[:, None]
        y = np.sqrt(y2)
        images = self.center + np.array([[0.0, -y, 0.0], [0.0, y, 0.0]])
        return Structure(self.sites + u, self.masses, self.labels), images


# ---------------------------------------------------------------------------
# subprocess / file-exchange backend


def _nums(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def write_site(site, path) -> Path:
    s = np.asarray(site, dtype=np.float64).reshape(3)
    path = Path(path)
    path.write_text(f"site {_nums(s)}\n")
    return path


def read_site(path) -> np.ndarray:
    tok = Path(path).read_text().split()
    if len(tok) != 4 or tok[0] != "site":
        raise CalculatorError(f"{path}: expected 'site x y z'")
    return np.array([float(t) for t in tok[1:]])


def read_result(path, natoms: int) -> CalcResult:
    energy, forces, stress = None, [], None
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        tok = line.split()
        if not tok or tok[0].startswith("#"):
            continue
        try:
            if tok[0] == "energy_meV" and len(tok) == 2:
                energy = float(tok[1])
            elif tok[0] == "force" and len(tok) == 4:
                forces.append([float(t) for t in tok[1:]])
            elif tok[0] == "stress" and len(tok) == 7:
                stress = np.array([float(t) for t in tok[1:]])
            else:
                raise CalculatorError(f"{path}:{lineno}: unrecognized line {line!r}")
        except ValueError:
            raise CalculatorError(f"{path}:{lineno}: bad number in {line!r}") from None
    if energy is None:
        raise CalculatorError(f"{path}: missing energy_meV line")
    if len(forces) != natoms:
        raise CalculatorError(f"{path}: expected {natoms} force lines, found {len(forces)}")
    return CalcResult(energy, np.array(forces), stress)


def write_result(result: CalcResult, path) -> Path:
    path = Path(path)
    lines = [f"energy_meV {float(result.energy)!r}"]
    lines += [f"force {_nums(f)}" for f in result.forces]
    if result.stress is not None:
        lines.append("stress " + _nums(result.stress))
    path.write_text("\n".join(lines) + "\n")
    return path


class SubprocessCalculator(Calculator):
    """Runs an external command per evaluation in a fresh temporary directory.

    The command finds ``structure.xyz`` and ``site.txt`` in its working
    directory and must write ``result.txt`` (``energy_meV``, one ``force``
    line per atom, optional ``stress`` with six Voigt components).
    """

    def __init__(self, command, stress: bool = False, timeout: float | None = None, reentrant: bool = False):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.capabilities = frozenset({"energy", "forces"} | ({"stress"} if stress else set()))
        self.timeout = timeout
        self.reentrant = reentrant

    def evaluate(self, structure: Structure, site) -> CalcResult:
        with tempfile.TemporaryDirectory(prefix="lt-calc-") as tmp:
            write_xyz(structure, os.path.join(tmp, "structure.xyz"))
            write_site(site, os.path.join(tmp, "site.txt"))
            try:
                proc = subprocess.run(
                    self.command, cwd=tmp, capture_output=True, text=True, timeout=self.timeout
                )
            except (OSError, subprocess.TimeoutExpired) as exc:
                raise CalculatorError(f"calculator command failed: {exc}") from exc
            if proc.returncode != 0:
                raise CalculatorError(
                    f"calculator exited with {proc.returncode}: {proc.stderr.strip()[:500]}"
                )
            out = os.path.join(tmp, "result.txt")
            if not os.path.exists(out):
                raise CalculatorError("calculator did not write result.txt")
            res = read_result(out, structure.natoms)
        if "stress" in self.capabilities and res.stress is None:
            raise CalculatorError("calculator declared stress but result.txt has no stress line")
        return res


def model_worker(workdir=".") -> None:
    """File-exchange driver around :meth:`ModelCalculator.default`, for exercising the subprocess backend."""
    wd = Path(workdir)
    structure = read_xyz(wd / "structure.xyz")
    site = read_site(wd / "site.txt")
    write_result(ModelCalculator.default().evaluate(structure, site), wd / "result.txt")


# ---------------------------------------------------------------------------
# averaging


def _check_weights(sites, weights) -> tuple[np.ndarray, np.ndarray]:
    sites = np.asarray(sites, dtype=np.float64).reshape(-1, 3)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if len(w) != len(sites):
        raise ValueError(f"{len(sites)} sites but {len(w)} weights")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    if abs(w.sum() - 1.0) > 1e-10:
        raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
    return sites, w


def _evaluate_sites(calc: Calculator, lattice: Structure, sites, weights, workers: int = 1):
    """Results for every site with nonzero weight (None for the rest)."""
    idx = [i for i, w in enumerate(weights) if w > 0]

    def one(i):
        try:
            return calc.evaluate(lattice, sites[i])
        except CalculatorError:
            raise
        except Exception as exc:
            raise CalculatorError(f"calculator failed at site {i}: {exc}") from exc

    if workers > 1 and calc.reentrant and len(idx) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            res = list(pool.map(one, idx))
    else:
        res = [one(i) for i in idx]
    out = [None] * len(weights)
    for i, r in zip(idx, res):
        out[i] = r
    return out


def averaged_forces(calc: Calculator, lattice: Structure, sites, weights, workers: int = 1) -> np.ndarray:
    """``F_n = sum_i w_i f_n(r_i)``; sites with zero weight are not evaluated."""
    sites, w = _check_weights(sites, weights)
    res = _evaluate_sites(calc, lattice, sites, w, workers)
    F = np.zeros((lattice.natoms, 3))
    for wi, r in zip(w, res):
        if r is not None:
            F += wi * r.forces
    return F


def averaged_energy(calc: Calculator, lattice: Structure, sites, weights, workers: int = 1) -> float:
    sites, w = _check_weights(sites, weights)
    res = _evaluate_sites(calc, lattice, sites, w, workers)
    return float(sum(wi * r.energy for wi, r in zip(w, res) if r is not None))


def averaged_stress(calc: Calculator, lattice: Structure, sites, weights, workers: int = 1) -> np.ndarray:
    """``sigma_bar = sum_i w_i sigma(r_i)`` as a Voigt 6-vector."""
    if "stress" not in calc.capabilities:
        raise CapabilityError(f"{type(calc).__name__} does not report stress")
    sites, w = _check_weights(sites, weights)
    res = _evaluate_sites(calc, lattice, sites, w, workers)
    s = np.zeros(6)
    for wi, r in zip(w, res):
        if r is not None:
            if r.stress is None:
                raise CalculatorError("calculator returned no stress")
            s += wi * np.asarray(r.stress)
    return s


def density_sites(
    psi: Wavefunction,
    origin=(0.0, 0.0, 0.0),
    reference_mass: float = MASS_H,
    cutoff: float = 1e-12,
) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature sites (A) and weights ``|psi|^2 dV`` from a light-particle wavefunction.

    ``psi`` lives on light axes (any subset of q_x, q_y, q_z) in phonon
    coordinates of ``reference_mass``; Cartesian positions are
    ``origin + q / sqrt(m_ref)``. Nodes below ``cutoff`` times the largest
    weight are dropped and the rest renormalized.
    """
    names = psi.grid.names
    bad = [n for n in names if n not in LIGHT_AXES]
    if bad:
        raise ValueError(f"density must be over light axes only; got {bad}")
    w = (psi.amplitudes**2 * psi.grid.cell_volume).reshape(-1)
    mesh = psi.grid.mesh()
    pts = np.tile(np.asarray(origin, dtype=np.float64), (w.size, 1))
    for name, coord in zip(names, mesh):
        pts[:, LIGHT_AXES.index(name)] += coord.reshape(-1) / np.sqrt(reference_mass)
    keep = w > cutoff * w.max()
    w = w[keep]
    return pts[keep], w / w.sum()


# ---------------------------------------------------------------------------
# image relocation


def _light_gradient(calc: Calculator, lattice: Structure, r, step: float = 1e-4) -> np.ndarray:
    fn = getattr(calc, "light_gradient", None)
    if fn is not None:
        return np.asarray(fn(lattice, r), dtype=np.float64)
    g = np.empty(3)
    for a in range(3):
        e = np.zeros(3)
        e[a] = step
        g[a] = (calc.light_energy(lattice, r + e) - calc.light_energy(lattice, r - e)) / (2 * step)
    return g


def _light_hessian(calc: Calculator, lattice: Structure, r, step: float = 1e-4) -> np.ndarray:
    H = np.empty((3, 3))
    for a in range(3):
        e = np.zeros(3)
        e[a] = step
        H[:, a] = (_light_gradient(calc, lattice, r + e) - _light_gradient(calc, lattice, r - e)) / (2 * step)
    return 0.5 * (H + H.T)


def locate_extremum(
    calc: Calculator,
    lattice: Structure,
    seed,
    trust: float = 0.5,
    gtol: float = 1e-8,
    xtol: float = 1e-11,
    max_iter: int = 60,
) -> np.ndarray:
    """Newton search for a stationary point of ``r -> E(lattice, r)`` near ``seed``."""
    r = np.asarray(seed, dtype=np.float64).copy()
    for _ in range(max_iter):
        g = _light_gradient(calc, lattice, r)
        if np.linalg.norm(g) < gtol:
            return r
        H = _light_hessian(calc, lattice, r)
        try:
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = -g / max(np.linalg.norm(g), 1.0)
        n = np.linalg.norm(step)
        if n > trust:
            step *= trust / n
        r = r + step
        if np.linalg.norm(step) < xtol:
            return r
    raise ImageSearchError(f"image search did not converge from {np.asarray(seed).tolist()}")


def relocate_images(calc, lattice, images, weights, collapse_tol: float = 1e-3) -> np.ndarray:
    """Move each weighted image to the nearest extremum of the light-particle potential.

    Images with zero weight stay put. The trust radius is half the
    distance between the two images.
    """
    images = np.asarray(images, dtype=np.float64).reshape(-1, 3)
    sep = np.linalg.norm(images[0] - images[-1]) if len(images) > 1 else 1.0
    trust = 0.5 * sep if sep > 0 else 0.5
    out = images.copy()
    for i, w in enumerate(weights):
        if w > 0:
            out[i] = locate_extremum(calc, lattice, images[i], trust=trust)
    active = [i for i, w in enumerate(weights) if w > 0]
    for a in range(len(active)):
        for b in range(a + 1, len(active)):
            if np.linalg.norm(out[active[a]] - out[active[b]]) < collapse_tol:
                raise ImageSearchError("images collapsed into one basin")
    return out


# ---------------------------------------------------------------------------
# relaxation


@dataclass
class CoincidenceState:
    lattice: Structure
    images: np.ndarray
    p2: float
    lam: float = float("nan")
    energies: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    trajectory: list = field(default_factory=list)
    steps: int = 0
    converged: bool = False
    max_force: float = float("nan")
    image_drift: float = float("nan")
    message: str = ""

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64).reshape(2, 3)
        if not 0.0 <= self.p2 <= 1.0:
            raise ValueError(f"p2 must lie in [0, 1], got {self.p2}")

    @property
    def populations(self) -> tuple[float, float]:
        return 1.0 - self.p2, self.p2

    @property
    def weights(self) -> np.ndarray:
        return np.array(self.populations)


def _max_atom_force(F) -> float:
    return float(np.max(np.linalg.norm(F, axis=1)))


def relax_coincidence(
    calc: Calculator,
    initial: CoincidenceState,
    force_tol: float = DEFAULT_FORCE_TOL,
    max_steps: int = 500,
    pos_tol: float = DEFAULT_POS_TOL,
    maxstep: float = 0.1,
    alpha: float = 70000.0,
    workers: int = 1,
) -> CoincidenceState:
    """BFGS relaxation of the lattice under population-weighted forces.

    Weights are fixed to ``(1 - p2, p2)``. After every trial lattice the
    images are relocated, so the objective seen by the line search is
    ``E_bar(R)``. A step is accepted when both ``E_bar`` (Armijo) and the
    total force norm decrease. ``alpha`` (meV/A^2) sets the initial
    Hessian guess ``alpha * I``; ``maxstep`` caps the per-atom step.

    Convergence: max per-atom ``|F|`` below ``force_tol`` and image drift
    over the last step below ``pos_tol``. Non-convergence is reported on
    the returned state, not raised.
    """
    w = initial.weights
    lattice = initial.lattice
    images = relocate_images(calc, lattice, initial.images, w)
    drift = float(np.max(np.linalg.norm(images - initial.images, axis=1)))

    def objective(lat, imgs):
        res = _evaluate_sites(calc, lat, imgs, w, workers)
        E = sum(wi * r.energy for wi, r in zip(w, res) if r is not None)
        F = sum(wi * r.forces for wi, r in zip(w, res) if r is not None)
        return float(E), np.asarray(F, dtype=np.float64)

    E, F = objective(lattice, images)
    n = 3 * lattice.natoms
    Hinv = np.eye(n) / alpha
    state = CoincidenceState(lattice, images, initial.p2)
    state.energies.append(E)
    state.residuals.append(float(np.linalg.norm(F)))
    state.trajectory.append(lattice.positions.copy())

    steps = 0
    while True:
        fmax = _max_atom_force(F)
        if fmax < force_tol and drift < pos_tol:
            state.converged = True
            state.message = f"converged in {steps} steps"
            break
        if steps >= max_steps:
            state.message = f"not converged after {steps} steps (max |F| = {fmax:.3g} meV/A)"
            break
        x = lattice.positions.reshape(-1)
        g = -F.reshape(-1)
        p = -Hinv @ g
        if p @ g >= 0:
            Hinv = np.eye(n) / alpha
            p = -Hinv @ g
        pmax = np.max(np.linalg.norm(p.reshape(-1, 3), axis=1))
        if pmax > maxstep:
            p *= maxstep / pmax
        accepted = False
        for reset in (False, True):
            if reset:
                Hinv = np.eye(n) / alpha
                p = -Hinv @ g
            t = 1.0
            for _ in range(30):
                trial = lattice.with_positions((x + t * p).reshape(-1, 3))
                try:
                    trial_images = relocate_images(calc, trial, images, w)
                except ImageSearchError:
                    t *= 0.5
                    continue
                E_new, F_new = objective(trial, trial_images)
                if E_new <= E + 1e-4 * t * (p @ g) and np.linalg.norm(F_new) <= np.linalg.norm(F):
                    accepted = True
                    break
                t *= 0.5
            if accepted:
                break
        if not accepted:
            state.message = f"line search failed after {steps} steps (max |F| = {fmax:.3g} meV/A)"
            break
        s = t * p
        yv = -F_new.reshape(-1) - g
        sy = s @ yv
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yv):
            rho = 1.0 / sy
            V = np.eye(n) - rho * np.outer(s, yv)
            Hinv = V @ Hinv @ V.T + rho * np.outer(s, s)
        drift = float(np.max(np.linalg.norm(trial_images - images, axis=1)))
        lattice, images, E, F = trial, trial_images, E_new, F_new
        steps += 1
        state.energies.append(E)
        state.residuals.append(float(np.linalg.norm(F)))
        state.trajectory.append(lattice.positions.copy())

    state.lattice = lattice
    state.images = images
    state.steps = steps
    state.max_force = _max_atom_force(F)
    state.image_drift = drift
    log.info("coincidence relaxation: %s", state.message)
    return state


# ---------------------------------------------------------------------------
# stationarity of the population-constrained Lagrangian


@dataclass
class StationarityReport:
    residual: float  # max per-atom |dV1/dr_n + dV2/dr_n|, meV/A
    threshold: float
    lam_scaled: float  # lambda / (2J) from least squares against dDelta/dr_n
    lam_noise_floor: float
    delta: float  # V2 - V1, meV
    passed: bool

    def rows(self) -> list[tuple[str, float]]:
        return [
            ("summed_gradient_residual", self.residual),
            ("threshold", self.threshold),
            ("lambda_over_2J", self.lam_scaled),
            ("lambda_noise_floor", self.lam_noise_floor),
            ("delta", self.delta),
            ("passed", float(self.passed)),
        ]


def lagrangian_stationarity(
    state: CoincidenceState, calc: Calculator, force_tol: float = DEFAULT_FORCE_TOL
) -> StationarityReport:
    """Check ``dV1/dr_n + dV2/dr_n = 0`` at a symmetric (equal-population) state.

    ``V_i`` is the energy with the light particle at image ``i``. With
    ``Delta = V2 - V1``, the multiplier ``lambda / 2J`` is fitted by least
    squares from ``(dV1 + dV2)/2 = (lambda / 2J) dDelta``; it is
    consistent with zero when below ``force_tol / |dDelta|``.
    """
    if abs(state.p2 - 0.5) > 1e-12:
        raise StationarityError(f"stationarity check needs the symmetric target p2 = 0.5, got {state.p2}")
    r1 = calc.evaluate(state.lattice, state.images[0])
    r2 = calc.evaluate(state.lattice, state.images[1])
    summed = -(r1.forces + r2.forces)
    d_delta = -(r2.forces - r1.forces)
    residual = _max_atom_force(summed)
    a = 0.5 * summed.reshape(-1)
    b = d_delta.reshape(-1)
    bb = float(b @ b)
    lam = float(a @ b) / bb if bb > 0 else float("nan")
    floor = force_tol / np.sqrt(bb) if bb > 0 else float("inf")
    threshold = 2.0 * force_tol
    return StationarityReport(
        residual=residual,
        threshold=threshold,
        lam_scaled=lam,
        lam_noise_floor=float(floor),
        delta=float(r2.energy - r1.energy),
        passed=bool(residual < threshold and abs(lam) < floor),
    )


def write_state(state: CoincidenceState, out_dir) -> list[Path]:
    """``relaxed.xyz``, ``images.tsv`` and ``relax_history.tsv``."""
    out = Path(out_dir)
    paths = [write_xyz(state.lattice, out / "relaxed.xyz")]
    lines = ["# image\tweight\tx_A\ty_A\tz_A"]
    for i, (wgt, r) in enumerate(zip(state.weights, state.images), start=1):
        lines.append(f"{i}\t{float(wgt)!r}\t" + "\t".join(repr(float(x)) for x in r))
    p = out / "images.tsv"
    p.write_text("\n".join(lines) + "\n")
    paths.append(p)
    lines = ["# step\tE_bar_meV\tforce_norm_meV_per_A"]
    for i, (e, f) in enumerate(zip(state.energies, state.residuals)):
        lines.append(f"{i}\t{float(e)!r}\t{float(f)!r}")
    p = out / "relax_history.tsv"
    p.write_text("\n".join(lines) + "\n")
    paths.append(p)
    return paths


def mirror_error(calc: ModelCalculator, positions: Sequence) -> float:
    """Largest per-atom distance between a lattice and its mirror image."""
    s = Structure(np.asarray(positions), calc.masses, calc.labels)
    return float(np.max(np.linalg.norm(calc.mirror(s).positions - s.positions, axis=1)))
