"""Small shipped Hamiltonians (each well under the dense limit) shared by the tests."""

import numpy as np

from latticetunnel.constants import HBAR
from latticetunnel.grid import AxisSpec, GridSpec
from latticetunnel.hamiltonian import assemble
from latticetunnel.pes import DEFAULT_PARAMS, PesSample, PotentialField, interpolate, model_pes


def harmonic_1d(hw=10.0, n=301, width_sigma=8.0, name="Q", stencil_order=2):
    omega = hw / HBAR
    sigma = np.sqrt(HBAR / omega)
    half = 0.5 * width_sigma * sigma
    grid = GridSpec((AxisSpec(name, n, -half, half),))
    x = grid.points()[0]
    return assemble(PotentialField(grid, 0.5 * omega**2 * x**2), stencil_order=stencil_order)


def box_1d(n=201, L=2.0, name="q_y", mass=1.00782503207):
    # ghost nodes sit one spacing outside, so the nodes span L - 2h
    h = L / (n + 1)
    grid = GridSpec((AxisSpec(name, n, -L / 2 + h, L / 2 - h),))
    return assemble(PotentialField(grid, np.zeros(n)), mass=mass)


def double_well_1d(n=201):
    grid = GridSpec((AxisSpec("q_y", n, -1.2, 1.2),))
    return assemble(PotentialField.from_sample(model_pes(DEFAULT_PARAMS, grid)))


def model_2d(nq=41, nQ=21):
    grid = GridSpec((AxisSpec("q_y", nq, -1.0, 1.0), AxisSpec("Q", nQ, -3.0, 3.0)))
    return assemble(PotentialField.from_sample(model_pes(DEFAULT_PARAMS, grid)))


def light_3d(mass=1.00782503207):
    grid = GridSpec((AxisSpec("q_x", 7, -0.9, 0.9), AxisSpec("q_y", 41, -1.0, 1.0), AxisSpec("q_z", 7, -0.9, 0.9)))
    return assemble(PotentialField.from_sample(model_pes(DEFAULT_PARAMS, grid)), mass=mass)


def separable_3d():
    grid = GridSpec((AxisSpec("Q", 11, -3, 3), AxisSpec("T", 13, -2, 2), AxisSpec("q_z", 9, -1, 1)))
    Q, T, z = grid.mesh()
    V = 0.5 * 25.0 * Q**2 + 0.5 * 40.0 * T**2 + 300.0 * z**4
    return assemble(PotentialField(grid, V))


def random_2d(seed=3):
    rng = np.random.default_rng(seed)
    grid = GridSpec((AxisSpec("Q", 30, -2, 2), AxisSpec("T", 30, -2, 2)))
    return assemble(PotentialField(grid, 50.0 * rng.random(grid.shape)), stencil_order=4)


def model_5d_coarse():
    axes = (
        AxisSpec("q_x", 3, -0.9, 0.9),
        AxisSpec("q_y", 11, -1.0, 1.0),
        AxisSpec("q_z", 3, -0.9, 0.9),
        AxisSpec("Q", 5, -3.0, 3.0),
        AxisSpec("T", 5, -1.0, 3.0),
    )
    sample = model_pes(DEFAULT_PARAMS, GridSpec(axes))
    return assemble(PotentialField.from_sample(sample))


def interpolated_2d():
    sample = model_pes(DEFAULT_PARAMS, GridSpec((AxisSpec("q_y", 11, -1, 1), AxisSpec("Q", 11, -3, 3))))
    solve = GridSpec((AxisSpec("q_y", 41, -1, 1), AxisSpec("Q", 21, -3, 3)))
    shifted = PesSample(sample.grid, sample.values - sample.energy_reference, sample.meta)
    return assemble(interpolate(shifted, solve))


SHIPPED = {
    "harmonic_1d": harmonic_1d,
    "harmonic_1d_order4": lambda: harmonic_1d(stencil_order=4),
    "box_1d": box_1d,
    "double_well_1d": double_well_1d,
    "model_2d": model_2d,
    "light_3d": light_3d,
    "light_3d_muon": lambda: light_3d(mass=0.1134289259),
    "separable_3d": separable_3d,
    "random_2d_order4": random_2d,
    "model_5d_coarse": model_5d_coarse,
    "interpolated_2d": interpolated_2d,
}
