import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from latticetunnel.eigen import dense_solve
from latticetunnel.energetics import (
    NoThresholdError,
    TwoLevelParams,
    balance_report,
    critical_splitting,
    fixed_lattice_energy_diffs,
    populations,
    symmetric_energy,
    two_level_ground_energy,
    write_report,
)
from latticetunnel.grid import AxisSpec, GridSpec
from latticetunnel.hamiltonian import assemble
from latticetunnel.constants import MASS_MUON
from latticetunnel.pes import DEFAULT_PARAMS, PesSample, PotentialField, default_grid, model_pes

deltas = st.floats(-200, 200, allow_nan=False)
splittings = st.floats(0, 200, allow_nan=False)


def test_ground_energy_examples():
    assert two_level_ground_energy(0, 10) == -5.0
    assert two_level_ground_energy(54, 0) == 0.0
    expected = -0.5 * math.sqrt(54**2 + 46**2) + 27
    assert two_level_ground_energy(54, 46) == pytest.approx(expected, abs=1e-12)
    assert two_level_ground_energy(54, 46) == pytest.approx(-8.47, abs=5e-3)


def test_symmetric_energy_examples():
    assert symmetric_energy(0, 0) == 0.0
    assert symmetric_energy(46, 12.5) == pytest.approx(-10.5, abs=1e-12)
    # symmetric configuration preferred at the quoted splitting
    assert symmetric_energy(46, 12.5) < two_level_ground_energy(54, 46)


def test_critical_splitting_examples():
    assert critical_splitting(54, 12.5) == pytest.approx(35.78, abs=0.05)
    assert round(critical_splitting(54, 12.5)) == 36
    for delta in (1.0, 54.0, 300.0):
        assert critical_splitting(delta, 0.0) == 0.0
    with pytest.raises(NoThresholdError):
        critical_splitting(54, 27)
    with pytest.raises(NoThresholdError):
        critical_splitting(54, 30)


def test_populations_examples():
    assert populations(0, 3.0) == (0.5, 0.5)
    assert populations(5.0, 0) == (1.0, 0.0)
    a, b = populations(7.0, 7.0)
    assert a == pytest.approx(0.5 + math.sqrt(2) / 4, abs=1e-14)
    assert b == pytest.approx(0.5 - math.sqrt(2) / 4, abs=1e-14)
    assert a == pytest.approx(0.85355, abs=1e-5)
    with pytest.raises(ValueError):
        populations(0, 0)


def test_parameter_validation():
    with pytest.raises(ValueError):
        TwoLevelParams(1.0, -1.0)
    with pytest.raises(ValueError):
        TwoLevelParams(1.0, 1.0, -0.1)
    with pytest.raises(ValueError):
        two_level_ground_energy(1.0, -1.0)
    with pytest.raises(ValueError):
        symmetric_energy(-1.0, 0.0)
    with pytest.raises(ValueError):
        critical_splitting(10.0, -1.0)


@given(deltas, splittings)
def test_populations_sum_to_one(delta, J):
    if delta == 0 and J == 0:
        return
    a, b = populations(delta, J)
    assert abs(a + b - 1.0) <= 1e-14
    assert 0.0 <= b <= a + 1e-15 or delta < 0


@given(deltas, splittings)
def test_populations_swap_under_reflection(delta, J):
    if delta == 0 and J == 0:
        return
    a, b = populations(delta, J)
    assert populations(-delta, J) == (b, a)


@given(deltas)
def test_ground_energy_decreases_with_J(delta):
    J = np.linspace(0, 100, 201)
    E = np.array([two_level_ground_energy(delta, j) for j in J])
    assert np.all(np.diff(E) <= 0)
    if delta != 0:
        assert np.all(np.diff(E) < 0)


@given(st.floats(1, 500), st.just(0.0) | st.floats(1e-3, 0.49))
def test_critical_splitting_is_a_root(delta, frac):
    E_c = frac * delta
    J = critical_splitting(delta, E_c)
    assert J >= 0
    assert abs(symmetric_energy(J, E_c) - two_level_ground_energy(delta, J)) < 1e-10 * max(1.0, delta)
    if J > 0:
        # above the threshold the symmetric configuration wins, below it loses
        assert symmetric_energy(1.01 * J, E_c) < two_level_ground_energy(delta, 1.01 * J)
        assert symmetric_energy(0.99 * J, E_c) > two_level_ground_energy(delta, 0.99 * J)


def test_fixed_lattice_constant_pes():
    grid = GridSpec((AxisSpec("q_y", 21, -1, 1), AxisSpec("Q", 5, -2, 2), AxisSpec("T", 5, -1, 1)))
    y, _, _ = grid.mesh()
    pes = PesSample(grid, 400 * (y**2 - 0.3) ** 2, {})
    diffs = fixed_lattice_energy_diffs(pes, [{"Q": 0.0, "T": 0.0}, {"Q": 1.3, "T": -0.4}, {"Q": -2.0, "T": 1.0}])
    assert diffs[0] == 0.0
    np.testing.assert_allclose(diffs, 0.0, atol=1e-8)


def test_fixed_lattice_matches_dense_oracle():
    pes = model_pes(DEFAULT_PARAMS, default_grid())
    points = [{"Q": 0.0, "T": 0.0}, {"Q": 1.3, "T": 0.0}, {"Q": 0.7, "T": 2.1}, {"Q": -3.0, "T": -1.0}]
    diffs = fixed_lattice_energy_diffs(pes, points, mass=MASS_MUON)
    # the model is at most quadratic in Q and T, which not-a-knot splines
    # reproduce exactly, so direct evaluation at off-node points is an oracle
    light = default_grid(["q_x", "q_y", "q_z"])
    x, y, z = light.mesh()
    E = []
    for pt in points:
        V = DEFAULT_PARAMS.evaluate(q_x=x, q_y=y, q_z=z, **pt)
        E.append(dense_solve(assemble(PotentialField(light, V), mass=MASS_MUON), k=1).eigenvalues[0])
    ref = [e - E[0] for e in E]
    np.testing.assert_allclose(diffs, ref, rtol=1e-8, atol=1e-9)
    assert abs(diffs[1]) > 1.0
    threaded = fixed_lattice_energy_diffs(pes, points, mass=MASS_MUON, workers=3)
    np.testing.assert_allclose(threaded, diffs, atol=1e-12)


def test_fixed_lattice_errors():
    pes = model_pes(DEFAULT_PARAMS, default_grid())
    with pytest.raises(ValueError):
        fixed_lattice_energy_diffs(pes, [])
    with pytest.raises(ValueError):
        fixed_lattice_energy_diffs(pes, [{"Q": 9.0, "T": 0.0}])


def test_balance_report_and_tsv(tmp_path):
    rows = dict(balance_report(54, 12.5, 46))
    assert rows["J_critical"] == pytest.approx(critical_splitting(54, 12.5))
    assert rows["symmetric_favored"] == 1.0
    assert rows["population_1"] + rows["population_2"] == pytest.approx(1.0, abs=1e-14)
    assert math.isnan(dict(balance_report(54, 27))["J_critical"])
    p = write_report(balance_report(54, 12.5), tmp_path / "e.tsv")
    lines = p.read_text().splitlines()
    assert lines[0] == "# label\tvalue_meV"
    assert lines[1] == "delta\t54.0"
