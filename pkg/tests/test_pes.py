import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from latticetunnel.grid import AxisSpec, GridSpec, refine_grid
from latticetunnel.pes import (
    DEFAULT_PARAMS,
    InterpolationWarning,
    ModelParams,
    PesFormatError,
    PesSample,
    default_grid,
    interpolate,
    load_pes,
    model_pes,
    params_from_meta,
    save_pes,
)


def _sample(values=None, shape=(3, 4)):
    g = GridSpec((AxisSpec("q_y", shape[0], -1, 1), AxisSpec("Q", shape[1], -2, 3)))
    if values is None:
        values = np.arange(g.size, dtype=float) * 0.37 - 1.0
    return PesSample(g, values, {"source": "test", "note": "two words"})


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 12, elements=st.floats(-1e300, 1e300, allow_nan=False, allow_infinity=False)))
def test_binary_round_trip_bit_exact(tmp_path_factory, values):
    p = tmp_path_factory.mktemp("pes") / "s.pesb"
    s = _sample(values)
    r = load_pes(save_pes(s, p))
    assert r.grid == s.grid
    assert r.meta == s.meta
    assert r.values.tobytes() == s.values.tobytes()


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 12, elements=st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)))
def test_text_and_binary_agree(tmp_path_factory, values):
    d = tmp_path_factory.mktemp("pes")
    s = _sample(values)
    a = load_pes(save_pes(s, d / "s.pes"))
    b = load_pes(save_pes(s, d / "s.pesb"))
    np.testing.assert_allclose(a.values, b.values, rtol=1e-15, atol=0)
    assert a.grid == b.grid and a.meta == b.meta


def test_text_layout(tmp_path):
    text = save_pes(_sample(), tmp_path / "s.pes").read_text().splitlines()
    assert text[0] == "#PESv1 text"
    assert text[1] == "ndim 2"
    assert text[2].split() == ["axis", "q_y", "3", "-1.0", "1.0"]
    assert text[4] == "units energy=meV coord=sqrtamu_angstrom"
    assert "values" in text


def test_missing_axis_record_is_structured_error(tmp_path):
    g = default_grid()
    s = model_pes(DEFAULT_PARAMS, GridSpec(tuple(AxisSpec(a.name, 2, a.min, a.max) for a in g.axes)))
    lines = save_pes(s, tmp_path / "s.pes").read_text().splitlines()
    del lines[3]  # drop one of the five axis records
    bad = tmp_path / "bad.pes"
    bad.write_text("\n".join(lines) + "\n")
    with pytest.raises(PesFormatError) as exc:
        load_pes(bad)
    assert exc.value.line is not None
    assert "5 axes" in str(exc.value)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda t: t.replace("#PESv1 text", "#PESv9 text"),
        lambda t: t.replace("ndim 2", "ndim x"),
        lambda t: t + "1.0\n",
        lambda t: t.replace("-1.0\n", "nan\n", 1) if "\n-1.0\n" in t else t.rsplit("\n", 2)[0] + "\ninf\n",
    ],
)
def test_malformed_text_rejected(tmp_path, mutate):
    p = save_pes(_sample(), tmp_path / "s.pes")
    p.write_text(mutate(p.read_text()))
    with pytest.raises(PesFormatError):
        load_pes(p)


def test_malformed_binary_rejected(tmp_path):
    p = save_pes(_sample(), tmp_path / "s.pesb")
    data = p.read_bytes()
    (tmp_path / "v.pesb").write_bytes(data[:4] + b"\x02\x00" + data[6:])
    with pytest.raises(PesFormatError):
        load_pes(tmp_path / "v.pesb")
    (tmp_path / "t.pesb").write_bytes(data[:-8])
    with pytest.raises(PesFormatError):
        load_pes(tmp_path / "t.pesb")


def test_non_finite_values_rejected():
    with pytest.raises(ValueError):
        _sample(np.r_[np.zeros(11), np.nan])


def test_energy_reference_is_minimum():
    s = _sample()
    assert s.energy_reference == -1.0


def test_interpolate_identity():
    s = _sample(np.random.default_rng(0).normal(size=12) * 100.0)
    f = interpolate(s, s.grid)
    np.testing.assert_allclose(f.values, s.values, rtol=1e-12)


def test_cubic_polynomial_reproduced():
    g = GridSpec((AxisSpec("q_y", 6, -1, 1), AxisSpec("Q", 5, -2, 2), AxisSpec("T", 4, 0, 1)))

    def cubic(y, Q, T):
        return 3 + y - 2 * y**3 + 0.5 * Q**2 * y - Q**3 + 4 * T**3 * y + T * Q - 7 * T**2

    s = PesSample(g, cubic(*g.mesh()), {})
    fine = refine_grid(g, 3)
    f = interpolate(s, fine)
    np.testing.assert_allclose(f.values, cubic(*fine.mesh()), rtol=1e-10, atol=1e-10)


def test_fourth_order_convergence():
    errors = []
    for n in (11, 21):
        g = GridSpec((AxisSpec("Q", n, 0.0, 2.0),))
        s = PesSample(g, np.sin(g.points()[0]), {})
        fine = refine_grid(g, 400 // (n - 1))
        errors.append(np.max(np.abs(interpolate(s, fine).values - np.sin(fine.points()[0]))))
    ratio = errors[0] / errors[1]
    assert 13.0 < ratio < 19.0


def test_interpolation_linear_and_constant():
    rng = np.random.default_rng(5)
    g = GridSpec((AxisSpec("q_y", 7, -1, 1), AxisSpec("Q", 5, -1, 1)))
    v1, v2 = rng.normal(size=(2,) + g.shape)
    fine = refine_grid(g, (2, 3))
    a, b = 1.7, -0.3
    lhs = interpolate(PesSample(g, a * v1 + b * v2, {}), fine).values
    rhs = a * interpolate(PesSample(g, v1, {}), fine).values + b * interpolate(PesSample(g, v2, {}), fine).values
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)
    const = interpolate(PesSample(g, np.full(g.shape, 4.25), {}), fine).values
    np.testing.assert_allclose(const, 4.25, rtol=1e-14)


def test_interpolate_outside_extent_raises():
    s = _sample()
    wide = GridSpec((AxisSpec("q_y", 5, -2, 1), AxisSpec("Q", 4, -2, 3)))
    with pytest.raises(ValueError):
        interpolate(s, wide)


def test_short_axis_falls_back_with_warning():
    g = GridSpec((AxisSpec("q_y", 3, -1, 1), AxisSpec("Q", 2, 0, 1)))
    s = PesSample(g, np.array([[1.0, 2.0], [0.0, 1.0], [1.0, 2.0]]), {})
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        f = interpolate(s, refine_grid(g, 2))
    assert any(issubclass(w.category, InterpolationWarning) for w in caught)
    assert len(f.notes) == 2
    # exact at sample nodes even with the fallback
    np.testing.assert_allclose(f.values[::2, ::2], s.values, rtol=1e-14)


def test_model_symmetric_minima_zero():
    p = DEFAULT_PARAMS.separable()
    g = GridSpec((AxisSpec("q_y", 13, -1.2, 1.2),))
    s = model_pes(p, g)
    y = g.points()[0]
    at = [int(np.argmin(np.abs(y - x))) for x in (-p.d, p.d)]
    np.testing.assert_allclose(s.values[at], 0.0, atol=1e-12)


def test_model_origin_value():
    for params in (DEFAULT_PARAMS, ModelParams(A=100, d=1.3, g_Q=-5, g_T=7)):
        assert params.evaluate() == pytest.approx(params.A * params.d**4, rel=1e-15)


def _reference_model(p, qx, qy, qz, Q, T):
    # written out independently of ModelParams.evaluate
    well = p.A * (qy * qy - p.d * p.d) * (qy * qy - p.d * p.d)
    light = 0.5 * (p.omega_x * qx) ** 2 + 0.5 * (p.omega_z * qz) ** 2
    lattice = 0.5 * (p.Omega_Q * Q) ** 2 + 0.5 * (p.Omega_T * T) ** 2
    coupling = -p.g_Q * Q * qy - p.g_T * T * (p.d * p.d - qy * qy)
    return well + light + lattice + coupling


def test_model_default_grid_matches_independent_formula():
    g = default_grid()
    s = model_pes(DEFAULT_PARAMS, g)
    pts = g.points()
    rng = np.random.default_rng(1)
    for flat in rng.choice(g.size, 500, replace=False):
        idx = g.multi_index_of(int(flat))
        coords = [pts[a][i] for a, i in enumerate(idx)]
        ref = _reference_model(DEFAULT_PARAMS, *coords)
        assert s.values[idx] == pytest.approx(ref, rel=1e-12, abs=1e-9)


def test_symmetric_axis_nodes_are_exact_mirrors():
    for n in (2, 7, 11, 40, 41):
        x = AxisSpec("q_y", n, -1.3, 1.3).points()
        np.testing.assert_array_equal(x, -x[::-1])


def test_model_mirror_symmetry_exact_when_uncoupled():
    g = default_grid()
    s = model_pes(DEFAULT_PARAMS.separable(), g)
    np.testing.assert_array_equal(s.values, s.values[:, ::-1])


def test_model_coupled_mirror_q_y_Q():
    g = default_grid(["q_y", "Q"])
    s = model_pes(DEFAULT_PARAMS, g)
    np.testing.assert_allclose(s.values, s.values[::-1, ::-1], rtol=1e-13, atol=1e-11)


def test_model_meta_and_params_round_trip(tmp_path):
    s = model_pes(DEFAULT_PARAMS, default_grid(["q_y", "Q"]))
    assert "A*(q_y^2 - d^2)^2" in s.meta["formula"]
    r = load_pes(save_pes(s, tmp_path / "m.pes"))
    assert params_from_meta(r.meta) == DEFAULT_PARAMS


def test_model_unknown_axis():
    with pytest.raises(ValueError):
        model_pes(DEFAULT_PARAMS, GridSpec((AxisSpec("w", 3, 0, 1),)))


@pytest.mark.parametrize("name", ["A", "d", "Omega_Q", "Omega_T"])
def test_model_params_positive(name):
    with pytest.raises(ValueError):
        ModelParams(**{name: 0.0})


def test_model_bounded_below_on_grid():
    for combo in itertools.product([0.0, 40.0], [0.0, 100.0]):
        s = model_pes(ModelParams(g_Q=combo[0], g_T=combo[1]), default_grid())
        assert np.isfinite(s.energy_reference)
