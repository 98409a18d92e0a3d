import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from latticetunnel import cli
from latticetunnel.coincidence import ModelCalculator
from latticetunnel.modes import Structure, write_xyz
from latticetunnel.pes import load_pes

SMALL = {
    "model": {},
    "axes": ["q_y", "Q", "T"],
    "model_grid": {"q_y": [21, -1.0, 1.0], "Q": [11, -3.0, 3.0], "T": [5, -1.0, 3.0]},
}


def run(tmp_path, command, config=None, *extra, name="out"):
    out = tmp_path / name
    argv = [command, "--out", str(out)]
    if config is not None:
        cfg = tmp_path / f"{name}.json"
        cfg.write_text(json.dumps(config))
        argv += ["--config", str(cfg)]
    return cli.main(argv + list(extra)), out


def error_line(capsys):
    lines = capsys.readouterr().err.strip().splitlines()
    assert len(lines) == 1
    return json.loads(lines[0])


def test_solve_smoke_and_determinism(tmp_path):
    code, out = run(tmp_path, "solve", SMALL)
    assert code == 0
    J = float((out / "splitting.txt").read_text())
    assert J > 0
    spec = np.loadtxt(out / "spectrum.tsv")
    assert spec.shape == (4, 2)
    assert (out / "spectrum.tsv").read_text().startswith("# index\tE_meV\n")
    code, again = run(tmp_path, "solve", SMALL, name="again")
    assert code == 0
    for f in ("spectrum.tsv", "splitting.txt"):
        assert (out / f).read_bytes() == (again / f).read_bytes()
    rec = json.loads((out / "run.json").read_text())
    assert rec["status"] == "ok" and rec["seed"] == 0 and rec["command"] == "solve"
    assert {"constants", "versions", "wall_time_s", "config", "outputs"} <= set(rec)
    assert rec["results"]["splitting_meV"] == pytest.approx(J)


def test_solve_dumps_and_densities(tmp_path):
    cfg = dict(SMALL, k=2, dump_vectors=True, densities=[["Q"], ["q_y", "Q"]])
    code, out = run(tmp_path, "solve", cfg)
    assert code == 0
    assert np.load(out / "state_0.npy").shape == (21, 11, 5)
    rho = np.loadtxt(out / "density_0_Q.tsv")
    assert rho.shape == (11, 2)
    assert np.sum(rho[:, 1]) * 0.6 == pytest.approx(1.0, abs=1e-10)
    assert (out / "density_1_q_y-Q.tsv").exists()


def test_missing_pes_source_names_field(tmp_path, capsys):
    code, out = run(tmp_path, "solve", {"k": 2})
    assert code == 2
    err = error_line(capsys)
    assert err["field"] == "pes" and err["exit_code"] == 2


def test_unknown_key_rejected(tmp_path, capsys):
    code, _ = run(tmp_path, "solve", dict(SMALL, bogus=1))
    assert code == 2
    assert error_line(capsys)["field"] == "bogus"


@pytest.mark.parametrize(
    "override",
    [
        {"stencil_order": 3},
        {"tol": -1},
        {"mass": "unobtainium"},
        {"refine": [0, 1, 1]},
        {"k": 1.5},
        {"model": {"nope": 1}},
        {"model_grid": {"q_w": [3, 0, 1]}},
    ],
)
def test_invalid_values_are_config_errors(tmp_path, capsys, override):
    code, _ = run(tmp_path, "solve", {**SMALL, **override})
    assert code == 2
    field = error_line(capsys)["field"]
    assert field.split(".")[0] == next(iter(override))


def test_set_and_seed_overrides(tmp_path):
    code, out = run(tmp_path, "solve", SMALL, "--set", "k=2", "--seed", "7", "--set", 'mass="D"')
    assert code == 0
    rec = json.loads((out / "run.json").read_text())
    assert rec["config"]["k"] == 2 and rec["seed"] == 7
    assert rec["config"]["mass"] == pytest.approx(2.01410177812)
    assert len(np.loadtxt(out / "spectrum.tsv")) == 2


def test_bad_json_and_missing_config(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["solve", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    capsys.readouterr()
    assert cli.main(["solve", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path / "o")]) == 4


def test_lpa_separable_and_coupled(tmp_path):
    sep = dict(SMALL, model={"g_Q": 0.0, "g_T": 0.0}, w_max=3, v_max=1)
    code, out = run(tmp_path, "lpa", sep)
    assert code == 0
    eps = (out / "epsilon.tsv").read_text().splitlines()
    assert eps[0] == "# state\tv\tw\tepsilon"
    ground = eps[1].split("\t")
    assert ground[:3] == ["ground", "0", "0"] and float(ground[3]) < 1e-6
    split = dict(line.split("\t") for line in (out / "splittings.tsv").read_text().splitlines()[1:])
    assert float(split["LPA"]) == pytest.approx(float(split["LRBO"]), rel=1e-8)
    assert (out / "surfaces.tsv").exists()

    code, out = run(tmp_path, "lpa", SMALL, name="coupled")
    assert code == 0
    res = json.loads((out / "run.json").read_text())["results"]
    assert np.isfinite(res["J_LPA_meV"]) and np.isfinite(res["J_LRBO_meV"])
    assert res["J_LPA_meV"] > 0 and res["J_LRBO_meV"] > 0


def test_malformed_pes_is_parse_error(tmp_path, capsys):
    bad = tmp_path / "bad.pes"
    bad.write_text("this is not a PES file\n")
    code, _ = run(tmp_path, "lpa", {"pes": str(bad)})
    assert code == 4
    assert error_line(capsys)["error"] == "io"


def test_sweep_three_masses(tmp_path):
    code, out = run(tmp_path, "sweep-mass", dict(SMALL, masses=["muon", "H", "D"]))
    assert code == 0
    rows = np.loadtxt(out / "sweep.tsv")
    assert rows.shape == (3, 2)
    assert np.all(np.diff(rows[:, 1]) < 0)
    code, _ = run(tmp_path, "sweep-mass", dict(SMALL, masses=["D", "H"]), name="bad")
    assert code == 2


def test_converge(tmp_path):
    cfg = {"model": {}, "axes": ["q_y"], "model_grid": {"q_y": [21, -1.2, 1.2]}, "refine_sequence": [1, 2, 4]}
    code, out = run(tmp_path, "converge", cfg)
    assert code == 0
    table = (out / "convergence.tsv").read_text().splitlines()
    assert table[0] == "# refine\tJ_meV\tdJ_meV" and len(table) == 4
    res = json.loads((out / "run.json").read_text())["results"]
    assert res["richardson_meV"] > 0


def test_energetics_report(tmp_path):
    code, out = run(tmp_path, "energetics", {"delta": 54, "E_c": 12.5, "J_sym": 46})
    assert code == 0
    rows = dict(line.split("\t") for line in (out / "energetics.tsv").read_text().splitlines()[1:])
    assert float(rows["J_critical"]) == pytest.approx(35.8, abs=0.05)
    assert float(rows["symmetric_favored"]) == 1.0
    code, _ = run(tmp_path, "energetics", {"delta": 54}, name="missing")
    assert code == 2


def test_energetics_fixed_lattice(tmp_path):
    cfg = dict(SMALL, delta=54, E_c=12.5, lattice_points=[{"Q": 0.0, "T": 0.0}, {"Q": 1.0, "T": 0.5}])
    code, out = run(tmp_path, "energetics", cfg, "--threads", "2")
    assert code == 0
    data = (out / "fixed_lattice.tsv").read_text().splitlines()
    assert data[0] == "# index\tpoint\tdE_meV" and len(data) == 3
    assert float(data[1].split("\t")[-1]) == 0.0


def test_relax_model(tmp_path):
    code, out = run(tmp_path, "relax", {})
    assert code == 0
    for f in ("relaxed.xyz", "images.tsv", "relax_history.tsv", "stress.tsv", "stationarity.tsv"):
        assert (out / f).exists()
    res = json.loads((out / "run.json").read_text())["results"]
    assert res["converged"] and res["stationarity_passed"]


def test_relax_non_convergence_exit_3(tmp_path, capsys):
    code, out = run(tmp_path, "relax", {"max_steps": 1, "force_tol": 1e-12})
    assert code == 3
    assert error_line(capsys)["error"] == "convergence"
    assert (out / "relaxed.xyz").exists()
    assert json.loads((out / "run.json").read_text())["status"] == "error"


def _write_structures(tmp_path, degenerate=False):
    calc = ModelCalculator.default()
    base = calc.reference_structure()
    shift = np.zeros((4, 3))
    shift[0, 1] = 0.1
    shift[1, 1] = 0.1
    R_l = base.with_positions(base.positions - shift)
    R_r = R_l if degenerate else base.with_positions(base.positions + shift)
    R_ts = base.with_positions(base.positions + [[0, 0, 0], [0, 0, 0], [0.05, 0, 0], [-0.05, 0, 0]])
    R_ad = base.with_positions(base.positions + 0.5 * shift + [[0, 0, 0], [0, 0, 0], [0.03, 0, 0], [-0.03, 0, 0]])
    paths = {}
    for name, s in (("left", R_l), ("right", R_r), ("ts", R_ts), ("adiabatic", R_ad)):
        paths[name] = str(write_xyz(s, tmp_path / f"{name}.xyz"))
    return paths


def test_modes_and_projection(tmp_path):
    code, out = run(tmp_path, "modes", _write_structures(tmp_path))
    assert code == 0
    assert len(np.genfromtxt(out / "modes.tsv", dtype=None, encoding=None)) == 12
    res = json.loads((out / "run.json").read_text())["results"]
    assert res["c_Q2"] + res["c_T2"] + res["c_R2"] == pytest.approx(1.0, abs=1e-12)


def test_modes_degenerate_basis_error(tmp_path, capsys):
    code, _ = run(tmp_path, "modes", _write_structures(tmp_path, degenerate=True))
    assert code == 2
    assert "zero length" in error_line(capsys)["message"]


def test_model_gen_and_convert_round_trip(tmp_path):
    cfg = {"axes": ["q_y", "Q"], "model_grid": {"q_y": [9, -1, 1], "Q": [5, -3, 3]}}
    code, out = run(tmp_path, "model-gen", cfg)
    assert code == 0
    text = load_pes(out / "model.pes")
    code, conv = run(tmp_path, "convert", {"input": str(out / "model.pes"), "output": "m.pesb", "format": "binary"}, name="conv")
    assert code == 0
    binary = load_pes(conv / "m.pesb")
    np.testing.assert_array_equal(binary.values, text.values)
    assert binary.grid == text.grid and binary.meta == text.meta
    code, back = run(tmp_path, "convert", {"input": str(conv / "m.pesb"), "output": "m.pes", "format": "text"}, name="back")
    assert (back / "m.pes").read_bytes() == (out / "model.pes").read_bytes()


def test_solve_from_pes_file(tmp_path):
    cfg = {"axes": ["q_y", "Q"], "model_grid": {"q_y": [21, -1, 1], "Q": [11, -3, 3]}}
    run(tmp_path, "model-gen", cfg, name="gen")
    code, a = run(tmp_path, "solve", {"pes": str(tmp_path / "gen" / "model.pes"), "k": 2}, name="file")
    code2, b = run(tmp_path, "solve", dict(cfg, model={}, k=2), name="direct")
    assert code == code2 == 0
    assert (a / "splitting.txt").read_text() == (b / "splitting.txt").read_text()


def test_console_script(tmp_path):
    exe = shutil.which("latticetunnel")
    cmd = [exe] if exe else [sys.executable, "-m", "latticetunnel.cli"]
    cfg = tmp_path / "e.json"
    cfg.write_text(json.dumps({"delta": 54, "E_c": 12.5}))
    proc = subprocess.run(cmd + ["energetics", "--config", str(cfg), "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run(cmd + ["energetics", "--out", str(tmp_path / "o2")], capture_output=True, text=True)
    assert proc.returncode == 2
    assert json.loads(proc.stderr.strip())["field"] == "delta"
