"""Command-line front end: ``latticetunnel <command> --config run.json --out DIR``.

Every command reads one JSON object, rejects unknown keys, validates all
values before computing, writes its data files into ``--out`` and a
``run.json`` provenance record. Errors go to stderr as one JSON line.

Exit codes: 0 success, 2 invalid configuration or input, 3 numerical
non-convergence, 4 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from dataclasses import fields
from pathlib import Path
from typing import Any, Callable

import numpy as np
import scipy

from latticetunnel import __version__, coincidence, energetics, lpa, lrbo, modes
from latticetunnel.constants import HBAR2, MASS_D, MASS_H, MASS_MUON, resolve_mass
from latticetunnel.eigen import DEFAULT_TOL, ConvergenceError
from latticetunnel.grid import AxisSpec, GridError, GridSpec
from latticetunnel.pes import (
    DEFAULT_PARAMS,
    DEFAULT_REFINE,
    DEFAULT_SAMPLE_AXES,
    ModelParams,
    PesFormatError,
    PesSample,
    load_pes,
    model_pes,
    save_pes,
)

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("latticetunnel")


class ConfigError(ValueError):
    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class NotConvergedError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# config schema


def _num(positive=False, nonneg=False, integer=False):
    def check(v, key):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{key} must be a number", key)
        if integer and int(v) != v:
            raise ConfigError(f"{key} must be an integer", key)
        if positive and not v > 0:
            raise ConfigError(f"{key} must be positive", key)
        if nonneg and v < 0:
            raise ConfigError(f"{key} must be non-negative", key)
        if not np.isfinite(v):
            raise ConfigError(f"{key} must be finite", key)
        return int(v) if integer else float(v)

    return check


def _opt(check):
    def wrapped(v, key):
        return None if v is None else check(v, key)

    return wrapped


def _str(v, key):
    if not isinstance(v, str) or not v:
        raise ConfigError(f"{key} must be a non-empty string", key)
    return v


def _bool(v, key):
    if not isinstance(v, bool):
        raise ConfigError(f"{key} must be true or false", key)
    return v


def _mass(v, key):
    try:
        return resolve_mass(v)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: {exc}", key) from None


def _masses(v, key):
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{key} must be a non-empty list", key)
    out = [_mass(m, key) for m in v]
    if any(b <= a for a, b in zip(out, out[1:])):
        raise ConfigError(f"{key} must be strictly ascending", key)
    return out


def _stencil(v, key):
    if v not in (2, 4):
        raise ConfigError(f"{key} must be 2 or 4", key)
    return int(v)


def _refine(v, key):
    if v is None:
        return None
    if isinstance(v, int) and not isinstance(v, bool):
        if v < 1:
            raise ConfigError(f"{key} factors must be >= 1", key)
        return v
    if isinstance(v, list):
        if not all(isinstance(f, int) and not isinstance(f, bool) and f >= 1 for f in v):
            raise ConfigError(f"{key} factors must be integers >= 1", key)
        return v
    if isinstance(v, dict):
        for name, f in v.items():
            if not isinstance(f, int) or isinstance(f, bool) or f < 1:
                raise ConfigError(f"{key}.{name} must be an integer >= 1", key)
        return v
    raise ConfigError(f"{key} must be an integer, a list or an object", key)


def _model(v, key):
    if v is None:
        return None
    if v is True:
        return {}
    if not isinstance(v, dict):
        raise ConfigError(f"{key} must be an object of model parameters (or true)", key)
    allowed = {f.name for f in fields(ModelParams)}
    for name, val in v.items():
        if name not in allowed:
            raise ConfigError(f"unknown model parameter {name!r}; allowed: {sorted(allowed)}", f"{key}.{name}")
        _num()(val, f"{key}.{name}")
    return v


def _model_grid(v, key):
    if v is None:
        return None
    if not isinstance(v, dict):
        raise ConfigError(f"{key} must map axis names to [count, min, max]", key)
    known = {a[0] for a in DEFAULT_SAMPLE_AXES}
    for name, spec in v.items():
        if name not in known:
            raise ConfigError(f"unknown axis {name!r} in {key}", f"{key}.{name}")
        if not isinstance(spec, list) or len(spec) != 3:
            raise ConfigError(f"{key}.{name} must be [count, min, max]", f"{key}.{name}")
        _num(integer=True, positive=True)(spec[0], f"{key}.{name}")
        _num()(spec[1], f"{key}.{name}")
        _num()(spec[2], f"{key}.{name}")
    return v


def _axes(v, key):
    if v is None:
        return None
    known = [a[0] for a in DEFAULT_SAMPLE_AXES]
    if not isinstance(v, list) or not v or any(a not in known for a in v):
        raise ConfigError(f"{key} must be a list drawn from {known}", key)
    return v


def _point_list(v, key):
    if v is None:
        return None
    if not isinstance(v, list) or not all(isinstance(p, dict) for p in v):
        raise ConfigError(f"{key} must be a list of {{axis: value}} objects", key)
    for p in v:
        for name, val in p.items():
            _num()(val, f"{key}.{name}")
    return v


def _refine_list(v, key):
    if not isinstance(v, list) or len(v) < 2:
        raise ConfigError(f"{key} must list at least two refinement levels", key)
    return [_refine(r, key) for r in v]


def _vec3_list(v, key):
    if v is None:
        return None
    arr = np.asarray(v, dtype=float) if isinstance(v, list) else None
    if arr is None or arr.shape != (2, 3) or not np.all(np.isfinite(arr)):
        raise ConfigError(f"{key} must be two [x, y, z] triples", key)
    return arr.tolist()


def _densities(v, key):
    if v is None:
        return []
    if not isinstance(v, list) or not all(isinstance(a, list) and a for a in v):
        raise ConfigError(f"{key} must be a list of axis lists", key)
    return v


def _calculator(v, key):
    if v == "model":
        return v
    if isinstance(v, dict) and set(v) <= {"command", "stress", "timeout"} and "command" in v:
        _str(v["command"], f"{key}.command")
        return v
    raise ConfigError(f'{key} must be "model" or {{"command": ..., "stress": bool}}', key)


def _format(v, key):
    if v not in (None, "text", "binary"):
        raise ConfigError(f'{key} must be "text" or "binary"', key)
    return v


def _unit_interval(v, key):
    v = _num()(v, key)
    if not 0.0 <= v <= 1.0:
        raise ConfigError(f"{key} must lie in [0, 1]", key)
    return v


PES_KEYS = {
    "pes": (_opt(_str), None),
    "model": (_model, None),
    "model_grid": (_model_grid, None),
    "axes": (_axes, None),
    "reference_mass": (_mass, MASS_H),
}
SOLVER_KEYS = {
    "refine": (_refine, None),
    "stencil_order": (_stencil, 2),
    "tol": (_num(positive=True), DEFAULT_TOL),
    "seed": (_num(integer=True, nonneg=True), 0),
}

SCHEMAS: dict[str, dict[str, tuple[Callable, Any]]] = {
    "solve": {
        **PES_KEYS,
        **SOLVER_KEYS,
        "mass": (_mass, MASS_H),
        "k": (_num(integer=True, positive=True), 4),
        "dump_vectors": (_bool, False),
        "densities": (_densities, []),
    },
    "lpa": {
        **PES_KEYS,
        **SOLVER_KEYS,
        "mass": (_mass, MASS_H),
        "v_max": (_num(integer=True, nonneg=True), 2),
        "w_max": (_num(integer=True, positive=True), 4),
        "compare_lrbo": (_bool, True),
    },
    "sweep-mass": {
        **PES_KEYS,
        **SOLVER_KEYS,
        "masses": (_masses, None),
        "k": (_num(integer=True, positive=True), 2),
    },
    "converge": {
        **PES_KEYS,
        **SOLVER_KEYS,
        "mass": (_mass, MASS_H),
        "refine_sequence": (_refine_list, None),
        "convergence_tol": (_num(positive=True), 1e-3),
        "k": (_num(integer=True, positive=True), 2),
    },
    "energetics": {
        **PES_KEYS,
        **SOLVER_KEYS,
        "delta": (_num(), None),
        "E_c": (_num(nonneg=True), None),
        "J_sym": (_opt(_num(nonneg=True)), None),
        "J_local": (_opt(_num(nonneg=True)), None),
        "mass": (_mass, MASS_H),
        "lattice_points": (_point_list, None),
    },
    "relax": {
        "calculator": (_calculator, "model"),
        "structure": (_opt(_str), None),
        "images": (_vec3_list, None),
        "p2": (_unit_interval, 0.5),
        "force_tol": (_num(positive=True), coincidence.DEFAULT_FORCE_TOL),
        "pos_tol": (_num(positive=True), coincidence.DEFAULT_POS_TOL),
        "max_steps": (_num(integer=True, positive=True), 500),
        "seed": (_num(integer=True, nonneg=True), 0),
    },
    "modes": {
        "left": (_str, None),
        "right": (_str, None),
        "ts": (_str, None),
        "adiabatic": (_opt(_str), None),
        "seed": (_num(integer=True, nonneg=True), 0),
    },
    "model-gen": {
        "model": (_model, {}),
        "model_grid": (_model_grid, None),
        "axes": (_axes, None),
        "reference_mass": (_mass, MASS_H),
        "format": (_format, "text"),
        "filename": (_opt(_str), None),
        "seed": (_num(integer=True, nonneg=True), 0),
    },
    "convert": {
        "input": (_str, None),
        "output": (_str, None),
        "format": (_format, None),
        "seed": (_num(integer=True, nonneg=True), 0),
    },
}
REQUIRED = {
    "sweep-mass": (),
    "converge": ("refine_sequence",),
    "energetics": ("delta", "E_c"),
    "modes": ("left", "right", "ts"),
    "convert": ("input", "output"),
}
NEEDS_PES = {"solve", "lpa", "sweep-mass", "converge"}


def validate_config(command: str, raw: dict) -> dict:
    """Check every key against the command schema and fill defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    schema = SCHEMAS[command]
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown key(s) for {command}: {', '.join(unknown)}", unknown[0])
    for key in REQUIRED.get(command, ()):
        if raw.get(key) is None:
            raise ConfigError(f"missing required key {key!r}", key)
    cfg = {}
    for key, (check, default) in schema.items():
        cfg[key] = check(raw[key], key) if key in raw else default
    if command in NEEDS_PES:
        if cfg["pes"] is None and cfg["model"] is None:
            raise ConfigError("no PES source: set 'pes' to a file or 'model' to parameters", "pes")
        if cfg["pes"] is not None and cfg["model"] is not None:
            raise ConfigError("set only one of 'pes' and 'model'", "pes")
    if command == "energetics" and cfg["lattice_points"] and cfg["pes"] is None and cfg["model"] is None:
        raise ConfigError("lattice_points needs a PES source ('pes' or 'model')", "pes")
    return cfg


# ---------------------------------------------------------------------------
# helpers


def _model_sample(cfg) -> PesSample:
    params = ModelParams(**{**vars(DEFAULT_PARAMS), **(cfg["model"] or {})})
    axes = {a[0]: a for a in DEFAULT_SAMPLE_AXES}
    for name, (count, lo, hi) in (cfg.get("model_grid") or {}).items():
        axes[name] = (name, int(count), float(lo), float(hi))
    names = cfg.get("axes") or [a[0] for a in DEFAULT_SAMPLE_AXES]
    grid = GridSpec(tuple(AxisSpec(*axes[n]) for n in names))
    return model_pes(params, grid, cfg.get("reference_mass", MASS_H))


def load_source(cfg) -> PesSample:
    if cfg.get("pes"):
        return load_pes(cfg["pes"])
    return _model_sample(cfg)


def _refine_for(cfg, pes: PesSample):
    """Configured refinement, or the default one when the PES is the full default model grid."""
    if cfg.get("refine") is not None:
        return cfg["refine"]
    if cfg.get("pes") is None and not cfg.get("axes"):
        return list(DEFAULT_REFINE)
    return None


def _write_lines(path: Path, header: str, rows) -> Path:
    path.write_text("\n".join([header] + ["\t".join(map(str, r)) for r in rows]) + "\n")
    return path


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# commands; each returns (outputs, results)


def cmd_solve(cfg, out: Path, workers: int):
    pes = load_source(cfg)
    refine = _refine_for(cfg, pes)
    sol = lrbo.solve_lrbo(pes, refine, cfg["mass"], cfg["k"], cfg["stencil_order"], cfg["tol"], cfg["seed"])
    outputs = [
        _write_lines(
            out / "spectrum.tsv", "# index\tE_meV", [(i, _fmt(e)) for i, e in enumerate(sol.energies)]
        )
    ]
    J = lrbo.tunnel_splitting(sol) if len(sol.energies) > 1 else float("nan")
    (out / "splitting.txt").write_text(_fmt(J) + "\n")
    outputs.append(out / "splitting.txt")
    if cfg["dump_vectors"]:
        for i in range(len(sol.energies)):
            p = out / f"state_{i}.npy"
            np.save(p, sol.state(i).amplitudes)
            outputs.append(p)
    for keep in cfg["densities"]:
        bad = [a for a in keep if a not in sol.grid.names]
        if bad:
            raise ConfigError(f"densities: axes {bad} not in the solve grid {sol.grid.names}", "densities")
        for i in range(min(2, len(sol.energies))):
            rho = lrbo.reduced_density(sol.state(i), keep)
            mesh = [m.reshape(-1) for m in rho.grid.mesh()]
            rows = [
                tuple(_fmt(m[j]) for m in mesh) + (_fmt(rho.values.reshape(-1)[j]),)
                for j in range(rho.values.size)
            ]
            p = out / f"density_{i}_{'-'.join(keep)}.tsv"
            outputs.append(_write_lines(p, "# " + "\t".join(keep) + "\trho", rows))
    results = {
        "splitting_meV": J,
        "energies_meV": sol.energies.tolist(),
        "solve_grid": list(sol.grid.shape),
        **sol.provenance,
    }
    return outputs, results


def cmd_lpa(cfg, out: Path, workers: int):
    pes = load_source(cfg)
    refine = _refine_for(cfg, pes)
    potential = lrbo.prepare_potential(pes, refine)
    sol = lpa.solve_lpa(
        pes,
        refine,
        cfg["mass"],
        cfg["v_max"],
        cfg["w_max"],
        cfg["stencil_order"],
        cfg["tol"],
        cfg["seed"],
        workers=workers,
        potential=potential,
    )
    outputs = [sol.surface.write_tsv(out / "surfaces.tsv")]
    J_lpa = sol.splitting
    J_v0 = lpa.lpa_tunnel_splitting(sol, surface=0)
    rows = [("LPA", _fmt(J_lpa)), ("LPA_v0_doublet", _fmt(J_v0))]
    results = {
        "J_LPA_meV": J_lpa,
        "J_LPA_v0_doublet_meV": J_v0,
        "excited_pair": list(sol.pair(1)),
        "discontinuities": len(sol.surface.discontinuities),
    }
    eps_rows = []
    if cfg["compare_lrbo"]:
        full = lrbo.solve_lrbo(
            pes, refine, cfg["mass"], 2, cfg["stencil_order"], cfg["tol"], cfg["seed"], potential=potential
        )
        rows.append(("LRBO", _fmt(full.splitting)))
        results["J_LRBO_meV"] = full.splitting
        for i, state in enumerate(("ground", "first_excited")):
            v, w = sol.pair(i)
            eps = sol.epsilon(full.state(i), v, w)
            eps_rows.append((state, v, w, _fmt(eps)))
            results[f"epsilon_{state}"] = eps
    outputs.append(_write_lines(out / "epsilon.tsv", "# state\tv\tw\tepsilon", eps_rows))
    outputs.append(_write_lines(out / "splittings.tsv", "# method\tJ_meV", rows))
    return outputs, results


def cmd_sweep(cfg, out: Path, workers: int):
    pes = load_source(cfg)
    masses = cfg["masses"] or lrbo.default_sweep_masses()
    rows = lrbo.mass_sweep(
        pes, masses, _refine_for(cfg, pes), cfg["k"], cfg["stencil_order"], cfg["tol"], cfg["seed"], workers
    )
    path = lrbo.write_sweep_tsv(rows, out / "sweep.tsv")
    return [path], {"rows": [[m, J] for m, J in rows]}


def cmd_converge(cfg, out: Path, workers: int):
    pes = load_source(cfg)
    table = lrbo.converge_splitting(
        pes,
        cfg["mass"],
        cfg["refine_sequence"],
        cfg["k"],
        cfg["stencil_order"],
        cfg["tol"],
        cfg["convergence_tol"],
        cfg["seed"],
    )
    path = lrbo.write_convergence_tsv(table, out / "convergence.tsv")
    extrap = lrbo.richardson(table.splittings.tolist())
    return [path], {"converged": table.converged, "richardson_meV": extrap}


def cmd_energetics(cfg, out: Path, workers: int):
    rows = energetics.balance_report(cfg["delta"], cfg["E_c"], cfg["J_sym"], cfg["J_local"])
    outputs = [energetics.write_report(rows, out / "energetics.tsv")]
    results = {k: v for k, v in rows}
    if cfg["lattice_points"]:
        pes = load_source(cfg)
        diffs = energetics.fixed_lattice_energy_diffs(
            pes, cfg["lattice_points"], cfg["mass"], cfg["refine"], cfg["stencil_order"], cfg["tol"], cfg["seed"],
            workers,
        )
        prow = [
            (i, json.dumps(p, sort_keys=True), _fmt(d)) for i, (p, d) in enumerate(zip(cfg["lattice_points"], diffs))
        ]
        outputs.append(_write_lines(out / "fixed_lattice.tsv", "# index\tpoint\tdE_meV", prow))
        results["fixed_lattice_dE_meV"] = diffs
    return outputs, results


def _calculator(cfg):
    c = cfg["calculator"]
    if c == "model":
        return coincidence.ModelCalculator.default()
    return coincidence.SubprocessCalculator(c["command"], bool(c.get("stress", False)), c.get("timeout"))


def cmd_relax(cfg, out: Path, workers: int):
    calc = _calculator(cfg)
    if cfg["structure"]:
        lattice = modes.read_xyz(cfg["structure"])
    elif isinstance(calc, coincidence.ModelCalculator):
        lattice = calc.reference_structure()
    else:
        raise ConfigError("'structure' is required with an external calculator", "structure")
    if cfg["images"] is not None:
        images = np.array(cfg["images"])
    elif isinstance(calc, coincidence.ModelCalculator):
        images = calc.symmetric_minimizer()[1]
    else:
        raise ConfigError("'images' is required with an external calculator", "images")
    state = coincidence.CoincidenceState(lattice, images, cfg["p2"])
    state = coincidence.relax_coincidence(
        calc, state, cfg["force_tol"], cfg["max_steps"], cfg["pos_tol"], workers=workers
    )
    outputs = coincidence.write_state(state, out)
    results = {
        "converged": state.converged,
        "steps": state.steps,
        "max_force_meV_per_A": state.max_force,
        "image_drift_A": state.image_drift,
        "message": state.message,
    }
    if "stress" in calc.capabilities:
        s = coincidence.averaged_stress(calc, state.lattice, state.images, state.weights)
        outputs.append(
            _write_lines(
                out / "stress.tsv",
                "# component\tstress_meV_per_A3",
                [(n, _fmt(v)) for n, v in zip(("xx", "yy", "zz", "yz", "xz", "xy"), s)],
            )
        )
    if abs(cfg["p2"] - 0.5) < 1e-12:
        rep = coincidence.lagrangian_stationarity(state, calc, cfg["force_tol"])
        outputs.append(
            _write_lines(out / "stationarity.tsv", "# label\tvalue", [(k, _fmt(v)) for k, v in rep.rows()])
        )
        results["stationarity_passed"] = rep.passed
    if not state.converged:
        # outputs stay on disk for diagnosis
        raise NotConvergedError(state.message)
    return outputs, results


def cmd_modes(cfg, out: Path, workers: int):
    R_l, R_r, R_ts = (modes.read_xyz(cfg[k]) for k in ("left", "right", "ts"))
    basis = modes.build_mode_basis(R_l, R_r, R_ts)
    rows = []
    for n, label in enumerate(basis.labels):
        for a, comp in enumerate("xyz"):
            rows.append((n, label, comp, _fmt(basis.Q_vec[3 * n + a]), _fmt(basis.T_vec[3 * n + a])))
    outputs = [_write_lines(out / "modes.tsv", "# atom\tlabel\tcomp\tQ\tT", rows)]
    results = {"Q_lr": basis.Q_lr, "T_st": basis.T_st, "QdotT": float(basis.Q_hat @ basis.T_hat)}
    if cfg["adiabatic"]:
        R_ad = modes.read_xyz(cfg["adiabatic"])
        proj = modes.project_displacement(modes.displacement(R_ad, R_l), basis)
        outputs.append(modes.write_projection_tsv(proj, basis, out / "projection.tsv"))
        results.update({"c_Q2": proj.c_Q2, "c_T2": proj.c_T2, "c_R2": proj.c_R2})
    return outputs, results


def cmd_model_gen(cfg, out: Path, workers: int):
    sample = _model_sample(cfg)
    fmt = cfg["format"]
    name = cfg["filename"] or ("model.pesb" if fmt == "binary" else "model.pes")
    path = save_pes(sample, out / name, fmt)
    return [path], {"grid": list(sample.grid.shape), "energy_reference_meV": sample.energy_reference}


def cmd_convert(cfg, out: Path, workers: int):
    sample = load_pes(cfg["input"])
    dest = Path(cfg["output"])
    if not dest.is_absolute():
        dest = out / dest
    path = save_pes(sample, dest, cfg["format"])
    return [path], {"grid": list(sample.grid.shape)}


COMMANDS = {
    "solve": cmd_solve,
    "lpa": cmd_lpa,
    "sweep-mass": cmd_sweep,
    "converge": cmd_converge,
    "energetics": cmd_energetics,
    "relax": cmd_relax,
    "modes": cmd_modes,
    "model-gen": cmd_model_gen,
    "convert": cmd_convert,
}


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latticetunnel", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON configuration file")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker threads (0 = all cores)")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=JSON",
            help="override one config key, value parsed as JSON",
        )
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _emit_error(kind: str, message: str, field: str | None = None, code: int = EXIT_CONFIG) -> int:
    rec = {"error": kind, "exit_code": code, "message": " ".join(str(message).split())}
    if field is not None:
        rec["field"] = field
    print(json.dumps(rec, sort_keys=True), file=sys.stderr)
    return code


def _provenance(command, cfg, outputs, results, wall, status):
    return {
        "command": command,
        "status": status,
        "seed": cfg.get("seed"),
        "config": cfg,
        "constants": {
            "hbar2_meV_amu_A2": HBAR2,
            "mass_muon_amu": MASS_MUON,
            "mass_H_amu": MASS_H,
            "mass_D_amu": MASS_D,
        },
        "versions": {
            "latticetunnel": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "outputs": sorted(str(Path(p).name) for p in outputs),
        "results": results,
        "wall_time_s": wall,
    }


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    return str(o)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    command = args.command
    try:
        raw = {}
        if args.config is not None:
            raw = json.loads(args.config.read_text())
        for item in args.set:
            key, sep, val = item.partition("=")
            if not sep:
                raise ConfigError(f"--set expects KEY=JSON, got {item!r}", "--set")
            try:
                raw[key] = json.loads(val)
            except json.JSONDecodeError:
                raw[key] = val
        if args.seed is not None:
            raw["seed"] = args.seed
        if args.threads < 0:
            raise ConfigError("--threads must be >= 0", "--threads")
        cfg = validate_config(command, raw)
    except ConfigError as exc:
        return _emit_error("config", exc, exc.field)
    except json.JSONDecodeError as exc:
        return _emit_error("config", f"invalid JSON in {args.config}: {exc}", "--config")
    except OSError as exc:
        return _emit_error("io", exc, "--config", EXIT_IO)

    workers = args.threads or (os.cpu_count() or 1)
    out = args.out
    start = time.perf_counter()
    outputs, results, status, code = [], {}, "ok", EXIT_OK
    try:
        out.mkdir(parents=True, exist_ok=True)
        outputs, results = COMMANDS[command](cfg, out, workers)
    except ConfigError as exc:
        code = _emit_error("config", exc, exc.field)
    except (PesFormatError, coincidence.CalculatorError) as exc:
        code = _emit_error("io", exc, None, EXIT_IO)
    except OSError as exc:
        code = _emit_error("io", exc, None, EXIT_IO)
    except (ConvergenceError, NotConvergedError, coincidence.ImageSearchError) as exc:
        code = _emit_error("convergence", exc, None, EXIT_CONVERGENCE)
    except (modes.ModeError, GridError, ValueError) as exc:
        code = _emit_error("input", exc, None, EXIT_CONFIG)
    if code != EXIT_OK:
        status = "error"
    wall = time.perf_counter() - start
    try:
        rec = _provenance(command, cfg, outputs, results, wall, status)
        (out / "run.json").write_text(json.dumps(rec, indent=2, sort_keys=True, default=_json_default) + "\n")
    except OSError as exc:
        if code == EXIT_OK:
            code = _emit_error("io", exc, None, EXIT_IO)
    return code


if __name__ == "__main__":
    sys.exit(main())
