"""Sampled potential-energy surfaces: storage, model generation, interpolation.

Two on-disk encodings share one logical schema (``PESv1``):

text::

    #PESv1 text
    ndim <k>
    axis <name> <count> <min> <max>      (k lines)
    units energy=meV coord=sqrtamu_angstrom
    meta <key> <value>                   (optional, any number)
    values
    <floats, row-major, last axis fastest>

binary: ``PESB`` magic, u16 version = 1, then little-endian u32 ndim; per
axis a u8-length UTF-8 name, u32 count, f64 min, f64 max; u32 metadata pair
count with u32-length-prefixed UTF-8 key and value; then the f64 values.
"""

from __future__ import annotations

import logging
import math
import struct
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.interpolate import CubicSpline

from latticetunnel.constants import KNOWN_AXES, MASS_H
from latticetunnel.grid import AxisSpec, GridSpec

log = logging.getLogger(__name__)

TEXT_MAGIC = "#PESv1 text"
BINARY_MAGIC = b"PESB"
VERSION = 1
UNITS_LINE = "units energy=meV coord=sqrtamu_angstrom"


class PesFormatError(ValueError):
    """Malformed PES file. ``line`` is 1-based for text input when known."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


class InterpolationWarning(UserWarning):
    pass


def _check_meta(meta: Mapping[str, str]) -> dict[str, str]:
    out = {}
    for k, v in meta.items():
        k, v = str(k), str(v)
        if not k or any(c.isspace() for c in k):
            raise ValueError(f"metadata key must be non-empty without whitespace: {k!r}")
        if "\n" in v or "\r" in v:
            raise ValueError(f"metadata value for {k!r} contains a newline")
        out[k] = v
    return out


@dataclass(frozen=True)
class PesSample:
    """Potential energy (meV) at every node of a sample grid."""

    grid: GridSpec
    values: np.ndarray
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if values.size != self.grid.size:
            raise ValueError(f"{values.size} values for a grid of {self.grid.size} points")
        if not np.all(np.isfinite(values)):
            raise ValueError("PES values must be finite")
        values = values.reshape(self.grid.shape)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "meta", _check_meta(self.meta))

    @property
    def energy_reference(self) -> float:
        return float(self.values.min())

    @property
    def reference_mass(self) -> float:
        return float(self.meta.get("reference_mass_amu", MASS_H))

    def shifted(self, constant: float) -> PesSample:
        return replace(self, values=self.values + constant)


@dataclass(frozen=True)
class PotentialField:
    """Potential interpolated onto a solve grid."""

    grid: GridSpec
    values: np.ndarray
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).reshape(self.grid.shape)
        if not np.all(np.isfinite(values)):
            raise ValueError("potential values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_sample(cls, sample: PesSample) -> PotentialField:
        return cls(sample.grid, sample.values)


# ---------------------------------------------------------------------------
# Interpolation


def _interp_axis(x_old, y, x_new, axis):
    n = len(x_old)
    if n >= 4:
        return CubicSpline(x_old, y, axis=axis, bc_type="not-a-knot")(x_new), None
    if n == 3:
        # not-a-knot on three nodes is the interpolating parabola
        return CubicSpline(x_old, y, axis=axis, bc_type="not-a-knot")(x_new), "quadratic"
    yl = np.moveaxis(y, axis, -1)
    t = (x_new - x_old[0]) / (x_old[1] - x_old[0])
    out = yl[..., :1] * (1 - t) + yl[..., 1:] * t
    return np.moveaxis(out, -1, axis), "linear"


def interpolate(sample: PesSample, solve: GridSpec) -> PotentialField:
    """Map a sampled PES onto a solve grid by tensor-product cubic splines.

    Not-a-knot end conditions are used along every axis, so cubic data is
    reproduced exactly. Axes with fewer than four sample nodes fall back to
    quadratic (3 nodes) or linear (2 nodes) interpolation; the fallback is
    recorded in ``PotentialField.notes`` and emitted as a warning.
    """
    if solve.names != sample.grid.names:
        raise ValueError(f"solve axes {solve.names} do not match sample axes {sample.grid.names}")
    if not sample.grid.contains(solve):
        raise ValueError("solve grid exceeds the sample extent")
    y = np.asarray(sample.values)
    notes = []
    for i, (src, dst) in enumerate(zip(sample.grid.axes, solve.axes)):
        x_old = src.points()
        x_new = np.clip(dst.points(), src.min, src.max)
        if src.count == dst.count and np.array_equal(x_old, x_new):
            continue
        y, fallback = _interp_axis(x_old, y, x_new, i)
        if fallback:
            msg = f"axis {src.name}: {src.count} sample nodes, using {fallback} interpolation"
            notes.append(msg)
            warnings.warn(msg, InterpolationWarning, stacklevel=2)
    return PotentialField(solve, y, tuple(notes))


# ---------------------------------------------------------------------------
# Model potential

MODEL_FORMULA = (
    "V = A*(q_y^2 - d^2)^2 + 1/2*omega_x^2*q_x^2 + 1/2*omega_z^2*q_z^2"
    " + 1/2*Omega_Q^2*Q^2 - g_Q*Q*q_y + 1/2*Omega_T^2*T^2 - g_T*T*(d^2 - q_y^2)"
)


@dataclass(frozen=True)
class ModelParams:
    """Coefficients of the analytic double-well model surface.

    ``A`` is in meV/(sqrt(amu) A)^4, ``d`` in sqrt(amu) A, the curvatures
    enter as 1/2*omega^2*x^2 in meV, ``g_Q`` in meV/(sqrt(amu) A)^2 and
    ``g_T`` in meV/(sqrt(amu) A)^3. Coordinates are those of the reference
    mass (hydrogen by default).
    """

    A: float = 830.0
    d: float = 0.6
    omega_x: float = 58.7
    omega_z: float = 58.7
    Omega_Q: float = 4.89
    Omega_T: float = 6.0
    g_Q: float = 40.0
    g_T: float = 100.0

    def __post_init__(self):
        for name in ("A", "d", "Omega_Q", "Omega_T"):
            if not getattr(self, name) > 0:
                raise ValueError(f"model parameter {name} must be positive")
        for name in ("omega_x", "omega_z", "g_Q", "g_T"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"model parameter {name} must be finite")

    def evaluate(self, q_x=0.0, q_y=0.0, q_z=0.0, Q=0.0, T=0.0):
        d2 = self.d**2
        return (
            self.A * (q_y**2 - d2) ** 2
            + 0.5 * self.omega_x**2 * q_x**2
            + 0.5 * self.omega_z**2 * q_z**2
            + 0.5 * self.Omega_Q**2 * Q**2
            - self.g_Q * Q * q_y
            + 0.5 * self.Omega_T**2 * T**2
            - self.g_T * T * (d2 - q_y**2)
        )

    def separable(self) -> ModelParams:
        return replace(self, g_Q=0.0, g_T=0.0)


DEFAULT_PARAMS = ModelParams()

#: (name, count, min, max); counts follow a 7x11x7x11x11 sample layout.
DEFAULT_SAMPLE_AXES = (
    ("q_x", 7, -0.9, 0.9),
    ("q_y", 11, -1.0, 1.0),
    ("q_z", 7, -0.9, 0.9),
    ("Q", 11, -3.0, 3.0),
    ("T", 11, -1.0, 3.0),
)
#: Refinement of the default sample grid used for solves.
DEFAULT_REFINE = (1, 4, 1, 2, 2)


def default_grid(names=None) -> GridSpec:
    """Default model sample grid, optionally restricted to some axes."""
    axes = [AxisSpec(*a) for a in DEFAULT_SAMPLE_AXES]
    if names is not None:
        unknown = set(names) - {a.name for a in axes}
        if unknown:
            raise ValueError(f"unknown axes {sorted(unknown)}")
        axes = [a for a in axes if a.name in names]
    return GridSpec(tuple(axes))


def model_pes(params: ModelParams, grid: GridSpec, reference_mass: float = MASS_H) -> PesSample:
    """Evaluate the model surface on every node of ``grid``.

    Axes must be named from ``q_x, q_y, q_z, Q, T``; absent axes are frozen
    at zero.
    """
    unknown = [n for n in grid.names if n not in KNOWN_AXES]
    if unknown:
        raise ValueError(f"unknown axis names for the model PES: {unknown}")
    coords = dict(zip(grid.names, grid.mesh()))
    values = params.evaluate(**coords)
    values = np.broadcast_to(values, grid.shape)
    meta = {
        "source": "model",
        "formula": MODEL_FORMULA,
        "reference_mass_amu": repr(float(reference_mass)),
        "energy_reference_meV": repr(float(np.min(values))),
    }
    for k, v in vars(params).items():
        meta[f"param_{k}"] = repr(float(v))
    return PesSample(grid, values, meta)


def params_from_meta(meta: Mapping[str, str]) -> ModelParams | None:
    """Recover model parameters written by :func:`model_pes`, if present."""
    kw = {}
    for name in ModelParams.__dataclass_fields__:
        key = f"param_{name}"
        if key not in meta:
            return None
        kw[name] = float(meta[key])
    return ModelParams(**kw)


# ---------------------------------------------------------------------------
# File I/O


def _detect_binary(path: Path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(4) == BINARY_MAGIC


def save_pes(sample: PesSample, path, fmt: str | None = None) -> Path:
    """Write ``sample``; ``fmt`` is ``"text"`` or ``"binary"``.

    Without ``fmt`` the suffix decides: ``.pesb``/``.bin`` are binary,
    anything else is text.
    """
    path = Path(path)
    if fmt is None:
        fmt = "binary" if path.suffix.lower() in (".pesb", ".bin") else "text"
    if fmt == "binary":
        path.write_bytes(_encode_binary(sample))
    elif fmt == "text":
        path.write_text(_encode_text(sample), encoding="utf-8")
    else:
        raise ValueError(f"unknown PES format {fmt!r}")
    return path


def load_pes(path) -> PesSample:
    """Read a PES file in either encoding (detected from the magic bytes)."""
    path = Path(path)
    if _detect_binary(path):
        return _decode_binary(path.read_bytes())
    return _decode_text(path.read_text(encoding="utf-8"))


def _encode_text(sample: PesSample) -> str:
    lines = [TEXT_MAGIC, f"ndim {sample.grid.ndim}"]
    for a in sample.grid.axes:
        lines.append(f"axis {a.name} {a.count} {a.min!r} {a.max!r}")
    lines.append(UNITS_LINE)
    for k, v in sample.meta.items():
        lines.append(f"meta {k} {v}")
    lines.append("values")
    flat = sample.values.reshape(-1)
    row = max(sample.grid.shape[-1], 1)
    for start in range(0, flat.size, row):
        lines.append(" ".join(repr(float(x)) for x in flat[start : start + row]))
    return "\n".join(lines) + "\n"


def _decode_text(text: str) -> PesSample:
    lines = text.splitlines()
    if not lines or lines[0].strip() != TEXT_MAGIC:
        raise PesFormatError(f"missing {TEXT_MAGIC!r} header", line=1)
    pos = 1

    def next_line():
        nonlocal pos
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        if pos >= len(lines):
            raise PesFormatError("unexpected end of file", line=pos + 1)
        pos += 1
        return pos, lines[pos - 1].strip()

    lineno, line = next_line()
    tok = line.split()
    if len(tok) != 2 or tok[0] != "ndim":
        raise PesFormatError(f"expected 'ndim <k>', got {line!r}", line=lineno)
    try:
        ndim = int(tok[1])
    except ValueError:
        raise PesFormatError(f"bad ndim {tok[1]!r}", line=lineno) from None
    if ndim < 1:
        raise PesFormatError("ndim must be >= 1", line=lineno)

    axes = []
    for i in range(ndim):
        lineno, line = next_line()
        tok = line.split()
        if tok[0] != "axis":
            raise PesFormatError(
                f"header declares {ndim} axes but only {i} axis records present", line=lineno
            )
        if len(tok) != 5:
            raise PesFormatError(f"expected 'axis <name> <count> <min> <max>', got {line!r}", line=lineno)
        try:
            axes.append(AxisSpec(tok[1], int(tok[2]), float(tok[3]), float(tok[4])))
        except ValueError as exc:
            raise PesFormatError(str(exc), line=lineno) from None
    try:
        grid = GridSpec(tuple(axes))
    except ValueError as exc:
        raise PesFormatError(str(exc)) from None

    lineno, line = next_line()
    if line.split()[0] == "axis":
        raise PesFormatError(f"more axis records than the declared ndim {ndim}", line=lineno)
    if line != UNITS_LINE:
        raise PesFormatError(f"expected {UNITS_LINE!r}, got {line!r}", line=lineno)

    meta = {}
    while True:
        lineno, line = next_line()
        if line == "values":
            break
        tok = line.split(maxsplit=2)
        if tok[0] != "meta" or len(tok) < 2:
            raise PesFormatError(f"expected 'meta <key> <value>' or 'values', got {line!r}", line=lineno)
        meta[tok[1]] = tok[2] if len(tok) == 3 else ""

    try:
        values = np.array(" ".join(lines[pos:]).split(), dtype=np.float64)
    except ValueError as exc:
        raise PesFormatError(f"bad value: {exc}") from None
    if values.size != grid.size:
        raise PesFormatError(f"expected {grid.size} values for shape {grid.shape}, found {values.size}")
    if not np.all(np.isfinite(values)):
        raise PesFormatError("non-finite value in PES data")
    return PesSample(grid, values, meta)


def _pack_str(s: str, fmt: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack(fmt, len(raw)) + raw


def _encode_binary(sample: PesSample) -> bytes:
    parts = [BINARY_MAGIC, struct.pack("<H", VERSION), struct.pack("<I", sample.grid.ndim)]
    for a in sample.grid.axes:
        name = a.name.encode("utf-8")
        if len(name) > 255:
            raise ValueError(f"axis name too long for binary encoding: {a.name!r}")
        parts.append(struct.pack("<B", len(name)) + name)
        parts.append(struct.pack("<Idd", a.count, a.min, a.max))
    parts.append(struct.pack("<I", len(sample.meta)))
    for k, v in sample.meta.items():
        parts.append(_pack_str(k, "<I") + _pack_str(v, "<I"))
    parts.append(np.ascontiguousarray(sample.values, dtype="<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise PesFormatError(f"truncated binary PES at byte {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self, fmt: str) -> str:
        (n,) = self.unpack(fmt)
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise PesFormatError(f"invalid UTF-8: {exc}") from None


def _decode_binary(data: bytes) -> PesSample:
    r = _Reader(data)
    if r.take(4) != BINARY_MAGIC:
        raise PesFormatError("bad magic bytes")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise PesFormatError(f"unsupported PES binary version {version}")
    (ndim,) = r.unpack("<I")
    if ndim < 1:
        raise PesFormatError("ndim must be >= 1")
    axes = []
    for _ in range(ndim):
        name = r.string("<B")
        count, lo, hi = r.unpack("<Idd")
        try:
            axes.append(AxisSpec(name, count, lo, hi))
        except ValueError as exc:
            raise PesFormatError(str(exc)) from None
    try:
        grid = GridSpec(tuple(axes))
    except ValueError as exc:
        raise PesFormatError(str(exc)) from None
    (nmeta,) = r.unpack("<I")
    meta = {}
    for _ in range(nmeta):
        k = r.string("<I")
        meta[k] = r.string("<I")
    remaining = len(data) - r.pos
    if remaining != 8 * grid.size:
        raise PesFormatError(f"expected {grid.size} f64 values, found {remaining} bytes")
    values = np.frombuffer(r.take(remaining), dtype="<f8").astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise PesFormatError("non-finite value in PES data")
    return PesSample(grid, values, meta)
