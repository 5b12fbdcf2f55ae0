"""Run configuration: a strict line-based ``key = value`` format with
``[section]`` headers and ``#`` comments.

Example::

    [geometry]
    P = disk 0.25 0.5 0.15
    R = disk 0.7 0.5 0.2

    [physics]
    w = 40
    rho = 0.1

Every key not given takes the default listed in SCHEMA; ``echo()`` renders
the fully resolved configuration in the same format.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import GeometryError, ParseError, ValidationError
from .geometry import CellGeometry, ShapeSpec, build_cell


def _shape(text: str):
    parts = text.split()
    if not parts:
        raise ValueError("empty shape")
    kind, nums = parts[0], [float(x) for x in parts[1:]]
    if kind == "disk":
        if len(nums) != 3:
            raise ValueError("disk needs 'cx cy r'")
        return ShapeSpec.disk((nums[0], nums[1]), nums[2])
    if kind == "polygon":
        if len(nums) < 6 or len(nums) % 2:
            raise ValueError("polygon needs at least three 'x y' pairs")
        return ShapeSpec.polygon(np.array(nums).reshape(-1, 2))
    raise ValueError(f"unknown shape kind {kind!r}")


def _kappas(text: str):
    out = []
    for item in text.split(";"):
        v = [float(x) for x in item.split()]
        if len(v) != 2:
            raise ValueError("each direction needs two components")
        n = math.hypot(*v)
        if not n > 0:
            raise ValueError("direction must be nonzero")
        k = (v[0] / n, v[1] / n)
        if abs(math.hypot(*k) - 1.0) > 1e-12:
            raise ValueError("direction normalization failed")
        out.append(k)
    return tuple(out)


def _floats(text: str):
    return tuple(float(x) for x in text.split())


def _auto_int(text: str):
    return None if text == "auto" else int(text)


def _auto_float(text: str):
    return None if text == "auto" else float(text)


def _bool(text: str):
    if text in ("true", "yes", "1"):
        return True
    if text in ("false", "no", "0"):
        return False
    raise ValueError("expected true or false")


ARTIFACTS = ("spectra", "effective", "bands", "series", "oracle")


def _artifacts(text: str):
    if text == "all":
        return ARTIFACTS
    names = tuple(text.split())
    bad = [n for n in names if n not in ARTIFACTS]
    if bad:
        raise ValueError(f"unknown artifacts {bad}")
    return names


# (section, key) -> (parser, default text or None if required, description)
SCHEMA = {
    ("geometry", "P"): (_shape, None, "plasmonic rod: 'disk cx cy r' or 'polygon x1 y1 x2 y2 ...'"),
    ("geometry", "R"): (_shape, None, "high-dielectric rod, same syntax"),
    ("physics", "w"): (float, None, "plasma parameter eps_r omega_p^2 / c^2 (nondimensional)"),
    ("physics", "rho"): (float, None, "d / sqrt(eps_r)"),
    ("numerics", "h"): (float, "0.015625", "target mesh size"),
    ("numerics", "N_dirichlet"): (_auto_int, "auto", "Dirichlet modes, or auto for the Parseval rule"),
    ("numerics", "parseval_defect"): (float, "0.001", "Parseval defect used by N_dirichlet = auto"),
    ("numerics", "k_electro"): (_auto_int, "12", "strongest resonances kept, or auto for all"),
    ("numerics", "nystrom"): (_bool, "false", "also compute the boundary integral resonances (disk P)"),
    ("numerics", "truncation"): (int, "64", "Fourier truncation of the periodic Green's function"),
    ("numerics", "nystrom_nodes"): (int, "128", "quadrature nodes on the boundary of P"),
    ("numerics", "M"): (int, "4", "series order"),
    ("numerics", "guard_abs"): (float, "1e-06", "absolute guard around excluded frequencies"),
    ("numerics", "guard_rel"): (float, "0.0001", "guard relative to the local gap"),
    ("numerics", "compat_tol"): (float, "1e-07", "step II compatibility tolerance"),
    ("numerics", "scan_max"): (_auto_float, "auto", "upper end of the frequency scan, auto = largest nu_j"),
    ("sweep", "tau_min"): (float, "0.05", "smallest tau"),
    ("sweep", "tau_max"): (_auto_float, "auto", "largest tau, auto = 0.99 / rho"),
    ("sweep", "tau_points"): (int, "160", "geometric tau samples"),
    ("sweep", "kappa"): (_kappas, "1 0", "propagation directions 'kx ky; kx ky; ...' (normalized)"),
    ("series", "tau"): (float, "2", "tau of the expanded branch point"),
    ("series", "interval"): (int, "0", "interval id of the expanded branch"),
    ("series", "etas"): (_floats, "0.02 0.04 0.08 0.16", "oracle eta ladder"),
    ("outputs", "directory"): (str, "out", "output directory"),
    ("outputs", "artifacts"): (_artifacts, "all", "artifacts to emit (spectra effective bands series oracle)"),
}

SECTIONS = tuple(dict.fromkeys(sec for sec, _ in SCHEMA))


@dataclass(frozen=True)
class RunConfig:
    values: dict
    texts: dict

    def __getitem__(self, key: str):
        sec, name = key.split(".")
        return self.values[(sec, name)]

    @property
    def cell(self) -> CellGeometry:
        return build_cell(self["geometry.P"], self["geometry.R"])

    @property
    def tau_max(self) -> float:
        t = self["sweep.tau_max"]
        return 0.99 / self["physics.rho"] if t is None else t

    def echo(self) -> str:
        """Resolved configuration in the input format (defaults included)."""
        lines = []
        for sec in SECTIONS:
            lines.append(f"[{sec}]")
            for (s, k), (_, _, doc) in SCHEMA.items():
                if s == sec:
                    lines.append(f"{k} = {self.texts[(s, k)]}")
            lines.append("")
        return "\n".join(lines)

    def digest(self) -> str:
        """Hash of the resolved configuration, excluding the output location."""
        text = "\n".join(f"{s}.{k}={v}" for (s, k), v in sorted(self.texts.items())
                         if (s, k) != ("outputs", "directory"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def with_values(self, **overrides) -> "RunConfig":
        """Copy with ``section__key=text`` overrides, validated again."""
        texts = dict(self.texts)
        for name, text in overrides.items():
            sec, key = name.split("__")
            texts[(sec, key)] = str(text)
        return _resolve(texts, {})


def _normalize_text(text: str) -> str:
    return " ".join(text.split())


def parse_text(text: str) -> RunConfig:
    """Parse configuration text.

    Raises:
        ParseError: malformed line, unknown section or key, duplicate key.
        ValidationError: a value that does not parse or violates its bounds.
    """
    given, lines = {}, {}
    section = None
    for n, raw in enumerate(text.split("\n"), start=1):
        if "\r" in raw:
            raise ParseError("CR line ending (LF required)", n)
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError(f"malformed section header {line!r}", n)
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise ParseError(f"unknown section [{section}]", n)
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {line!r}", n)
        if section is None:
            raise ParseError("key before any [section] header", n)
        key, value = (p.strip() for p in line.split("=", 1))
        if (section, key) not in SCHEMA:
            raise ParseError(f"unknown key {section}.{key}", n)
        if (section, key) in given:
            raise ParseError(f"duplicate key {section}.{key}", n)
        if not value:
            raise ParseError(f"empty value for {section}.{key}", n)
        given[(section, key)] = _normalize_text(value)
        lines[(section, key)] = n
    return _resolve(given, lines)


def _resolve(given: dict, lines: dict) -> RunConfig:
    values, texts = {}, {}
    for (sec, key), (parse, default, _) in SCHEMA.items():
        text = given.get((sec, key), default)
        if text is None:
            raise ValidationError(f"{sec}.{key}", "required key missing")
        try:
            values[(sec, key)] = parse(text)
        except (ValueError, GeometryError) as exc:
            raise ValidationError(f"{sec}.{key}", str(exc)) from None
        texts[(sec, key)] = text
    _validate(values)
    try:
        build_cell(values[("geometry", "P")], values[("geometry", "R")])
    except GeometryError as exc:
        raise ValidationError("geometry", str(exc)) from None
    return RunConfig(values, texts)


def _validate(v: dict):
    def need(key, ok, msg):
        if not ok:
            raise ValidationError(key, msg)

    need("physics.w", v[("physics", "w")] >= 0, "must be nonnegative")
    need("physics.rho", v[("physics", "rho")] > 0, "must be positive")
    need("numerics.h", 0 < v[("numerics", "h")] <= 0.25, "must lie in (0, 0.25]")
    n = v[("numerics", "N_dirichlet")]
    need("numerics.N_dirichlet", n is None or n > 0, "must be positive")
    need("numerics.parseval_defect", v[("numerics", "parseval_defect")] > 0, "must be positive")
    k = v[("numerics", "k_electro")]
    need("numerics.k_electro", k is None or k > 0, "must be positive")
    need("numerics.truncation", v[("numerics", "truncation")] > 0, "must be positive")
    need("numerics.nystrom_nodes", v[("numerics", "nystrom_nodes")] >= 16, "must be at least 16")
    need("numerics.M", v[("numerics", "M")] >= 0, "must be nonnegative")
    for key in ("guard_abs", "guard_rel", "compat_tol"):
        need(f"numerics.{key}", v[("numerics", key)] > 0, "must be positive")
    sm = v[("numerics", "scan_max")]
    need("numerics.scan_max", sm is None or sm > 0, "must be positive")
    need("sweep.tau_min", v[("sweep", "tau_min")] > 0, "must be positive")
    tm = v[("sweep", "tau_max")]
    need("sweep.tau_max", tm is None or tm >= v[("sweep", "tau_min")], "must be at least tau_min")
    need("sweep.tau_points", v[("sweep", "tau_points")] >= 1, "must be at least 1")
    need("series.tau", v[("series", "tau")] > 0, "must be positive")
    need("series.interval", v[("series", "interval")] >= 0, "must be nonnegative")
    etas = v[("series", "etas")]
    need("series.etas", len(etas) >= 2 and all(0 < e < 1 for e in etas), "need at least two values in (0, 1)")


def parse_config(path) -> RunConfig:
    """Read and parse a UTF-8 configuration file.

    Raises:
        ParseError: unreadable file or malformed content.
        ValidationError: invalid values.
    """
    p = Path(path)
    try:
        data = p.read_bytes().decode("utf-8")
    except FileNotFoundError:
        raise ParseError(f"config file {p} not found") from None
    except UnicodeDecodeError as exc:
        raise ParseError(f"config file is not UTF-8: {exc}") from None
    return parse_text(data)


REFERENCE_TEXT = """\
[geometry]
P = disk 0.25 0.5 0.15
R = disk 0.7 0.5 0.2

[physics]
w = 40
rho = 0.1
"""


def default_config(h: float | None = None, tau_points: int | None = None) -> RunConfig:
    """The reference two-disk configuration, optionally coarsened."""
    cfg = parse_text(REFERENCE_TEXT)
    over = {}
    if h is not None:
        over["numerics__h"] = repr(float(h))
    if tau_points is not None:
        over["sweep__tau_points"] = str(int(tau_points))
    return cfg.with_values(**over) if over else cfg
