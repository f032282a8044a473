"""Scene text files and INI-style configuration files.

Scene file layout::

    # eventail-scene 1
    # omega wx wy wz
    # v vx vy vz
    # tau_s t
    # line id dx dy dz mx my mz half_window
    line_id,t_rel_seconds,x_norm,y_norm,polarity,gx,gy,is_outlier
    0,-0.1234...,0.01...,...

The ground-truth lines (omega, v, line) are optional on input; every float is
written with 17 significant digits so files round-trip exactly.
"""
from __future__ import annotations

import configparser
import csv
import re
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigParseError, SceneFormatError
from .geometry import EventCluster, MotionState, PluckerLine
from .harness import RansacConfig
from .rotation import AdamConfig, ObjectiveSpec
from .simulator import Scene, SimConfig

MAGIC = "# eventail-scene 1"
RECORD_FIELDS = ("line_id", "t_rel_seconds", "x_norm", "y_norm", "polarity", "gx", "gy", "is_outlier")


def _f(x) -> str:
    return format(float(x), ".17g")


# ----------------------------------------------------------------- scenes --- #

def format_scene(scene: Scene) -> str:
    out = [MAGIC]
    if scene.motion is not None:
        out.append("# omega " + " ".join(_f(x) for x in scene.motion.omega))
        out.append("# v " + " ".join(_f(x) for x in scene.motion.v))
    tau_s = scene.clusters[0].tau_s if scene.clusters else 0.0
    out.append(f"# tau_s {_f(tau_s)}")
    for i, c in enumerate(scene.clusters):
        if i < len(scene.lines) and scene.lines[i] is not None:
            ln = scene.lines[i]
            vals = list(ln.d) + list(ln.m)
        else:
            vals = [float("nan")] * 6
        out.append(f"# line {i} " + " ".join(_f(x) for x in vals) + f" {_f(c.half_window)}")
    out.append(",".join(RECORD_FIELDS))
    for i, c in enumerate(scene.clusters):
        flow = c.flow if c.flow is not None else np.full((len(c), 2), np.nan)
        outl = c.outlier if c.outlier is not None else np.zeros(len(c), dtype=bool)
        for j in range(len(c)):
            out.append(",".join([
                str(i), _f(c.rel_times[j]), _f(c.xs[j]), _f(c.ys[j]), str(int(c.polarity[j])),
                _f(flow[j, 0]), _f(flow[j, 1]), str(int(outl[j])),
            ]))
    return "\n".join(out) + "\n"


def write_scene(scene: Scene, path) -> None:
    Path(path).write_text(format_scene(scene))


def _floats(parts, n, lineno, what):
    if len(parts) != n:
        raise SceneFormatError(f"line {lineno}: '{what}' needs {n} numbers, got {len(parts)}")
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise SceneFormatError(f"line {lineno}: '{what}' has a non-numeric field") from None


def parse_scene(text: str) -> Scene:
    """Parse a scene file. ``motion`` is None when the file has no ground truth."""
    omega = v = None
    tau_s = 0.0
    lines: dict[int, tuple] = {}
    records: dict[int, list] = {}
    header_seen = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if not parts:
                continue
            key, rest = parts[0], parts[1:]
            if key == "omega":
                omega = _floats(rest, 3, lineno, key)
            elif key == "v":
                v = _floats(rest, 3, lineno, key)
            elif key == "tau_s":
                tau_s = _floats(rest, 1, lineno, key)[0]
            elif key == "line":
                if not rest:
                    raise SceneFormatError(f"line {lineno}: 'line' needs an id")
                vals = _floats(rest[1:], 7, lineno, key)
                lines[int(rest[0])] = (vals[:3], vals[3:6], vals[6])
            continue
        if not header_seen:
            if tuple(p.strip() for p in line.split(",")) != RECORD_FIELDS:
                raise SceneFormatError(f"line {lineno}: expected header {','.join(RECORD_FIELDS)}")
            header_seen = True
            continue
        parts = next(csv.reader([line]))
        if len(parts) != len(RECORD_FIELDS):
            raise SceneFormatError(f"line {lineno}: expected {len(RECORD_FIELDS)} fields, got {len(parts)}")
        try:
            rec = (int(parts[0]), float(parts[1]), float(parts[2]), float(parts[3]), int(parts[4]),
                   float(parts[5]), float(parts[6]), bool(int(parts[7])))
        except ValueError:
            raise SceneFormatError(f"line {lineno}: malformed record") from None
        records.setdefault(rec[0], []).append(rec)
    if not header_seen:
        raise SceneFormatError("missing record header")
    ids = sorted(records)
    clusters, plucker = [], []
    for i in ids:
        r = np.array([rec[1:] for rec in records[i]], dtype=float)
        ts = r[:, 0]
        half = lines[i][2] if i in lines else float(np.max(np.abs(ts)))
        flow = r[:, 4:6]
        try:
            c = EventCluster(r[:, 1], r[:, 2], ts, tau_s=tau_s, half_window=max(half, float(np.max(np.abs(ts)))),
                             polarity=r[:, 3].astype(int), flow=None if np.isnan(flow).any() else flow,
                             outlier=r[:, 6].astype(bool))
        except ValueError as exc:
            raise SceneFormatError(f"cluster {i}: {exc}") from None
        clusters.append(c)
        ln = None
        if i in lines and not np.isnan(lines[i][0]).any():
            try:
                ln = PluckerLine(np.array(lines[i][0]), np.array(lines[i][1]))
            except ValueError as exc:
                raise SceneFormatError(f"line {i}: {exc}") from None
        plucker.append(ln)
    motion = MotionState(np.array(omega), np.array(v)) if omega is not None and v is not None else None
    return Scene(motion, plucker, clusters)


def read_scene(path) -> Scene:
    return parse_scene(Path(path).read_text())


# ----------------------------------------------------------------- config --- #

@dataclass
class RunConfig:
    sim: SimConfig
    spec: ObjectiveSpec
    adam: AdamConfig
    ransac: RansacConfig
    trials: int = 200
    workers: int = 1
    tau_rank: float = 1e-4
    sweep_axis: str = "n_events"
    sweep_values: tuple = (8, 30, 100, 300, 1000)
    landscape_axes: tuple = (0, 1)
    landscape_half_range: float = 0.25
    landscape_samples: int = 101
    landscape_formulation: str = "coplanarity"


_SECTIONS = {
    "simulator": SimConfig,
    "adam": AdamConfig,
    "ransac": RansacConfig,
}
_SOLVER_KEYS = {"formulation", "parametrization", "gradient", "exponent_p", "tau_rank"}
_BENCH_KEYS = {"trials", "workers"}
_SWEEP_KEYS = {"axis", "values"}
_LAND_KEYS = {"axes", "half_range", "samples", "formulation"}


def _line_of(text: str, section: str, key: str):
    current = None
    for n, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        m = re.match(r"\[(.+)\]$", s)
        if m:
            current = m.group(1).strip()
        elif current == section and re.match(rf"{re.escape(key)}\s*[=:]", s):
            return n
    return None


def _convert(raw: str, kind, key, line):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is tuple:
            return tuple(float(x) for x in raw.replace(",", " ").split())
        return kind(raw)
    except ValueError:
        raise ConfigParseError(f"line {line}: bad value {raw!r} for key '{key}'", key, line) from None


def parse_config(text: str) -> RunConfig:
    """Parse INI-style text with sections simulator, solver, adam, ransac, benchmark, sweep, landscape."""
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if getattr(exc, "errors", None) else None
        raise ConfigParseError(f"line {line}: malformed config line", None, line) from None
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        key = getattr(exc, "option", None)
        raise ConfigParseError(f"line {line}: {exc.message.splitlines()[0]}", key, line) from None

    values: dict[str, dict] = {name: {} for name in _SECTIONS}
    solver, extra = {}, {}
    for section in cp.sections():
        for key, raw in cp.items(section):
            line = _line_of(text, section, key)
            if section in _SECTIONS:
                types = {f.name: f.type for f in fields(_SECTIONS[section])}
                if key not in types:
                    raise ConfigParseError(f"line {line}: unknown key '{key}' in [{section}]", key, line)
                t = types[key]
                kind = {"int": int, "float": float, "bool": bool, "tuple": tuple}.get(str(t), float)
                values[section][key] = _convert(raw, kind, key, line)
            elif section == "solver":
                if key not in _SOLVER_KEYS:
                    raise ConfigParseError(f"line {line}: unknown key '{key}' in [solver]", key, line)
                solver[key] = _convert(raw, float, key, line) if key in ("exponent_p", "tau_rank") else raw.strip()
            elif section in ("benchmark", "sweep", "landscape"):
                allowed = {"benchmark": _BENCH_KEYS, "sweep": _SWEEP_KEYS, "landscape": _LAND_KEYS}[section]
                if key not in allowed:
                    raise ConfigParseError(f"line {line}: unknown key '{key}' in [{section}]", key, line)
                extra[(section, key)] = (raw, line)
            else:
                raise ConfigParseError(f"line {line}: unknown section [{section}]", section, line)

    def build(cls, kw, section):
        try:
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            key = next(iter(kw), None)
            raise ConfigParseError(f"[{section}]: {exc}", key, _line_of(text, section, key) if key else None) from None

    sim = build(SimConfig, values["simulator"], "simulator")
    adam = build(AdamConfig, values["adam"], "adam")
    ransac = build(RansacConfig, values["ransac"], "ransac")
    spec_kw = {}
    if "formulation" in solver:
        spec_kw["formulation"] = solver["formulation"]
    if "parametrization" in solver:
        spec_kw["parametrization"] = solver["parametrization"]
    if "gradient" in solver:
        spec_kw["gradient_mode"] = solver["gradient"]
    if "exponent_p" in solver:
        spec_kw["exponent_p"] = solver["exponent_p"]
    spec = build(ObjectiveSpec, spec_kw, "solver")
    rc = RunConfig(sim, spec, adam, ransac)
    if "tau_rank" in solver:
        rc.tau_rank = solver["tau_rank"]

    def get(section, key, kind):
        raw, line = extra[(section, key)]
        return _convert(raw, kind, key, line)

    if ("benchmark", "trials") in extra:
        rc.trials = get("benchmark", "trials", int)
    if ("benchmark", "workers") in extra:
        rc.workers = get("benchmark", "workers", int)
    if ("sweep", "axis") in extra:
        rc.sweep_axis = extra[("sweep", "axis")][0].strip()
    if ("sweep", "values") in extra:
        rc.sweep_values = get("sweep", "values", tuple)
    if ("landscape", "axes") in extra:
        rc.landscape_axes = tuple(int(a) for a in get("landscape", "axes", tuple))
    if ("landscape", "half_range") in extra:
        rc.landscape_half_range = get("landscape", "half_range", float)
    if ("landscape", "samples") in extra:
        rc.landscape_samples = get("landscape", "samples", int)
    if ("landscape", "formulation") in extra:
        rc.landscape_formulation = extra[("landscape", "formulation")][0].strip()
    return rc


def default_run_config() -> RunConfig:
    return RunConfig(SimConfig(), ObjectiveSpec(), AdamConfig(), RansacConfig())


def read_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def with_seed(rc: RunConfig, seed: int) -> RunConfig:
    return replace(rc, sim=replace(rc.sim, seed=int(seed)))
