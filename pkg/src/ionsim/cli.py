"""Batch front end: JSON experiment configs in, CSV/JSON tables out.

    ionsim run <config-file> [--threads N] [--out PATH]
    ionsim validate <config-file>

Exit codes: 0 success, 1 invalid config, 2 at least one grid point failed
in a solver (its row is still written, flagged by ``status``).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import __version__
from .atomic import D52, P12, P32, S12, FieldConfig, LevelScheme, ca40_scheme
from .errors import (ConfigError, ConvergenceError, DomainError, SingularSystemError,
                     StiffnessError)
from . import shelving, sideband

KINDS = ("shelve_sweep", "shelve_pulse", "detect_sweep", "cool_single", "cool_double",
         "eta_limit", "matrix_table", "readout_stats")
FORMATS = ("csv", "json")

# row status codes
OK, INVALID_POINT, NOT_CONVERGED, SINGULAR, STIFF = 0, 1, 2, 3, 4
STATUS_DOC = "0 ok, 1 invalid point, 2 not converged, 3 singular system, 4 stiff"


def status_of(exc: Exception) -> int:
    if isinstance(exc, StiffnessError):
        return STIFF
    if isinstance(exc, ConvergenceError):
        return NOT_CONVERGED
    if isinstance(exc, SingularSystemError):
        return SINGULAR
    return INVALID_POINT


# ---------------------------------------------------------------------------
# config


@dataclass(frozen=True)
class OutputSpec:
    path: str | None = None
    format: str = "csv"


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    parameters: Mapping[str, Any]
    output: OutputSpec = field(default_factory=OutputSpec)

    @classmethod
    def from_dict(cls, data: Any) -> "ExperimentConfig":
        if not isinstance(data, Mapping):
            raise ConfigError("<root>", "config must be a JSON object")
        kind = data.get("kind")
        if kind not in KINDS:
            raise ConfigError("kind", f"must be one of {', '.join(KINDS)}; got {kind!r}")
        params = data.get("parameters", {})
        if not isinstance(params, Mapping):
            raise ConfigError("parameters", "must be an object")
        out = data.get("output", {})
        if not isinstance(out, Mapping):
            raise ConfigError("output", "must be an object")
        fmt = out.get("format", "csv")
        if fmt not in FORMATS:
            raise ConfigError("output.format", f"must be csv or json; got {fmt!r}")
        path = out.get("path")
        if path is not None and not isinstance(path, str):
            raise ConfigError("output.path", "must be a string")
        unknown = set(data) - {"kind", "parameters", "output"}
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown top-level key")
        return cls(kind, dict(params), OutputSpec(path, fmt))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        return cls.from_dict(data)

    def echo(self) -> dict:
        return {"kind": self.kind, "parameters": self.parameters,
                "output": {"path": self.output.path, "format": self.output.format}}


class _Params:
    """Typed access to a parameter map; records which keys were read."""

    def __init__(self, params: Mapping[str, Any]):
        self._p = params
        self._used: set[str] = set()

    def has(self, name: str) -> bool:
        return name in self._p

    def raw(self, name: str, default=None):
        self._used.add(name)
        return self._p.get(name, default)

    def number(self, name: str, default=None, minimum=None, positive=False,
               integer=False) -> float:
        v = self.raw(name, default)
        if v is None:
            raise ConfigError(f"parameters.{name}", "required")
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ConfigError(f"parameters.{name}", f"must be a finite number; got {v!r}")
        _check_value(name, v, minimum, positive, integer)
        return int(v) if integer else float(v)

    def grid(self, name: str, default=None, minimum=None, positive=False,
             integer=False) -> np.ndarray:
        """A scalar, a list, or ``{start, stop, points, scale}``."""
        v = self.raw(name, default)
        if v is None:
            raise ConfigError(f"parameters.{name}", "required")
        values = parse_grid(v, f"parameters.{name}")
        for x in values:
            _check_value(name, x, minimum, positive, integer)
        return values.astype(int) if integer else values

    def choice(self, name: str, options: Sequence[str], default: str) -> str:
        v = self.raw(name, default)
        if v not in options:
            raise ConfigError(f"parameters.{name}", f"must be one of {', '.join(options)}; got {v!r}")
        return v

    def flag(self, name: str, default: bool = False) -> bool:
        v = self.raw(name, default)
        if not isinstance(v, bool):
            raise ConfigError(f"parameters.{name}", "must be true or false")
        return v

    def finish(self):
        unknown = set(self._p) - self._used
        if unknown:
            raise ConfigError(f"parameters.{sorted(unknown)[0]}", "unknown parameter")


def _check_value(name, v, minimum, positive, integer):
    if integer and float(v) != int(v):
        raise ConfigError(f"parameters.{name}", f"must be an integer; got {v!r}")
    if positive and v <= 0:
        raise ConfigError(f"parameters.{name}", f"must be > 0; got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"parameters.{name}", f"must be >= {minimum}; got {v!r}")


def parse_grid(v: Any, where: str) -> np.ndarray:
    if isinstance(v, bool):
        raise ConfigError(where, "must be a number, list or range")
    if isinstance(v, (int, float)):
        values = [v]
    elif isinstance(v, list):
        if not v:
            raise ConfigError(where, "list must not be empty")
        values = v
    elif isinstance(v, Mapping):
        extra = set(v) - {"start", "stop", "points", "scale"}
        if extra:
            raise ConfigError(f"{where}.{sorted(extra)[0]}", "unknown range key")
        for key in ("start", "stop", "points"):
            if key not in v:
                raise ConfigError(f"{where}.{key}", "required in a range")
        start, stop, points = v["start"], v["stop"], v["points"]
        scale = v.get("scale", "linear")
        for key, x in (("start", start), ("stop", stop)):
            if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
                raise ConfigError(f"{where}.{key}", "must be a finite number")
        if isinstance(points, bool) or not isinstance(points, int) or points < 1:
            raise ConfigError(f"{where}.points", "must be an integer >= 1")
        if scale == "linear":
            return np.linspace(start, stop, points)
        if scale == "log":
            if start <= 0 or stop <= 0:
                raise ConfigError(where, "log range needs start, stop > 0")
            return np.geomspace(start, stop, points)
        raise ConfigError(f"{where}.scale", f"must be linear or log; got {scale!r}")
    else:
        raise ConfigError(where, "must be a number, list or range")
    for x in values:
        if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
            raise ConfigError(where, f"entries must be finite numbers; got {x!r}")
    return np.asarray(values, dtype=float)


# ---------------------------------------------------------------------------
# tables


@dataclass(frozen=True)
class Column:
    name: str
    unit: str = "1"

    @property
    def header(self) -> str:
        return f"{self.name} [{self.unit}]"


@dataclass
class ResultTable:
    columns: list[Column]
    rows: list[list[float]]
    provenance: dict[str, Any]

    def __post_init__(self):
        for r in self.rows:
            if len(r) != len(self.columns):
                raise ValueError("row length does not match column count")

    def column(self, name: str) -> np.ndarray:
        i = [c.name for c in self.columns].index(name)
        return np.array([r[i] for r in self.rows], dtype=float)

    @property
    def failed(self) -> int:
        """Rows whose status marks a solver failure."""
        if "status" not in [c.name for c in self.columns]:
            return 0
        return int(np.sum(self.column("status") >= NOT_CONVERGED))


@dataclass(frozen=True)
class _Plan:
    """Grid points, the function evaluating one point, and the table layout."""

    inputs: list[Column]
    outputs: list[Column]
    points: list[tuple]
    evaluate: Callable[[tuple], Sequence[float]]
    tolerances: dict[str, float]


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.12g" % (x + 0.0)   # no "-0"


def emit(table: ResultTable, fmt: str = "csv", path: str | os.PathLike | None = None) -> str:
    """Serialise ``table``; write to ``path`` if given and return the text."""
    if fmt == "csv":
        buf = io.StringIO()
        for key in sorted(table.provenance):
            value = table.provenance[key]
            if not isinstance(value, str):
                value = json.dumps(value, sort_keys=True, separators=(",", ":"))
            buf.write(f"# {key}={value}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([c.header for c in table.columns])
        for r in table.rows:
            w.writerow([_fmt(x) for x in r])
        text = buf.getvalue()
    elif fmt == "json":
        doc = {"provenance": table.provenance,
               "columns": [{"name": c.name, "unit": c.unit} for c in table.columns],
               "rows": [[None if isinstance(x, float) and math.isnan(x) else x for x in r]
                        for r in table.rows]}
        text = json.dumps(doc, sort_keys=True, indent=1, allow_nan=False) + "\n"
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if path is not None:
        try:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            Path(path).write_text(text)
        except OSError as exc:
            raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}") from exc
    return text


def parse_csv(text: str) -> ResultTable:
    """Inverse of ``emit(..., "csv")``."""
    lines = text.splitlines()
    provenance = {}
    i = 0
    while i < len(lines) and lines[i].startswith("# "):
        key, _, value = lines[i][2:].partition("=")
        try:
            provenance[key] = json.loads(value)
        except json.JSONDecodeError:
            provenance[key] = value
        i += 1
    reader = csv.reader(lines[i:])
    header = next(reader)
    columns = []
    for h in header:
        name, _, unit = h.rpartition(" [")
        columns.append(Column(name, unit.rstrip("]")))
    rows = [[float(x) for x in r] for r in reader]
    return ResultTable(columns, rows, provenance)


def parse_json(text: str) -> ResultTable:
    doc = json.loads(text)
    columns = [Column(c["name"], c["unit"]) for c in doc["columns"]]
    rows = [[math.nan if x is None else x for x in r] for r in doc["rows"]]
    return ResultTable(columns, rows, doc["provenance"])


# ---------------------------------------------------------------------------
# experiment kinds


def _scheme(p: _Params) -> LevelScheme:
    data = p.raw("scheme")
    if data is None:
        return ca40_scheme()
    try:
        return LevelScheme.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError("parameters.scheme", str(exc)) from exc


def _rabi_grid(p: _Params, width: float) -> tuple[np.ndarray, np.ndarray]:
    """Rabi frequencies given as multiples of ``width`` or in Hz; returns (ratio, rad/s)."""
    if p.has("rabi_hz") == p.has("rabi_over_gamma"):
        raise ConfigError("parameters.rabi_over_gamma", "give exactly one of rabi_over_gamma, rabi_hz")
    if p.has("rabi_hz"):
        rad = 2 * math.pi * p.grid("rabi_hz", minimum=0)
        return rad / width, rad
    ratio = p.grid("rabi_over_gamma", minimum=0)
    return ratio, ratio * width


def _shelve_sweep(p: _Params) -> _Plan:
    scheme = _scheme(p)
    g15 = scheme.decay_rates[(S12, P32)]
    B = p.grid("B", minimum=0)
    ratios, rabis = _rabi_grid(p, g15)
    rel_tol = p.number("rel_tol", 1e-9, positive=True)
    xtol = p.number("xtol", 1e-3, positive=True)
    if rel_tol > 1e-3:
        raise ConfigError("parameters.rel_tol", "must be <= 1e-3")

    def evaluate(pt):
        b, _, rabi = pt
        field_ = FieldConfig(b)
        t, eps = shelving.optimal_pulse(scheme, field_, rabi, rel_tol, xtol)
        red = shelving.reduced_model(field_, rabi, scheme) if rabi > 0 else None
        return [t, eps, red.t_max if red else math.nan, red.epsilon_max if red else math.nan]

    return _Plan([Column("B", "T"), Column("rabi_over_gamma15"), Column("rabi", "rad/s")],
                 [Column("t_opt", "s"), Column("epsilon"), Column("t_max_reduced", "s"),
                  Column("epsilon_reduced")],
                 [(b, r, w) for r, w in zip(ratios, rabis) for b in B], evaluate,
                 {"rel_tol": rel_tol, "xtol": xtol})


def _shelve_pulse(p: _Params) -> _Plan:
    scheme = _scheme(p)
    g15 = scheme.decay_rates[(S12, P32)]
    b = p.number("B", minimum=0)
    ratios, rabis = _rabi_grid(p, g15)
    if len(rabis) != 1:
        raise ConfigError("parameters.rabi_over_gamma", "shelve_pulse takes a single Rabi frequency")
    rabi = float(rabis[0])
    times = p.grid("t", minimum=0)
    rel_tol = p.number("rel_tol", 1e-9, positive=True)
    field_ = FieldConfig(b)
    cache: dict[str, Any] = {}

    def curve():
        if "curve" not in cache:
            cache["curve"] = shelving.ShelvingCurve(scheme, field_, rabi, float(times.max()), rel_tol)
        return cache["curve"]

    def evaluate(pt):
        t = pt[0]
        sp, sm = curve().shelved(t)
        red = shelving.reduced_model(field_, rabi, scheme).epsilon(t) if rabi > 0 else math.nan
        return [float(sp[0] - sm[0]), float(sp[0]), float(sm[0]), red]

    if times.max() > 0:
        curve()   # build once, before any worker threads start
    return _Plan([Column("t", "s")],
                 [Column("epsilon"), Column("s_plus"), Column("s_minus"), Column("epsilon_reduced")],
                 [(t,) for t in times], evaluate, {"rel_tol": rel_tol})


def _detect_sweep(p: _Params) -> _Plan:
    scheme = _scheme(p)
    g4 = scheme.total_width(P12)
    B = p.grid("B", minimum=0)
    ratios, rabis = _rabi_grid(p, g4)
    pol = p.raw("polarization", list(shelving.LINEAR_PERP))
    try:
        shelving.LaserDrive(S12, P12, 0.0, tuple(pol))
    except (DomainError, TypeError) as exc:
        raise ConfigError("parameters.polarization", str(exc)) from exc

    def evaluate(pt):
        b, _, rabi = pt
        return [shelving.detection_steady_state(scheme, FieldConfig(b), rabi, rabi, tuple(pol))]

    return _Plan([Column("B", "T"), Column("rabi_over_gamma4"), Column("rabi", "rad/s")],
                 [Column("p_excited")],
                 [(b, r, w) for r, w in zip(ratios, rabis) for b in B], evaluate, {})


def _eta_values(p: _Params) -> np.ndarray:
    if p.has("eta") == p.has("eta2"):
        raise ConfigError("parameters.eta2", "give exactly one of eta, eta2")
    if p.has("eta"):
        return p.grid("eta", minimum=0) ** 2
    return p.grid("eta2", minimum=0)


def _cooling(p: _Params, double: bool) -> _Plan:
    eta2 = _eta_values(p)
    gammas = p.grid("gamma", positive=True)
    ms = p.grid("m", [1, 2, 3, 4] if double else 1, minimum=1, integer=True)
    if double:
        rule = p.raw("alpha", "inverse_3eta2")
        if rule != "inverse_3eta2":
            alphas = p.grid("alpha", minimum=0)
        else:
            alphas = None
    else:
        alphas = np.array([0.0])
    n_max = p.number("n_max", 100, minimum=1, integer=True)
    j_max = p.raw("j_max")
    if j_max is not None:
        j_max = p.number("j_max", minimum=n_max, integer=True)
    if n_max >= sideband.MAX_INDEX or (j_max or 0) >= sideband.MAX_INDEX:
        raise ConfigError("parameters.n_max", f"truncation must stay below {sideband.MAX_INDEX}")
    model = p.choice("emission_model", sideband.EMISSION_MODELS, "two_delta")
    separate = p.flag("separate_processes")

    def evaluate(pt):
        e2, g, m, a = pt
        if math.isnan(a):
            raise DomainError("alpha = 1/(3 eta^2) undefined at eta = 0")
        cfg = sideband.CoolingConfig(math.sqrt(e2), g, int(m), a, n_max, j_max, model)
        d = sideband.cooling_steady_state(cfg, separate)
        pred = math.nan
        if m == 1 and a == 0 and e2 < 0.5:
            pred = sideband.first_sideband_prediction(math.sqrt(e2), g).mean_n
        with np.errstate(divide="ignore"):
            kT = d.temperature if d.p[1] > 0 else 0.0
        return [d.p[0], d.ground_deficit, d.mean_n, d.mean_n2, kT, pred, d.residual]

    points = []
    for m in ms:
        for g in gammas:
            for e2 in eta2:
                if alphas is None:
                    a_list = [1 / (3 * e2) if e2 > 0 else math.nan]
                else:
                    a_list = alphas
                for a in a_list:
                    points.append((float(e2), float(g), int(m), float(a)))
    return _Plan([Column("eta2"), Column("gamma", "omega_z"), Column("m"), Column("alpha")],
                 [Column("P0"), Column("ground_deficit"), Column("mean_n"), Column("mean_n2"),
                  Column("kT", "hbar omega_z"), Column("mean_n_predicted"), Column("residual")],
                 points, evaluate,
                 {"tail_tol": 1e-8, "residual_tol": 1e-8, "n_max": n_max,
                  "j_max": -1 if j_max is None else j_max})


def _eta_limit(p: _Params) -> _Plan:
    gammas = p.grid("gamma", positive=True)
    damping = p.number("damping", 0.5, positive=True)
    tol = p.number("tol", 1e-6, positive=True)
    if damping > 1:
        raise ConfigError("parameters.damping", "must lie in (0, 1]")

    def evaluate(pt):
        r = sideband.eta_limit(pt[0], damping, tol)
        return [r.eta, r.eta2, r.residual, r.iterations]

    return _Plan([Column("gamma", "omega_z")],
                 [Column("eta_max"), Column("eta2_max"), Column("residual"), Column("iterations")],
                 [(g,) for g in gammas], evaluate, {"tol": tol, "damping": damping})


def _matrix_table(p: _Params) -> _Plan:
    etas = p.grid("eta")
    f_max = p.number("f_max", 5, minimum=0, integer=True)
    n_max = p.number("n_max", f_max, minimum=0, integer=True)
    if max(f_max, n_max) > sideband.MAX_INDEX:
        raise ConfigError("parameters.n_max", f"indices must not exceed {sideband.MAX_INDEX}")

    def evaluate(pt):
        eta, f, n = pt
        amp = sideband.displacement_element(int(f), int(n), eta)
        return [amp.real, amp.imag, abs(amp) ** 2]

    points = [(float(e), f, n) for e in etas for f in range(f_max + 1) for n in range(n_max + 1)]
    return _Plan([Column("eta"), Column("f"), Column("n")],
                 [Column("re"), Column("im"), Column("strength")], points, evaluate, {})


def _readout_stats(p: _Params) -> _Plan:
    eps = p.grid("epsilon")
    ions = p.grid("n_ions", minimum=1, integer=True)
    if p.has("r") == p.has("target"):
        raise ConfigError("parameters.r", "give exactly one of r, target")
    if p.has("r"):
        rs = p.grid("r", minimum=1, integer=True)

        def evaluate(pt):
            e, n, r = pt
            return [shelving.readout_success(e, int(r), int(n))]

        return _Plan([Column("epsilon"), Column("n_ions"), Column("r")], [Column("success")],
                     [(float(e), int(n), int(r)) for e in eps for n in ions for r in rs],
                     evaluate, {})
    targets = p.grid("target", positive=True)

    def evaluate_inverse(pt):
        e, n, target = pt
        r = shelving.readout_repetitions(e, int(n), target)
        return [r, shelving.readout_success(e, r, int(n))]

    return _Plan([Column("epsilon"), Column("n_ions"), Column("target")],
                 [Column("r"), Column("success")],
                 [(float(e), int(n), float(t)) for e in eps for n in ions for t in targets],
                 evaluate_inverse, {})


_BUILDERS = {
    "shelve_sweep": _shelve_sweep,
    "shelve_pulse": _shelve_pulse,
    "detect_sweep": _detect_sweep,
    "cool_single": lambda p: _cooling(p, double=False),
    "cool_double": lambda p: _cooling(p, double=True),
    "eta_limit": _eta_limit,
    "matrix_table": _matrix_table,
    "readout_stats": _readout_stats,
}


def plan(config: ExperimentConfig) -> _Plan:
    """Validate the parameters and lay out the grid without evaluating it."""
    p = _Params(config.parameters)
    out = _BUILDERS[config.kind](p)
    p.finish()
    return out


def _safe(evaluate, n_out):
    def run_point(pt):
        try:
            values = [float(v) for v in evaluate(pt)]
            return values + [OK]
        except (DomainError, ConvergenceError, SingularSystemError, ArithmeticError) as exc:
            return [math.nan] * n_out + [status_of(exc)]
    return run_point


def run(config: ExperimentConfig, threads: int | None = None) -> ResultTable:
    """Evaluate every grid point; failures become NaN rows with a status code."""
    pl = plan(config)
    threads = threads or os.cpu_count() or 1
    point = _safe(pl.evaluate, len(pl.outputs))
    if threads > 1 and len(pl.points) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(point, pl.points))
    else:
        results = [point(pt) for pt in pl.points]
    rows = [[*pt, *res] for pt, res in zip(pl.points, results)]
    provenance = {"config": config.echo(), "version": __version__,
                  "tolerances": pl.tolerances, "status_codes": STATUS_DOC}
    return ResultTable(pl.inputs + pl.outputs + [Column("status")], rows, provenance)


# ---------------------------------------------------------------------------
# entry point


def main(argv: Sequence[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="ionsim", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="evaluate a config and write its table")
    r.add_argument("config")
    r.add_argument("--threads", type=int, default=None, help="worker threads (default: cores)")
    r.add_argument("--out", default=None, help="output path (overrides the config)")
    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("config")
    args = ap.parse_args(argv)

    try:
        config = ExperimentConfig.load(args.config)
        pl = plan(config)
        if args.command == "run" and args.threads is not None and args.threads < 1:
            raise ConfigError("--threads", "must be >= 1")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.command == "validate":
        print(f"ok: {config.kind}, {len(pl.points)} grid points")
        return 0

    table = run(config, args.threads)
    path = args.out or config.output.path
    fmt = config.output.format
    if args.out and "format" not in (json.loads(Path(args.config).read_text()).get("output") or {}):
        fmt = "json" if args.out.endswith(".json") else "csv"
    try:
        text = emit(table, fmt, path)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if path is None:
        sys.stdout.write(text)
    if table.failed:
        print(f"warning: {table.failed} of {len(table.rows)} rows failed", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
