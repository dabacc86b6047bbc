"""Batch experiment runner: ``kahlerlab <command> --config path.json [--out dir]``.

Every command writes its artifacts atomically into the output directory. JSON
reports carry a ``metadata`` block; CSV traces start with ``#`` comment lines
holding the same metadata, followed by a header row and the body. Bodies are
deterministic for a given config and build.

Exit codes: 0 success, 2 invalid config, 3 numerical failure (a machine-readable
error JSON is written to stderr and to ``<command>.error.json``).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import __version__, _kernels
from .errors import InvalidArgument, KahlerLabError, StepRejected
from .geometry import DEFAULT_ORDER, MODELS

COMMANDS = ("invariants", "flow", "geodesic", "stability", "calibrate")
QUAD_ORDER_ENV = "KAHLERLAB_QUAD_ORDER"

_COMMON = {"command", "model", "psi", "order"}
ALLOWED_KEYS = {
    "invariants": _COMMON | {"seed", "catalog_size"},
    "flow": _COMMON | {"T", "dt", "L", "m"},
    "geodesic": _COMMON | {"ray", "times", "X", "delta", "epsilons", "T", "L", "m", "nt"},
    "stability": _COMMON | {"rays", "times", "X", "tol", "delta"},
    "calibrate": _COMMON | {"L", "m"},
}

DEFAULTS = {
    "invariants": {"seed": 0, "catalog_size": 5},
    "flow": {"T": 1.0, "dt": 1e-3, "L": 12.0, "m": 4801},
    "geodesic": {"ray": None, "times": [0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0],
                 "X": None, "delta": 1e-2, "epsilons": None, "T": 1.0, "L": 10.0,
                 "m": 801, "nt": 40},
    "stability": {"rays": None, "times": [0.0, 1.0, 2.0, 4.0, 8.0], "X": None,
                  "tol": 1e-6, "delta": 1e-2},
    "calibrate": {"L": 10.0, "m": 512},
}


class ConfigError(KahlerLabError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


# -- configuration ------------------------------------------------------------

def _number(cfg, key, lo=None, hi=None, integer=False, strict_lo=False):
    val = cfg[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{key!r} must be a number", key)
    if integer and (not float(val).is_integer()):
        raise ConfigError(f"{key!r} must be an integer", key)
    if not math.isfinite(val):
        raise ConfigError(f"{key!r} must be finite", key)
    if lo is not None and (val < lo or (strict_lo and val == lo)):
        raise ConfigError(f"{key!r} = {val} is below the allowed range", key)
    if hi is not None and val > hi:
        raise ConfigError(f"{key!r} = {val} is above the allowed range", key)
    return int(val) if integer else float(val)


def _number_list(cfg, key, positive=False):
    val = cfg[key]
    if not isinstance(val, list) or not val:
        raise ConfigError(f"{key!r} must be a nonempty list of numbers", key)
    out = []
    for v in val:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ConfigError(f"{key!r} must contain finite numbers", key)
        if v < 0 or (positive and v == 0):
            raise ConfigError(f"{key!r} entries must be {'positive' if positive else 'nonnegative'}",
                              key)
        out.append(float(v))
    return out


def _psi_spec(val):
    if val is None or val == "zero":
        return {"catalog_id": "zero", "coefficients": None}
    if isinstance(val, dict):
        extra = set(val) - {"catalog_id", "coefficients"}
        if extra:
            raise ConfigError(f"unknown psi key {sorted(extra)[0]!r}", f"psi.{sorted(extra)[0]}")
        if "catalog_id" not in val:
            raise ConfigError("psi needs a 'catalog_id'", "psi.catalog_id")
        return {"catalog_id": val["catalog_id"], "coefficients": val.get("coefficients")}
    raise ConfigError("psi must be 'zero' or an object {catalog_id, coefficients}", "psi")


@dataclass
class ExperimentConfig:
    """A validated experiment description (defaults filled in)."""

    command: str
    model: str
    psi: dict
    order: int
    params: dict = field(default_factory=dict)
    order_source: str = "default"

    @classmethod
    def from_dict(cls, command, raw, env=None):
        env = os.environ if env is None else env
        if command not in COMMANDS:
            raise ConfigError(f"unknown command {command!r}", "command")
        if not isinstance(raw, dict):
            raise ConfigError("the config must be a JSON object", None)
        for key in raw:
            if key not in ALLOWED_KEYS[command]:
                raise ConfigError(f"unknown config key {key!r} for {command}", key)
        if "command" in raw and raw["command"] != command:
            raise ConfigError(f"config is for {raw['command']!r}, not {command!r}", "command")
        model = raw.get("model", "CP1")
        if model not in MODELS:
            raise ConfigError(f"unknown model {model!r}; choose from {MODELS}", "model")
        psi = _psi_spec(raw.get("psi"))
        cfg = {**DEFAULTS[command], **{k: v for k, v in raw.items() if k in DEFAULTS[command]}}

        source, order = "default", DEFAULT_ORDER[1 if model == "CP1" else 2]
        if "order" in raw:
            order, source = _number(raw, "order", 1, 400, integer=True), "config"
        if env.get(QUAD_ORDER_ENV):
            try:
                order = int(env[QUAD_ORDER_ENV])
            except ValueError:
                raise ConfigError(f"{QUAD_ORDER_ENV} must be an integer", QUAD_ORDER_ENV) from None
            if not 1 <= order <= 400:
                raise ConfigError(f"{QUAD_ORDER_ENV} out of range", QUAD_ORDER_ENV)
            source = "env"

        checks = {
            "T": dict(lo=0.0), "dt": dict(lo=0.0, strict_lo=True), "L": dict(lo=0.0, hi=24.0,
                                                                              strict_lo=True),
            "m": dict(lo=16, hi=200001, integer=True), "nt": dict(lo=2, hi=2000, integer=True),
            "seed": dict(lo=0, integer=True), "catalog_size": dict(lo=1, hi=200, integer=True),
            "tol": dict(lo=0.0, strict_lo=True), "delta": dict(lo=0.0, hi=1.0, strict_lo=True),
        }
        for key, kw in checks.items():
            if key in cfg:
                cfg[key] = _number(cfg, key, **kw)
        if "times" in cfg:
            cfg["times"] = _number_list(cfg, "times")
        if cfg.get("epsilons") is not None:
            cfg["epsilons"] = _number_list(cfg, "epsilons", positive=True)
        if command == "flow":
            if model != "CP1":
                raise ConfigError("the flow is implemented for CP1 only", "model")
            if cfg["T"] > 0:
                steps = cfg["T"] / cfg["dt"]
                if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
                    raise ConfigError("T must be a multiple of dt", "T")
        if command == "calibrate" and model != "CP1":
            raise ConfigError("calibrate runs on CP1", "model")
        if command == "geodesic" and cfg.get("epsilons") is not None and model != "CP1":
            raise ConfigError("the epsilon-geodesic study runs on CP1", "epsilons")
        X = cfg.get("X")
        if X is not None and X != "xi0" and not isinstance(X, list):
            raise ConfigError("X must be null, 'xi0' or a list of numbers", "X")
        return cls(command, model, psi, order, cfg, source)

    def canonical(self):
        """Effective config as canonical JSON (used for the hash)."""
        d = {"command": self.command, "model": self.model, "psi": self.psi,
             "order": self.order, **self.params}
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @property
    def hash(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()


# -- artifact writing ---------------------------------------------------------

def atomic_write(path, text):
    """Write ``text`` to ``path`` via a temporary file and rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def metadata(config, flags=None, tolerances=None):
    return {
        "package_version": __version__,
        "backend": _kernels.BACKEND,
        "config_hash": config.hash,
        "config": json.loads(config.canonical()),
        "quadrature_order": config.order,
        "quadrature_order_source": config.order_source,
        "convergence_flags": flags or {},
        "tolerances": tolerances or {},
    }


def write_json(path, meta, result):
    text = json.dumps(_jsonable({"metadata": meta, "result": result}), indent=2,
                      sort_keys=True) + "\n"
    atomic_write(path, text)


def format_csv(meta, columns, rows):
    """Comment header with metadata, then a header row and ``%.17g`` body."""
    buf = io.StringIO()
    for key in sorted(meta):
        buf.write(f"# {key}: {json.dumps(_jsonable(meta[key]), sort_keys=True)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format(float(v), ".17g") for v in row])
    return buf.getvalue()


def csv_body(text):
    """The header row and data lines of a trace CSV (metadata stripped)."""
    return "".join(line for line in text.splitlines(keepends=True) if not line.startswith("#"))


# -- commands -----------------------------------------------------------------

def _metric(config):
    from .metric import get_model, SymplecticPotential
    from .terms import make_psi

    model = get_model(config.model, config.order)
    psi = make_psi(model.polytope, config.psi["catalog_id"], config.psi["coefficients"])
    u = SymplecticPotential(model, psi)
    u.check_valid()
    return model, u


def _resolve_X(config, model, u):
    from .invariants import extremal_field

    X = config.params.get("X")
    if X is None:
        return None
    if X == "xi0":
        return np.asarray(extremal_field(model, u).xi0.array, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.shape != (model.n,):
        raise ConfigError(f"X must have length {model.n}", "X")
    return X


def run_calibrate(config, out):
    from .metric import legendre_back, legendre_dual, ricci_potential
    from .flow import reference_potential

    model, u = _metric(config)
    L, m = config.params["L"], config.params["m"]
    sup_h = float(np.max(np.abs(ricci_potential(u).h)))
    cp = legendre_dual(u, L, m)
    closed = float(np.max(np.abs((cp.f - cp.f[m // 2]) - (reference_potential(cp.y)
                                                           - reference_potential(cp.y[m // 2])))))
    x = u.rule.nodes[:, 0]
    # nodes whose dual point lies inside the truncated window
    ux = u.derivatives(u.rule.nodes, 1)
    inside = np.abs(ux[1][:, 0]) < L
    back = legendre_back(cp, x[inside])
    roundtrip = float(np.max(np.abs(back - np.ravel(ux[0])[inside])))
    result = {"sup_h_reference": sup_h, "legendre_roundtrip": roundtrip,
              "legendre_closed_form": closed if config.psi["catalog_id"] == "zero" else None,
              "nodes_checked": int(np.sum(inside))}
    flags = {"sup_h_reference": sup_h < 1e-8, "legendre_roundtrip": roundtrip < 1e-8}
    write_json(os.path.join(out, "calibrate.json"),
               metadata(config, flags, {"sup_h": 1e-8, "roundtrip": 1e-8}), result)
    return result


def run_invariants(config, out):
    from .functionals import functional_report
    from .invariants import (beta_vector, extremal_field, futaki, h_invariant,
                             modified_futaki)
    from .metric import metric_catalog

    model, u = _metric(config)
    ext = extremal_field(model, u)
    basis = np.eye(model.n)
    fut = []
    for e in basis:
        fm, fg = futaki(u, e)
        fut.append({"xi": e, "F_measure": fm, "F_gradient": fg})
    resid = [modified_futaki(u, e, ext.xi0) for e in basis]
    Hrep = functional_report("H", u)

    catalog = metric_catalog(model, config.params["catalog_size"], config.params["seed"])
    H_vals = [h_invariant(w, ext.xi0) for w in catalog]
    F_vals = np.array([[futaki(w, e)[0] for e in basis] for w in catalog])
    beta_vals = np.array([beta_vector(model, w)[0] for w in catalog])
    spread = {
        "H_xi0": float(np.ptp(H_vals)),
        "futaki": float(np.max(np.ptp(F_vals, axis=0))),
        "beta": float(np.max(np.ptp(beta_vals, axis=0))),
    }
    V = model.V
    flags = {
        "extremal_routes_agree": ext.route_gap < 1e-6,
        "barycenter_residual": ext.residual < 1e-10,
        "modified_futaki_vanishes": max(abs(r) for r in resid) < 1e-5 * V,
        "futaki_routes_agree": all(abs(f["F_measure"] - f["F_gradient"])
                                   <= 1e-5 * max(abs(f["F_measure"]), 1e-8 * V) for f in fut),
        "H_functional_refined": Hrep.converged,
        "metric_independent": max(spread.values()) < 1e-6 * max(1.0, V),
    }
    result = {
        "beta": ext.beta,
        "xi0": ext.xi0.array,
        "xi0_optimizer_route": ext.optimizer_route,
        "route_gap": ext.route_gap,
        "H_xi0": ext.H_xi0,
        "H_functional": Hrep.to_dict(),
        "futaki_basis": fut,
        "modified_futaki_residuals": resid,
        "metric_spread": spread,
        "catalog": [w.label for w in catalog],
        "convergence_flags": flags,
    }
    write_json(os.path.join(out, "invariants.json"),
               metadata(config, flags, {"modified_futaki": 1e-5 * V, "routes": 1e-6}), result)
    return result


def run_flow(config, out):
    from .flow import TRACE_COLUMNS, run_krf

    _, u = _metric(config)
    p = config.params
    trace_path = os.path.join(out, "flow_trace.csv")
    try:
        state = run_krf(u, p["T"], p["dt"], p["L"], int(p["m"]))
    except StepRejected as exc:
        if exc.state is not None:
            meta = metadata(config, {"completed": False})
            atomic_write(trace_path, format_csv(meta, TRACE_COLUMNS, exc.state.trace))
        raise
    tr = state.trace_array()
    inc = float(np.max(np.diff(tr[:, 1]))) if len(tr) > 1 else 0.0
    flags = {"completed": True, "H_nonincreasing": inc < 1e-9}
    meta = metadata(config, flags, {"H_increase": 1e-9})
    atomic_write(trace_path, format_csv(meta, TRACE_COLUMNS, state.trace))
    result = {"H_initial": tr[0, 1], "H_final": tr[-1, 1], "sup_h_final": tr[-1, 2],
              "c_final": tr[-1, 3], "max_H_increase": inc, "steps": len(tr) - 1,
              "trace": "flow_trace.csv"}
    write_json(os.path.join(out, "flow.json"), meta, result)
    return result


GEODESIC_COLUMNS = ("t", "H_of_t", "F", "dF", "dFX")


def run_geodesic(config, out):
    from .geodesic import (default_ray_catalog, eps_convergence_study, path_trace,
                           ray_from_entry)

    model, u = _metric(config)
    p = config.params
    entry = p["ray"] if p["ray"] is not None else default_ray_catalog(model, p["delta"])[0]
    path = ray_from_entry(u, entry)
    X = _resolve_X(config, model, u)
    rows = []
    trace_path = os.path.join(out, "geodesic_trace.csv")
    try:
        for t in p["times"]:
            rows.extend(path_trace(path, [t], X))
    except KahlerLabError:
        atomic_write(trace_path, format_csv(metadata(config, {"completed": False}),
                                            GEODESIC_COLUMNS, rows))
        raise
    arr = np.array(rows)
    Hinc = float(np.min(np.diff(arr[:, 1]))) if len(arr) > 1 else 0.0
    flags = {"completed": True, "H_nondecreasing": Hinc >= -1e-8 * model.V}
    result = {"ray": entry, "label": path.label, "min_H_increment": Hinc,
              "trace": "geodesic_trace.csv"}
    if p["epsilons"] is not None:
        u1 = path.metric_at(p["T"])
        eps, err, slope, _ = eps_convergence_study(u, u1, 1.0, p["L"], int(p["m"]),
                                                   int(p["nt"]), p["epsilons"])
        result["eps_study"] = {"epsilons": eps, "sup_errors": err, "loglog_slope": slope}
        flags["eps_error_decreasing"] = bool(np.all(np.diff(err) < 0))
    meta = metadata(config, flags, {"H_increment": 1e-8 * model.V})
    atomic_write(trace_path, format_csv(meta, GEODESIC_COLUMNS, rows))
    write_json(os.path.join(out, "geodesic.json"), meta, result)
    return result


def run_stability(config, out):
    from .geodesic import default_ray_catalog, load_ray_catalog, stability_probe

    model, u = _metric(config)
    p = config.params
    rays = p["rays"]
    try:
        catalog = (default_ray_catalog(model, p["delta"]) if rays is None
                   else load_ray_catalog(rays))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read ray catalog: {exc}", "rays") from None
    X = _resolve_X(config, model, u)
    report = stability_probe(model, u, catalog, X=X, times=tuple(p["times"]), tol=p["tol"])
    flags = {"F_semistable_on_catalog": report["F_semistable_on_catalog"]}
    if X is not None:
        flags["FX_semistable_on_catalog"] = report["FX_semistable_on_catalog"]
    write_json(os.path.join(out, "stability.json"),
               metadata(config, flags, {"slope": p["tol"]}), report)
    return report


RUNNERS = {
    "invariants": run_invariants,
    "flow": run_flow,
    "geodesic": run_geodesic,
    "stability": run_stability,
    "calibrate": run_calibrate,
}


# -- entry point --------------------------------------------------------------

def _fail(command, out, code, exc):
    err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code,
           "command": command}
    if isinstance(exc, ConfigError):
        err["key"] = exc.key
    text = json.dumps(err, sort_keys=True)
    print(text, file=sys.stderr)
    if out is not None and command in COMMANDS:
        try:
            atomic_write(os.path.join(out, f"{command}.error.json"), text + "\n")
        except OSError:
            pass
    return code


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", "config") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON config at line {exc.lineno} column {exc.colno}: "
                          f"{exc.msg}", f"line {exc.lineno}") from None


def run(command, raw, out, env=None):
    """Validate ``raw`` and run ``command``; returns the result dict."""
    config = ExperimentConfig.from_dict(command, raw, env)
    return RUNNERS[command](config, out)


def main(argv=None):
    parser = argparse.ArgumentParser(prog="kahlerlab", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--out", default=".", help="output directory (default: .)")
    args = parser.parse_args(argv)
    try:
        raw = load_config(args.config)
        config = ExperimentConfig.from_dict(args.command, raw)
    except ConfigError as exc:
        return _fail(args.command, args.out, 2, exc)
    try:
        RUNNERS[args.command](config, args.out)
    except (ConfigError, InvalidArgument) as exc:
        return _fail(args.command, args.out, 2, exc)
    except (KahlerLabError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return _fail(args.command, args.out, 3, exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
