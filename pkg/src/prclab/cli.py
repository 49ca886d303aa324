"""Command-line front end.

    prclab <orbit|prc|sens|robustness|identify|classify|dist> --config <path> [--out <dir>]

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.
Errors are reported as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from jsonschema import Draft202012Validator

from prclab.analysis import classify, identify, robustness
from prclab.errors import NumericalError
from prclab.metrics import PrcSpace, distance_info
from prclab.models import MODELS, get_model
from prclab.orbit import SCHEMES, solve_orbit
from prclab.prc import Impulse, adjoint_prc, direct_prc
from prclab.sensitivity import relative_sensitivity, sensitivity_bundle
from prclab.signals import PhaseSignal, uniform_grid

SCHEMA_VERSION = "prclab/1"
COMMANDS = ("orbit", "prc", "sens", "robustness", "identify", "classify", "dist")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_space = {"enum": ["A", "B", "C", "D"]}
_params = {"type": "object", "additionalProperties": _num}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["schema"],
    "properties": {
        "schema": {"const": SCHEMA_VERSION},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"enum": list(MODELS)},
                "params": _params,
                "sweep": {"type": "array", "items": {"type": "string"}, "minItems": 1},
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "N": {"type": "integer", "minimum": 4},
                "scheme": {"enum": list(SCHEMES)},
                "tol": _pos,
                "max_iter": {"type": "integer", "minimum": 1},
                "settle_time": _pos,
                "x_seed": {"type": "array", "items": _num},
            },
        },
        "space": _space,
        "seed": {"type": "integer", "minimum": 0},
        "prc": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "alphas": {"type": "array", "items": _num},
                "stride": {"type": "integer", "minimum": 1},
                "eps": _pos,
                "max_periods": {"type": "integer", "minimum": 1},
            },
        },
        "sens": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"params": {"type": "array", "items": {"type": "string"}}},
        },
        "robustness": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "scaling": {"enum": ["absolute", "relative"]},
                "groups": {"type": "object", "additionalProperties": {"type": "string"}},
            },
        },
        "identify": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "target": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"params": _params, "file": {"type": "string"}},
                },
                "start": _params,
                "starts": {"type": "integer", "minimum": 1},
                "spread": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "params": {"type": "array", "items": {"type": "string"}},
                "max_iter": {"type": "integer", "minimum": 0},
                "tol": _pos,
            },
        },
        "classify": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"file": {"type": "string"}, "tie_tol": {"type": "number", "minimum": 0}},
        },
        "dist": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "files": {"type": "array", "items": {"type": "string"}, "minItems": 2, "maxItems": 2},
                "spaces": {"type": "array", "items": _space, "minItems": 1},
            },
        },
    },
}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# io helpers


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def _atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: str, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    _atomic_write(path, buf.getvalue())


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return [_jsonable(v) for v in o.tolist()]
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    return o


def write_json(path: str, obj) -> None:
    _atomic_write(path, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def read_signal(path: str) -> PhaseSignal:
    """PhaseSignal from a CSV with a header; uses column 'q' if present, else the second column."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    if len(rows) < 3:
        raise UsageError(f"{path}: expected a header and at least two rows")
    header = rows[0]
    col = header.index("q") if "q" in header else 1
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError:
        raise UsageError(f"{path}: non-numeric entry") from None
    q = data[:, col]
    if "theta" in header:
        th = data[:, header.index("theta")]
        if not np.allclose(th, uniform_grid(th.size), atol=1e-9):
            raise UsageError(f"{path}: theta column is not the uniform grid 2*pi*i/N")
    return PhaseSignal(q)


# ---------------------------------------------------------------------------
# config


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc.msg} (line {exc.lineno})") from None
    errors = sorted(Draft202012Validator(CONFIG_SCHEMA).iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        pointer = "/" + "/".join(str(p) for p in e.absolute_path)
        raise UsageError(f"config schema violation at {pointer}: {e.message}")
    return cfg


def _model(cfg):
    mc = cfg.get("model")
    if mc is None:
        raise UsageError("config needs a 'model' section for this command")
    try:
        return get_model(mc["name"], mc.get("params"), mc.get("sweep"))
    except (TypeError, ValueError, KeyError) as exc:
        raise UsageError(f"model: {exc}") from None


def _solver(cfg):
    s = cfg.get("solver", {})
    return dict(N=s.get("N", 256), scheme=s.get("scheme", "trapezoidal"), tol=s.get("tol", 1e-10),
                max_iter=s.get("max_iter", 50), settle_time=s.get("settle_time"), x_seed=s.get("x_seed"))


def _solve(model, cfg, lam=None):
    return solve_orbit(model, lam, **_solver(cfg))


def _lam_from(model, params: dict | None, base=None):
    lam = model.params(base).copy()
    for k, v in (params or {}).items():
        try:
            lam[model.index(k)] = v
        except KeyError as exc:
            raise UsageError(str(exc.args[0])) from None
    return lam


def _out(out_dir, name):
    return os.path.join(out_dir, name)


# ---------------------------------------------------------------------------
# commands


def cmd_orbit(cfg, out_dir):
    model = _model(cfg)
    orbit = _solve(model, cfg)
    names = model.state_names or tuple(f"x_{i + 1}" for i in range(model.n))
    write_csv(_out(out_dir, "orbit.csv"), ("theta",) + tuple(names),
              [(th, *x) for th, x in zip(orbit.theta, orbit.x)])
    header = {"model": model.name, "omega": orbit.omega, "period": orbit.period,
              "residual_norm": orbit.residual_norm, "scheme": orbit.scheme, "N": orbit.N,
              "lam": dict(zip(model.param_names, orbit.lam)), "phase_condition": orbit.phase_cond.to_dict()}
    write_json(_out(out_dir, "orbit.json"), header)
    return header


def cmd_prc(cfg, out_dir):
    model = _model(cfg)
    orbit = _solve(model, cfg)
    g, q = adjoint_prc(model, orbit)
    write_csv(_out(out_dir, "prc.csv"), ("theta", "q"), zip(q.theta, q.values))
    pc = cfg.get("prc", {})
    summary = {"omega": orbit.omega, "xi": g.xi, "normalization_error": g.normalization_error(orbit, model),
               "q_sup": float(np.abs(q.values).max())}
    alphas = pc.get("alphas", [])
    if alphas:
        stride = pc.get("stride", 1)
        phases = orbit.theta[:-1:stride]
        qs = q.values[::stride]
        cols, agreement = [], {}
        for a in alphas:
            fp = direct_prc(model, orbit, Impulse(a), phases, eps=pc.get("eps"),
                            max_periods=pc.get("max_periods", 50))
            cols.append(fp.shift)
            if a != 0:
                agreement[repr(float(a))] = float(np.abs(fp.shift / a - qs).max() / np.abs(q.values).max())
        write_csv(_out(out_dir, "prc_direct.csv"), ["theta"] + [f"delta_theta_{float(a)!r}" for a in alphas],
                  [(th, *vals) for th, vals in zip(phases, np.array(cols).T)])
        summary["direct_vs_adjoint_relative_sup_error"] = agreement
    write_json(_out(out_dir, "prc.json"), summary)
    return summary


def _bundle(model, cfg):
    orbit = _solve(model, cfg)
    names = cfg.get("sens", {}).get("params")
    try:
        b = sensitivity_bundle(model, orbit, params=names)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None
    return orbit, b


def cmd_sens(cfg, out_dir):
    model = _model(cfg)
    orbit, b = _bundle(model, cfg)
    cols = []
    for name, sq in zip(b.param_names, b.S_q):
        cols.append(sq.values)
    write_csv(_out(out_dir, "sens.csv"), ["theta", "q"] + [f"S_q_{n}" for n in b.param_names],
              [(th, qv, *vals) for th, qv, vals in zip(b.q.theta, b.q.values, np.array(cols).T)])
    rep = {"omega": b.omega, "period": b.period, "params": {}}
    for j, name in enumerate(b.param_names):
        rep["params"][name] = {
            "value": b.lam[j], "S_omega": b.S_omega[j], "S_T": b.S_T[j],
            "sigma_omega": float(relative_sensitivity(b.omega, b.S_omega[j], b.lam[j])) if b.lam[j] else None,
            "sigma_T": float(relative_sensitivity(b.period, b.S_T[j], b.lam[j])) if b.lam[j] else None,
        }
    write_json(_out(out_dir, "sens.json"), rep)
    return rep


def cmd_robustness(cfg, out_dir):
    model = _model(cfg)
    orbit, b = _bundle(model, cfg)
    rc = cfg.get("robustness", {})
    groups = rc.get("groups", {})
    rep = robustness(model, orbit, b, cfg.get("space", "D"), rc.get("scaling", "relative"),
                     [groups.get(n, "") for n in b.param_names])
    rows = [(n, rep.groups[j], rep.R_omega[j], rep.R_q[j], rep.rho_omega[j], rep.rho_q[j])
            for j, n in enumerate(b.param_names)]
    write_csv(_out(out_dir, "robustness.csv"), ("param", "group", "R_omega", "R_q", "rho_omega", "rho_q"), rows)
    out = {"space": rep.space.value, "scaling": rep.scaling, "degenerate": rep.degenerate,
           "ranking_q": [b.param_names[j] for j in rep.order_q],
           "ranking_omega": [b.param_names[j] for j in rep.order_omega]}
    write_json(_out(out_dir, "robustness.json"), out)
    return out


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("PRCLAB_THREADS", "1")))
    except ValueError:
        raise UsageError("PRCLAB_THREADS must be an integer") from None


def cmd_identify(cfg, out_dir):
    model = _model(cfg)
    ic = cfg.get("identify", {})
    space = cfg.get("space", "D")
    sv = _solver(cfg)
    tgt = ic.get("target")
    if not tgt or ("params" in tgt) == ("file" in tgt):
        raise UsageError("identify.target needs exactly one of 'params' or 'file'")
    if "file" in tgt:
        q_ref = read_signal(tgt["file"])
    else:
        lam_t = _lam_from(model, tgt["params"])
        _, q_ref = adjoint_prc(model, solve_orbit(model, lam_t, **sv))
    lam0 = _lam_from(model, ic.get("start"))
    names = ic.get("params")
    try:
        idx = [model.index(n) for n in names] if names else list(range(model.l))
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None
    starts = [lam0]
    rng = np.random.default_rng(cfg.get("seed", 0))
    spread = ic.get("spread", 0.2)
    for _ in range(ic.get("starts", 1) - 1):
        s = lam0.copy()
        s[idx] *= 1 + rng.uniform(-spread, spread, size=len(idx))
        starts.append(s)

    def run(l0):
        return identify(model, q_ref, l0, space, max_iter=ic.get("max_iter", 100), tol=ic.get("tol", 1e-12),
                        params=idx, N=q_ref.N, scheme=sv["scheme"], newton_tol=sv["tol"])

    with ThreadPoolExecutor(max_workers=min(_threads(), len(starts))) as ex:
        results = list(ex.map(run, starts))
    rows = []
    for k, st in enumerate(results):
        for it, (lam, cost) in enumerate(st.trace):
            rows.append((k, it, *lam, cost))
    write_csv(_out(out_dir, "identify_trace.csv"), ("start", "iter") + model.param_names + ("cost",), rows)
    best = int(np.argmin([st.cost for st in results]))
    rep = {"space": str(PrcSpace(space).value), "best_start": best, "starts": [
        {"start": dict(zip(model.param_names, s)), "final": dict(zip(model.param_names, st.lam)),
         "cost": st.cost, "dist": st.dist, "iterations": st.iterations, "status": st.status,
         "boundary": st.boundary} for s, st in zip(starts, results)]}
    write_json(_out(out_dir, "identify.json"), rep)
    return rep


def cmd_classify(cfg, out_dir):
    cc = cfg.get("classify", {})
    if "file" in cc:
        q = read_signal(cc["file"])
    else:
        model = _model(cfg)
        _, q = adjoint_prc(model, _solve(model, cfg))
    c = classify(q, cfg.get("space", "D"), cc.get("tie_tol", 1e-9))
    rep = {"label": c.label, "d_I": c.d_I, "d_II": c.d_II, "space": c.space.value}
    write_json(_out(out_dir, "classify.json"), rep)
    return rep


def cmd_dist(cfg, out_dir, files=()):
    dc = cfg.get("dist", {})
    files = list(files) or dc.get("files", [])
    if len(files) != 2:
        raise UsageError("dist needs exactly two signal files (config dist.files or positional)")
    q1, q2 = read_signal(files[0]), read_signal(files[1])
    if q1.N != q2.N:
        raise UsageError(f"signals have different lengths ({q1.N} vs {q2.N})")
    spaces = dc.get("spaces", [cfg.get("space", "D")])
    rep = {}
    for s in spaces:
        try:
            d = distance_info(s, q1, q2)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        rep[s] = {"distance": d.value, "sigma": d.sigma, "fallback": d.fallback}
    write_json(_out(out_dir, "dist.json"), rep)
    return rep


# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="prclab", description="Periodic orbits, phase response curves and their sensitivities.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("files", nargs="*", help="signal CSV files (dist)")
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", default=".", help="output directory (default: current directory)")
    return p


def _fail(code, kind, message):
    sys.stderr.write(json.dumps({"error": kind, "message": message}, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_intermixed_args(argv)
        cfg = load_config(args.config)
        fn = globals()[f"cmd_{args.command}"]
        if args.command == "dist":
            rep = fn(cfg, args.out, args.files)
        else:
            if args.files:
                raise UsageError(f"{args.command} takes no positional files")
            rep = fn(cfg, args.out)
    except UsageError as exc:
        return _fail(1, "usage", str(exc))
    except NumericalError as exc:
        return _fail(2, type(exc).__name__, str(exc))
    sys.stdout.write(json.dumps(_jsonable(rep), sort_keys=True) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
