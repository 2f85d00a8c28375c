"""Command-line entry point.

Exit codes: 0 success, 1 malformed input, 2 precondition not met,
3 convergence failure or failed internal check.
"""

import argparse
import csv
import io
import json
import math
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConvergenceFailure, InputError, InvariantViolation, PreconditionError

SCHEMA = 1

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


# -- problem files ----------------------------------------------------------------

class Problem:
    """Parsed and validated problem file, with line lookup for diagnostics."""

    KNOWN = {"masses", "dimension", "positions", "velocities", "guess", "h0", "synthetic",
             "tolerances", "name"}

    def __init__(self, data, path=None, text=""):
        self.data = data
        self.path = path
        self.text = text
        self._validate()

    @classmethod
    def load(cls, path):
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise InputError(f"{path}: cannot read problem file ({exc.strerror})")
        if p.suffix.lower() == ".json":
            try:
                data = json.loads(text)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})")
        else:
            try:
                data = tomllib.loads(text)
            except tomllib.TOMLDecodeError as exc:
                m = re.search(r"line (\d+)", str(exc))
                line = m.group(1) if m else "?"
                raise InputError(f"{path}:{line}: invalid TOML ({exc})")
        if not isinstance(data, dict):
            raise InputError(f"{path}:1: top level must be a table")
        return cls(data, str(path), text)

    def line_of(self, key):
        m = re.search(rf'^\s*"?{re.escape(key)}"?\s*[=:]', self.text, re.M)
        return self.text[: m.start()].count("\n") + 1 if m else "?"

    def fail(self, key, msg):
        raise InputError(f"{self.path or '<input>'}:{self.line_of(key)}: key '{key}': {msg}")

    def _numbers(self, key, value, positive=False):
        if not isinstance(value, list) or not value:
            self.fail(key, "must be a nonempty array of numbers")
        out = []
        for item in value:
            if isinstance(item, list):
                out.extend(self._numbers(key, item, positive))
                continue
            if isinstance(item, bool) or not isinstance(item, (int, float)) or not math.isfinite(item):
                self.fail(key, f"non-numeric or non-finite entry {item!r}")
            if positive and item <= 0:
                self.fail(key, "entries must be strictly positive")
            out.append(float(item))
        return out

    def _validate(self):
        d = self.data
        for key in d:
            if key not in self.KNOWN:
                self.fail(key, "unknown key")
        self.masses = None
        if "synthetic" not in d or "masses" in d:
            if "masses" not in d:
                raise InputError(f"{self.path or '<input>'}:?: key 'masses': required")
            self.masses = self._numbers("masses", d["masses"], positive=True)
            if len(self.masses) < 2:
                self.fail("masses", "need at least two bodies")
            dim = d.get("dimension")
            if isinstance(dim, bool) or not isinstance(dim, int) or dim < 1:
                self.fail("dimension", "must be a positive integer")
            self.dimension = dim
            nd = len(self.masses) * dim
            for key in ("positions", "velocities"):
                if key in d:
                    vals = self._numbers(key, d[key])
                    if len(vals) != nd:
                        self.fail(key, f"expected {nd} numbers (n*d), got {len(vals)}")
                    setattr(self, key, vals)
                else:
                    setattr(self, key, None)
        if "h0" in d:
            if isinstance(d["h0"], bool) or not isinstance(d["h0"], (int, float)):
                self.fail("h0", "must be a number")
        if "guess" in d and not isinstance(d["guess"], str):
            self.fail("guess", "must be a string (builtin:NAME or a file path)")
        self.synthetic = None
        if "synthetic" in d:
            syn = d["synthetic"]
            if not isinstance(syn, dict) or "U" not in syn or "lambdas" not in syn:
                self.fail("synthetic", "must be a table with keys U and lambdas")
            u = syn["U"]
            if isinstance(u, bool) or not isinstance(u, (int, float)) or u <= 0:
                self.fail("synthetic", "U must be a positive number")
            lam = syn["lambdas"]
            if not isinstance(lam, list):
                self.fail("synthetic", "lambdas must be an array")
            self.synthetic = (float(u), [float(x) for x in lam])

    def system(self):
        from .core import MassSystem
        if self.masses is None:
            raise InputError(f"{self.path}:?: key 'masses': required for this command")
        return MassSystem(np.array(self.masses), self.dimension)

    def echo(self):
        return self.data


def _guess(problem, system, source):
    source = source or problem.data.get("guess")
    if source is None:
        if problem.positions is None:
            raise InputError(f"{problem.path}:?: key 'guess': give --guess, 'guess' or 'positions'")
        return system.normalize(system.center(problem.positions))[1]
    if source.startswith("builtin:"):
        return system.builtin(source.split(":", 1)[1])
    other = Problem.load(source) if not source.startswith("{") else Problem(json.loads(source))
    pos = other.data.get("positions")
    if pos is None:
        raise InputError(f"{source}:?: key 'positions': guess file needs positions")
    return system.normalize(system.center(other._numbers("positions", pos)))[1]


# -- output ------------------------------------------------------------------------

def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    if x is None:
        return ""
    return str(x)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


class Emitter:
    def __init__(self, args):
        self.out = getattr(args, "out", None)
        self.force = "json" if getattr(args, "json", False) else "csv" if getattr(args, "csv", False) else None

    def _write(self, text):
        if self.out:
            Path(self.out).write_text(text)
        else:
            sys.stdout.write(text)

    def json(self, payload):
        self._write(json.dumps(_jsonable(payload), indent=2) + "\n")

    def csv(self, columns, rows):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
        self._write(buf.getvalue())

    def table(self, payload, columns, rows, default="json"):
        kind = self.force or default
        if kind == "csv":
            self.csv(columns, rows)
        else:
            self.json({**payload, "columns": columns, "rows": [list(r) for r in rows]})


def _config(args, **extra):
    keep = {k: v for k, v in vars(args).items() if k not in ("func",) and not callable(v)}
    from . import central, maslov, oracle
    return {"version": __version__, "command": keep,
            "tolerances": {"residual": central.RESIDUAL_TOL, "classify": args.tol if getattr(args, "tol", None) is not None else central.CLASSIFY_TOL,
                           "kernel_rtol": central.KERNEL_RTOL,
                           "intersection": maslov.INTERSECTION_TOL, "crossing_locate": maslov.LOCATE_TOL,
                           "fem_negative_rtol": oracle.NEGATIVE_RTOL, "fem_near_zero_rtol": oracle.NEAR_ZERO_RTOL},
            "threads": threads(), **extra}


def threads():
    raw = os.environ.get("MASLOV_NBODY_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise InputError(f"MASLOV_NBODY_THREADS={raw!r}: must be a positive integer")
    if n < 1:
        raise InputError(f"MASLOV_NBODY_THREADS={raw!r}: must be a positive integer")
    return n


def _pair(text, name):
    try:
        parts = [float(p) for p in text.split(",")]
    except ValueError:
        raise InputError(f"--{name} {text!r}: expected two numbers a,b")
    if len(parts) != 2:
        raise InputError(f"--{name} {text!r}: expected two numbers a,b")
    return parts


def _problem(args, required=True):
    if getattr(args, "input", None) is None:
        if required:
            raise InputError("--input is required for this command")
        return None
    return Problem.load(args.input)


def _h0(args, problem, default=None):
    if getattr(args, "h0", None) is not None:
        return float(args.h0)
    if problem is not None and "h0" in problem.data:
        return float(problem.data["h0"])
    if default is None:
        raise InputError("energy needed: pass --h0 or set 'h0' in the problem file")
    return default


# -- commands ------------------------------------------------------------------------

def _find(args, problem):
    from .central import find_cc
    system = problem.system()
    return find_cc(system, _guess(problem, system, args.guess), tol=args.tol if args.tol is not None else 1e-8)


def cmd_cc(args, emit):
    from .central import classify, kernel_dim
    problem = _problem(args)
    cc = _find(args, problem)
    out = cc.to_dict()
    if args.action == "classify":
        out["class"] = classify(cc, args.tol if args.tol is not None else 1e-8)
        out["kernel_dim"] = kernel_dim(cc)
    emit.json({"schema": SCHEMA, "config": _config(args, problem=problem.echo()), **out,
               "iterations": cc.iterations})


def _initial_state(args, problem, system, kind, h0):
    from .mcgehee import MCGEHEE, BlowupState, cartesian_energy, from_cartesian
    from .core import Chart
    if problem.velocities is not None:
        if problem.positions is None:
            problem.fail("velocities", "velocities need positions")
        q = system.center(problem.positions)
        qdot = system.center(problem.velocities)
        e = cartesian_energy(system, q, qdot)
        if h0 is not None and abs(e - h0) > 1e-9 * max(1.0, abs(e)):
            raise InputError(f"--h0 {h0} disagrees with the energy {e!r} of the initial data")
        return from_cartesian(system, q, qdot, kind), e
    r, s = system.normalize(system.center(problem.positions) if problem.positions is not None
                            else _guess(problem, system, getattr(args, "guess", None)))
    if h0 is None:
        raise InputError("energy needed: pass --h0 or give velocities")
    u_val = system.potential(s)
    if h0 < 0:
        r = u_val / abs(h0)
        v = 0.0
    elif kind == MCGEHEE:
        v = math.sqrt(2.0 * (u_val + r * h0))
    else:
        v = math.sqrt(2.0 * (h0 + u_val / r))
    chart = Chart.at(system, s)
    return BlowupState(kind, v, np.zeros(chart.dim), r, np.zeros(chart.dim), chart, 0.0, 0.0), h0


def cmd_flow(args, emit):
    from .mcgehee import asymptotic_diagnostics, integrate
    problem = _problem(args)
    system = problem.system()
    h0 = args.h0 if args.h0 is not None else problem.data.get("h0")
    state, h0 = _initial_state(args, problem, system, args.kind, None if h0 is None else float(h0))
    a, b = _pair(args.tau_span, "tau-span")
    traj = integrate(state, (a, b), h0, rtol=args.rtol, atol=args.atol)
    payload = {"schema": SCHEMA, "config": _config(args, problem=problem.echo(),
                                                    chart=state.chart.describe()),
               "max_energy_residual": traj.max_energy_residual,
               "projections": len(traj.projections), "recenters": traj.recenters}
    if emit.force == "json":
        payload["diagnostics"] = asymptotic_diagnostics(traj)
    emit.table(payload, traj.columns(), traj.to_rows(), default="csv")


def _load_path(source):
    """Coefficient path from a JSON description."""
    from .linear import CoefficientPath
    from .homothetic import eigen_path, radial_path, synthetic_orbit, assembled_path
    try:
        data = json.loads(Path(source).read_text()) if not source.lstrip().startswith("{") else json.loads(source)
    except OSError as exc:
        raise InputError(f"{source}: cannot read coefficient file ({exc.strerror})")
    except json.JSONDecodeError as exc:
        raise InputError(f"{source}:{exc.lineno}: invalid JSON ({exc.msg})")
    kind = data.get("kind")
    try:
        if kind == "constant":
            return CoefficientPath.constant(np.array(data["matrix"], dtype=float)), data
        if kind == "samples":
            return CoefficientPath.from_samples(data["tau"], data["matrices"]), data
        if kind in ("eigen-block", "radial-block", "homothetic"):
            orbit = synthetic_orbit(data["b"], data.get("lambdas", []), data.get("h0", -1.0))
            if kind == "eigen-block":
                return eigen_path(orbit, data["lambda"]), data
            if kind == "radial-block":
                return radial_path(orbit), data
            return assembled_path(orbit), data
    except KeyError as exc:
        raise InputError(f"{source}:?: key {exc.args[0]!r}: required for kind {kind!r}")
    except (TypeError, ValueError) as exc:
        raise InputError(f"{source}:?: key 'kind': {exc}")
    raise InputError(f"{source}:?: key 'kind': expected constant, samples, eigen-block, radial-block or homothetic")


def _dump(path, B, a, b, target, samples=201):
    if not target:
        return
    lo = a if math.isfinite(a) else -40.0
    hi = b if math.isfinite(b) else 40.0
    n = B.dim
    with open(target, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tau"] + [f"b{i}_{j}" for i in range(n) for j in range(n)])
        for t in np.linspace(lo, hi, samples):
            w.writerow([_fmt(t)] + [_fmt(x) for x in B(t).ravel()])


def cmd_maslov(args, emit):
    from .maslov import dirichlet, dirichlet_path, maslov_index, mu_nu, neumann
    src = args.path or args.input
    if src is None:
        raise InputError("--path (or --input) with a coefficient description is required")
    B, desc = _load_path(src)
    a, b = _pair(args.span, "span")
    W = dirichlet(B.k) if args.against == "dirichlet" else neumann(B.k)
    _dump(src, B, a, b, args.dump_coeff)
    if math.isinf(a) or math.isinf(b):
        if not (a == -math.inf):
            raise InputError("--span: infinite spans must start at -inf")
        tau0 = 0.0
        rep = mu_nu(B, tau0=tau0, against=W, full_line=math.isinf(b))
        out = rep.to_dict()
    else:
        res = maslov_index(W, dirichlet_path(B, a, b), a, b)
        out = {"maslov": res.value, "nu": None, "morse": res.value - B.k if args.against == "dirichlet" else None,
               "truncation": None, **res.to_dict()}
    emit.json({"schema": SCHEMA, "config": _config(args, path=desc), "against": args.against, **out})


def _orbit(args, problem, h0):
    from .homothetic import build_orbit, synthetic_orbit
    if problem.synthetic is not None:
        u, lam = problem.synthetic
        return synthetic_orbit(u, lam, h0), None
    cc = _find(args, problem)
    return build_orbit(cc, h0), cc


def cmd_homothetic(args, emit):
    if args.action == "growth":
        return cmd_growth(args, emit)
    from .homothetic import homothetic_morse
    problem = _problem(args)
    h0 = _h0(args, problem)
    orbit, cc = _orbit(args, problem, h0)
    cert = homothetic_morse(orbit, workers=threads())
    extra = {"chart_base": cc.s0.s.tolist()} if cc is not None else {}
    emit.json({"schema": SCHEMA,
               "config": _config(args, problem=problem.echo(), tau_max=orbit.tau_max, **extra),
               "morse": cert.morse, "per_block": cert.per_block, "class": orbit.spiral_class,
               "lambdas": orbit.lambdas.tolist(), "U0": orbit.b, "ends": list(orbit.ends),
               "certificate": cert.to_dict()})


def _schedule(text):
    m = re.fullmatch(r"geometric:([^,]+),([^,]+),(\d+)", text or "")
    if not m:
        raise InputError(f"--t2-schedule {text!r}: expected geometric:BETA_START,BETA_STOP,COUNT")
    start, stop, count = float(m.group(1)), float(m.group(2)), int(m.group(3))
    if not (start > 0 and stop > 0 and count >= 1):
        raise InputError("--t2-schedule: beta values must be positive and count >= 1")
    return start, stop, count


def cmd_growth(args, emit):
    from .homothetic import geometric_log_betas, growth_rate
    problem = _problem(args)
    h0 = _h0(args, problem, default=-1.0)
    orbit, _ = _orbit(args, problem, h0)
    start, stop, count = _schedule(args.t2_schedule)
    rep = growth_rate(orbit, geometric_log_betas(start, stop, count), eps=args.eps)
    t_plus = orbit.collision_times[1]
    cols = ["t2", "beta", "log_beta", "tau2", "morse", "ratio", "target", "sandwich_lower",
            "morse_from_tau_eps", "sandwich_upper"]
    rows = [[t_plus - math.exp(s.log_beta), math.exp(s.log_beta), s.log_beta, s.tau2, s.morse,
             s.ratio, rep.target, s.lower, s.morse_from_eps, s.upper] for s in rep.samples]
    payload = {"schema": SCHEMA, "config": _config(args, problem=problem.echo()),
               "target": rep.target, "limit_from_time_map": rep.limit_from_tau,
               "eps": rep.eps, "tau_eps": rep.tau_eps, "sandwich_holds": rep.sandwich_holds,
               "ratio_bounds": list(rep.ratio_bounds), "collision_time": t_plus}
    emit.table(payload, cols, rows, default="csv")


def cmd_oracle(args, emit):
    from .oracle import compare, harmonic_surrogate, homothetic_position, newtonian_path
    from .homothetic import build_orbit
    a, b = _pair(args.window, "window")
    try:
        ns = [int(x) for x in args.refine.split(",")]
    except ValueError:
        raise InputError(f"--refine {args.refine!r}: expected comma-separated integers")
    if len(ns) < 3:
        raise InputError("--refine: need at least three mesh sizes")
    source = {}
    if args.path:
        B, source = _load_path(args.path)
    elif args.input:
        problem = _problem(args)
        h0 = _h0(args, problem)
        cc = _find(args, problem)
        orbit = build_orbit(cc, h0)
        B = newtonian_path(cc.system, homothetic_position(orbit))
        source = {"homothetic": orbit.to_dict(), "collision_times": list(orbit.collision_times)}
    else:
        B = harmonic_surrogate()
        source = {"surrogate": "harmonic"}
    v = compare(B, (a, b), ns)
    emit.json({"schema": SCHEMA, "config": _config(args, source=source), **v.to_dict()})
    return 0


def cmd_verify(args, emit):
    problem = _problem(args)
    emit.json({"schema": SCHEMA, "input": problem.path, "parsed": problem.echo()})


# -- parser ---------------------------------------------------------------------------

def _common(suppress=False):
    """Shared flags; the subcommand copy suppresses defaults so values given
    before the subcommand are not overwritten."""
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    flag = {"default": argparse.SUPPRESS} if suppress else {"default": False}
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--input", help="problem file (TOML or JSON)", **kw)
    p.add_argument("--h0", type=float, help="energy", **kw)
    p.add_argument("--tol", type=float, help="classification tolerance", **kw)
    p.add_argument("--out", help="write output here instead of stdout", **kw)
    p.add_argument("--json", action="store_true", help="JSON output", **flag)
    p.add_argument("--csv", action="store_true", help="CSV output", **flag)
    p.add_argument("--verify-input", action="store_true",
                   help="parse and echo the problem file, then exit", **flag)
    return p


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(f"{self.prog}: {message}")


def build_parser():
    parser = _Parser(prog="maslov-nbody", description=__doc__.splitlines()[0],
                     parents=[_common()])
    common = _common(suppress=True)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    cc = sub.add_parser("cc", parents=[common], help="central configurations")
    cc.add_argument("action", choices=["find", "classify"])
    cc.add_argument("--guess", help="builtin:equilateral|builtin:collinear|builtin:two-body or a file")
    cc.set_defaults(func=cmd_cc)

    flow = sub.add_parser("flow", parents=[common], help="blow-up flow")
    flow.add_argument("action", choices=["integrate"])
    flow.add_argument("--kind", default="mcgehee", choices=["mcgehee", "hyperbolic", "hyperbolic-mcgehee"])
    flow.add_argument("--tau-span", required=True)
    flow.add_argument("--guess")
    flow.add_argument("--rtol", type=float, default=1e-10)
    flow.add_argument("--atol", type=float, default=1e-12)
    flow.set_defaults(func=cmd_flow)

    ms = sub.add_parser("maslov", parents=[common], help="Maslov index of a coefficient path")
    ms.add_argument("--path", help="coefficient path description (JSON file or inline)")
    ms.add_argument("--span", required=True, help="a,b (a may be -inf, b may be inf)")
    ms.add_argument("--against", default="dirichlet", choices=["dirichlet", "neumann"])
    ms.add_argument("--dump-coeff", help="write sampled coefficient matrices to this CSV")
    ms.set_defaults(func=cmd_maslov)

    ho = sub.add_parser("homothetic", parents=[common], help="homothetic orbits")
    ho.add_argument("action", choices=["index", "growth"])
    ho.add_argument("--guess")
    ho.add_argument("--t2-schedule", default="geometric:1e-2,1e-300,25")
    ho.add_argument("--eps", type=float, default=1e-3)
    ho.set_defaults(func=cmd_homothetic)

    gr = sub.add_parser("growth", parents=[common], help="index growth at a spiral collision")
    gr.add_argument("--guess")
    gr.add_argument("--t2-schedule", default="geometric:1e-2,1e-300,25")
    gr.add_argument("--eps", type=float, default=1e-3)
    gr.set_defaults(func=cmd_growth)

    orc = sub.add_parser("oracle", parents=[common], help="finite-element Morse index")
    orc.add_argument("action", choices=["compare"])
    orc.add_argument("--window", required=True)
    orc.add_argument("--refine", default="200,400,800")
    orc.add_argument("--path", help="coefficient path description; default harmonic surrogate")
    orc.add_argument("--guess")
    orc.set_defaults(func=cmd_oracle)
    return parser


def exit_code(exc):
    if isinstance(exc, InputError):
        return 1
    if isinstance(exc, PreconditionError):
        return 2
    if isinstance(exc, (ConvergenceFailure, InvariantViolation)):
        return 3
    return 3


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        emit = Emitter(args)
        if args.verify_input:
            cmd_verify(args, emit)
            return 0
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        args.func(args, emit)
        return 0
    except Exception as exc:
        from .errors import MaslovNBodyError
        if not isinstance(exc, MaslovNBodyError):
            raise
        code = exit_code(exc)
        sys.stderr.write(f"error: {exc}\n")
        if isinstance(exc, ConvergenceFailure) and exc.best is not None:
            best = exc.best
            if isinstance(best, tuple) and best and isinstance(best[0], float):
                sys.stderr.write(f"best residual: {best[0]:.3e}\n")
        return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
