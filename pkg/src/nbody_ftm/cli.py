"""Command-line front end driven by TOML experiment files.

    nbody <command> --spec FILE [--out DIR] [--seed N] [--segments N] [--quiet]

A spec file holds a ``[system]`` table (``masses``, ``dim``, ``G``), an
optional top-level ``seed`` and ``out``, and exactly one payload table named
after the command: ``[minimize]``, ``[flow]``, ``[classify]``,
``[fit-bounds]``, ``[verify-bounds]`` or ``[sweep]``. Body indices are
0-based.

Exit codes: 0 ok, 2 spec error, 3 non-convergence (outputs still written),
4 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import math
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .action import DiscretePath, action
from .bounds import (
    BoundConstants,
    FitError,
    SampleSpec,
    draw_lemma_cases,
    fit_partition_constants,
    lemma1_check,
)
from .core import ClusterPartition, MassSystem, UsageError
from .dynamics import Trajectory, classify, integrate
from .experiments import energy_case
from .minimize import SolveOptions, minimize_fixed_time, minimize_free_time

COMMANDS = ("minimize", "flow", "classify", "fit-bounds", "verify-bounds", "sweep")
EXIT_OK, EXIT_SPEC, EXIT_NONCONVERGED, EXIT_IO = 0, 2, 3, 4


class SpecError(Exception):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.17g}"
    return str(v)


# --- spec loading -----------------------------------------------------------

def _line_of(text: str, key: str) -> int | None:
    pat = re.compile(rf'^\s*(\[\s*"?{re.escape(key)}"?\s*\]|"?{re.escape(key)}"?\s*=)')
    for k, line in enumerate(text.splitlines(), 1):
        if pat.match(line):
            return k
    return None


def load_spec(path: Path, command: str) -> tuple[dict, str, str]:
    """Parse and validate a spec; returns (data, text, sha256)."""
    raw = path.read_bytes()
    text = raw.decode("utf-8")
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise SpecError(str(exc), int(m.group(1)) if m else None) from None
    payloads = [k for k in data if k in COMMANDS]
    if len(payloads) != 1:
        second = payloads[1] if len(payloads) > 1 else None
        raise SpecError(f"expected exactly one command payload, found {payloads or 'none'}",
                        _line_of(text, second) if second else None)
    if payloads[0] != command:
        raise SpecError(f"spec payload [{payloads[0]}] does not match command {command!r}",
                        _line_of(text, payloads[0]))
    if "system" not in data:
        raise SpecError("missing [system] table")
    return data, text, hashlib.sha256(raw).hexdigest()


def _system(data: dict, text: str) -> MassSystem:
    s = data["system"]
    try:
        return MassSystem(tuple(s["masses"]), int(s.get("dim", 2)), float(s.get("G", 1.0)))
    except KeyError as exc:
        raise SpecError(f"[system] is missing {exc}", _line_of(text, "system")) from None
    except (UsageError, TypeError, ValueError) as exc:
        raise SpecError(f"[system]: {exc}", _line_of(text, "system")) from None


def _require(payload: dict, key: str, text: str, section: str):
    if key not in payload:
        raise SpecError(f"[{section}] is missing key {key!r}", _line_of(text, section))
    return payload[key]


def _array(payload, key, text, section, shape=None):
    arr = np.asarray(_require(payload, key, text, section), dtype=float)
    if shape is not None and arr.shape != shape:
        raise SpecError(f"{key} has shape {arr.shape}, expected {shape}", _line_of(text, key))
    return arr


def _partition(payload, sys, text):
    if "partition" not in payload:
        return ClusterPartition.single(sys.n_bodies)
    try:
        return ClusterPartition(tuple(tuple(c) for c in payload["partition"]), sys.n_bodies)
    except (UsageError, TypeError) as exc:
        raise SpecError(str(exc), _line_of(text, "partition")) from None


def _solve_options(payload, seed, segments):
    kw = {k: payload[k] for k in ("grad_tol", "max_iters", "collision_floor", "tau_rel_tol")
          if k in payload}
    kw["segments"] = int(segments if segments is not None else payload.get("segments", 64))
    return SolveOptions(seed=seed, **kw)


# --- report emission --------------------------------------------------------

def path_csv(path: DiscretePath) -> str:
    dim = path.nodes.shape[2]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "body"] + [f"x{d}" for d in range(dim)])
    for t, q in zip(path.times, path.nodes):
        for b, xb in enumerate(q):
            w.writerow([fmt(t), b] + [fmt(v) for v in xb])
    return buf.getvalue()


def traj_csv(traj: Trajectory) -> str:
    dim = traj.positions.shape[2]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "body"] + [f"x{d}" for d in range(dim)] + [f"v{d}" for d in range(dim)])
    for t, q, v in zip(traj.times, traj.positions, traj.velocities):
        for b in range(q.shape[0]):
            w.writerow([fmt(t), b] + [fmt(c) for c in q[b]] + [fmt(c) for c in v[b]])
    return buf.getvalue()


def rows_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.writer(buf, lineterminator="\n")
        keys = list(rows[0])
        w.writerow(keys)
        for r in rows:
            w.writerow([fmt(r[k]) for k in keys])
    return buf.getvalue()


def _table(text: str):
    rows = list(csv.reader(io.StringIO(text)))
    return rows[0], np.array(rows[1:], dtype=float)


def read_path_csv(file) -> DiscretePath:
    header, data = _table(Path(file).read_text())
    n = int(data[:, 1].max()) + 1
    dim = len(header) - 2
    times = data[::n, 0]
    return DiscretePath(times, data[:, 2:2 + dim].reshape(-1, n, dim))


def read_traj_csv(file, masses=None) -> Trajectory:
    header, data = _table(Path(file).read_text())
    n = int(data[:, 1].max()) + 1
    dim = (len(header) - 2) // 2
    times = data[::n, 0]
    pos = data[:, 2:2 + dim].reshape(-1, n, dim)
    vel = data[:, 2 + dim:2 + 2 * dim].reshape(-1, n, dim)
    return Trajectory(times, pos, vel, masses=tuple(masses) if masses else (1.0,) * n)


def summary_text(items: dict) -> str:
    return "".join(f"{k}={fmt(v)}\n" for k, v in items.items())


def emit_report(out: Path, files: dict[str, str]) -> None:
    """Write report files (name -> text) under ``out`` with LF endings."""
    out.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        with open(out / name, "w", newline="\n") as fh:
            fh.write(text)


def _partition_str(P: ClusterPartition) -> str:
    return "|".join("{" + ",".join(str(i) for i in c) + "}" for c in P.classes)


def _result_summary(res, prefix=""):
    return {
        f"{prefix}value": res.value,
        f"{prefix}tau": res.tau,
        f"{prefix}grad_norm": res.grad_norm,
        f"{prefix}iterations": res.iterations,
        f"{prefix}converged": res.converged,
        f"{prefix}status": res.status,
        f"{prefix}interior_min_distance": res.interior_min_distance,
        f"{prefix}collision_floor": res.collision_floor,
    }


# --- commands ---------------------------------------------------------------

def cmd_minimize(sys, p, text, seed, segments):
    opts = _solve_options(p, seed, segments)
    shape = (sys.n_bodies, sys.dim)
    x = _array(p, "x", text, "minimize", shape)
    x_end = _array(p, "x_end", text, "minimize", shape)
    h = float(p.get("h", 0.0))
    if "tau" in p:
        res = minimize_fixed_time(sys, x, x_end, float(p["tau"]), h, opts)
    else:
        res = minimize_free_time(sys, x, x_end, h, opts)
    summary = {"mode": "fixed" if "tau" in p else "free", "h": h, "segments": opts.segments}
    summary.update(_result_summary(res))
    files = {}
    if res.path is not None:
        files["path.csv"] = path_csv(res.path)
    return summary, files, res.converged


def _flow(sys, p, text, section):
    shape = (sys.n_bodies, sys.dim)
    x0 = _array(p, "x0", text, section, shape)
    v0 = _array(p, "v0", text, section, shape)
    horizon = float(_require(p, "horizon", text, section))
    kw = {k: p[k] for k in ("t_first", "samples") if k in p}
    return integrate(sys, x0, v0, horizon, float(p.get("tol", 1e-9)), **kw)


def cmd_flow(sys, p, text, seed, segments):
    traj = _flow(sys, p, text, "flow")
    summary = {"samples": traj.times.size, "t_end": traj.times[-1],
               "energy_drift": traj.energy_drift, "nfev": traj.nfev,
               "diagnostic": traj.diagnostic or "none"}
    return summary, {"traj.csv": traj_csv(traj)}, not traj.diagnostic


def cmd_classify(sys, p, text, seed, segments, spec_dir):
    files = {}
    if "trajectory" in p:
        src = spec_dir / p["trajectory"]
        if not src.is_file():
            raise SpecError(f"trajectory file {src} does not exist", _line_of(text, "trajectory"))
        try:
            traj = read_traj_csv(src, sys.masses)
        except (ValueError, IndexError, UsageError) as exc:
            raise SpecError(f"cannot read {src}: {exc}", _line_of(text, "trajectory")) from None
    else:
        traj = _flow(sys, p, text, "classify")
        files["traj.csv"] = traj_csv(traj)
    rep = classify(traj, float(p.get("delta", 0.1)), sys.masses, sys.grav_const)
    summary = {}
    for (i, j), e, s in zip(rep.exponents.pairs, rep.exponents.exponents, rep.exponents.stderr):
        summary[f"exponent_{i}_{j}"] = e
        summary[f"exponent_stderr_{i}_{j}"] = s
    summary["partition"] = _partition_str(rep.partition.partition)
    summary["partition_inconsistent"] = rep.partition.inconsistent
    summary["superhyperbolic"] = rep.superhyperbolic
    summary["expansive"] = rep.expansive
    for a, (e, s) in enumerate(rep.cluster_potential_exponents):
        summary[f"cluster_potential_exponent_{a}"] = e
        summary[f"cluster_potential_stderr_{a}"] = s
    for b in range(traj.n_bodies):
        for d in range(traj.positions.shape[2]):
            summary[f"drift_{b}_{d}"] = rep.drift[b, d]
    summary["drift_residual"] = rep.drift_residual
    summary["drift_conclusive"] = rep.drift_conclusive
    summary["drift_class_consistent"] = rep.drift_class_consistent
    summary["diagnostic"] = traj.diagnostic or "none"
    return summary, files, True


def _sample_spec(p, seed, segments):
    kw = {k: tuple(p[k]) for k in ("size_range", "ratio_range", "tau_range") if k in p}
    return SampleSpec(count=int(p.get("count", 200)), seed=seed,
                      segments=int(segments or p.get("segments", 64)), **kw)


def _constants_summary(c: BoundConstants):
    out = {"alpha": c.alpha, "beta": c.beta}
    for blk, prov in sorted(c.provenance.get("blocks", {}).items()):
        tag = "_".join(re.findall(r"\d+", blk))
        for k, v in prov.items():
            out[f"provenance_{tag}_{k}"] = v if not isinstance(v, list) else ";".join(map(fmt, v))
    return out


def cmd_fit_bounds(sys, p, text, seed, segments):
    P = _partition(p, sys, text)
    summary = {"partition": _partition_str(P)}
    try:
        c = fit_partition_constants(sys, P, _sample_spec(p, seed, segments))
    except FitError as exc:
        summary["fit_status"] = f"rejected: {exc}"
        return summary, {}, False
    summary["fit_status"] = "accepted"
    summary.update(_constants_summary(c))
    return summary, {}, True


def cmd_verify_bounds(sys, p, text, seed, segments):
    P = _partition(p, sys, text)
    if "alpha" in p and "beta" in p:
        c = BoundConstants(float(p["alpha"]), float(p["beta"]))
    else:
        try:
            c = fit_partition_constants(sys, P, _sample_spec(p, seed, segments))
        except FitError as exc:
            return {"partition": _partition_str(P), "fit_status": f"rejected: {exc}"}, {}, False
    opts = _solve_options(p, seed, segments)
    cases = draw_lemma_cases(sys, int(p.get("cases", 200)), int(p.get("case_seed", seed + 1)),
                             h_values=tuple(p.get("h_values", (0.1, 1.0, 10.0))))
    rows, ok = [], True
    for k, (x, y, h) in enumerate(cases):
        chk = lemma1_check(sys, x, y, P, h, c, opts)
        ok &= chk.converged
        rows.append({"case": k, "h": h, "phi": chk.phi, "r_z": chk.r_z, "y_dist": chk.y_dist,
                     "min_rhs": float(chk.rhs.min()), "holds": chk.holds,
                     "converged": chk.converged})
    summary = {"partition": _partition_str(P)}
    summary.update(_constants_summary(c))
    summary["cases"] = len(rows)
    summary["dominated"] = sum(r["holds"] for r in rows)
    return summary, {"lemma.csv": rows_csv(rows)}, ok


def _sweep_job(args):
    return energy_case(*args)


def cmd_sweep(sys, p, text, seed, segments):
    n_cases = int(p.get("cases", 50))
    hs = tuple(p.get("h_values", (0.1, 1.0, 10.0)))
    bodies = tuple(p.get("bodies", (2, 3, 4)))
    segs = tuple(p.get("segment_levels", (64, 256)))
    jobs = [(seed + k, bodies[k % len(bodies)], float(hs[(k // len(bodies)) % len(hs)]), segs,
             sys.dim) for k in range(n_cases)]
    workers = int(p.get("workers", 1))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_sweep_job, jobs))
    else:
        rows = [_sweep_job(j) for j in jobs]
    lo, hi = segs[0], segs[-1]
    conv = [r for r in rows if r[f"converged_{lo}"] and r[f"converged_{hi}"]]
    summary = {
        "cases": len(rows),
        "converged": len(conv),
        "energy_ok": sum(r[f"energy_err_{lo}"] <= 1e-3 * (1 + r["h"]) for r in conv),
        "margin_ok": sum(r[f"margin_{lo}"] > r[f"floor_{lo}"] for r in conv),
        "min_error_reduction": min((r[f"energy_err_{lo}"] / r[f"energy_err_{hi}"] for r in conv),
                                   default=math.nan),
    }
    return summary, {"sweep.csv": rows_csv(rows)}, len(conv) == len(rows)


HANDLERS = {
    "minimize": cmd_minimize,
    "flow": cmd_flow,
    "classify": cmd_classify,
    "fit-bounds": cmd_fit_bounds,
    "verify-bounds": cmd_verify_bounds,
    "sweep": cmd_sweep,
}


def run(command: str, spec_path, out=None, seed=None, segments=None, quiet=False) -> int:
    spec_path = Path(spec_path)
    try:
        data, text, digest = load_spec(spec_path, command)
        system = _system(data, text)
        seed = int(seed if seed is not None else data.get("seed", 0))
        out = Path(out if out is not None else spec_path.parent / data.get("out", "out"))
        payload = data[command]
        args = (system, payload, text, seed, segments)
        if command == "classify":
            args += (spec_path.parent,)
        summary, files, ok = HANDLERS[command](*args)
    except SpecError as exc:
        where = f"{spec_path}:{exc.line}" if exc.line else str(spec_path)
        print(f"{where}: error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except UsageError as exc:
        print(f"{spec_path}: error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except OSError as exc:
        print(f"{spec_path}: error: {exc}", file=sys.stderr)
        return EXIT_SPEC if not spec_path.exists() else EXIT_IO

    head = {"command": command, "library_version": __version__, "spec_sha256": digest,
            "seed": seed}
    files["summary.txt"] = summary_text({**head, **summary})
    try:
        emit_report(out, files)
    except OSError as exc:
        print(f"error: cannot write report to {out}: {exc}", file=sys.stderr)
        return EXIT_IO
    if not quiet:
        sys.stdout.write(files["summary.txt"])
    return EXIT_OK if ok else EXIT_NONCONVERGED


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="nbody", description=__doc__.split("\n\n")[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--spec", required=True, type=Path)
    parser.add_argument("--out", type=Path)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--segments", type=int)
    parser.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)
    return run(args.command, args.spec, args.out, args.seed, args.segments, args.quiet)


if __name__ == "__main__":
    sys.exit(main())
