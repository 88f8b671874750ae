"""Batch front end: ``linfmisfit forward|gradcheck|optimize|continuation --config c.json --out dir``.

Exit codes: 0 success, 1 configuration error, 2 solver failure, 3 check failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__, config as cfgmod, expr
from .cost import sup_misfits
from .forward import CoefficientError, estimate_check
from .linsolve import SolverFailure
from .mesh import MeshError
from .norms import l2_error
from .optimize import (BoundViolation, InfeasibleStart, ReducedProblem, gradient_check, minimise_p,
                       moment_cauchy_gap, run_continuation, verify_limit_relations)

log = logging.getLogger("linfmisfit")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK = 0, 1, 2, 3


# ---------------------------------------------------------------------------
# writers

def _fmt(v) -> str:
    return format(float(v), ".17g")


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n")


def write_nodal(path: Path, mesh, nodal) -> None:
    """One line per vertex: index, x, y, component 1, component 2."""
    nodal = np.asarray(nodal).reshape(-1, 2)
    lines = ["# vertex x y c1 c2"]
    for k, ((x, y), (a, b)) in enumerate(zip(mesh.vertices, nodal)):
        lines.append(f"{k} {_fmt(x)} {_fmt(y)} {_fmt(a)} {_fmt(b)}")
    path.write_text("\n".join(lines) + "\n")


def write_elementwise(path: Path, values, name: str = "value") -> None:
    lines = [f"# element {name}"] + [f"{k} {_fmt(v)}" for k, v in enumerate(np.asarray(values))]
    path.write_text("\n".join(lines) + "\n")


def write_run_csv(path: Path, rows: list, N: int) -> None:
    header = ["iter", "p", "step", "total"] + [f"misfit_{i + 1}" for i in range(N)] + ["regulariser", "stationarity"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([r["iter"], _fmt(r["p"]), _fmt(r["step"]), _fmt(r["total"])]
                       + [_fmt(m) for m in r["misfits"]] + [_fmt(r["regulariser"]), _fmt(r["stationarity"])])


def write_manifest(out: Path, cfg, command: str, extra: dict | None = None) -> None:
    files = sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    man = {
        "command": command,
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "noise": cfg.predictions.noise if cfg.predictions.kind == "inverse_crime" else None,
        "versions": {"linfmisfit": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "outputs": files,
    }
    if extra:
        man.update(extra)
    write_json(out / "manifest.json", man)


def _prepare(out: Path, cfg) -> Path:
    (out / "fields").mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json() + "\n")
    return out


def _start(cfg, mesh, M) -> np.ndarray:
    xi0 = cfgmod.xi_field(mesh, cfg.xi0)
    if np.any(xi0 < 0) or np.any(xi0 > M):
        raise InfeasibleStart("xi0: starting point violates 0 <= xi <= M")
    return xi0


# ---------------------------------------------------------------------------
# commands

def cmd_forward(cfg, out: Path, args) -> int:
    model, xi_true = cfgmod.build_model(cfg)
    mesh = model.mesh
    if cfg.forward.xi == "truth":
        if xi_true is None:
            raise cfgmod.ConfigError("forward.xi", "'truth' needs inverse_crime predictions")
        xi = xi_true
    else:
        xi = cfgmod.xi_field(mesh, cfg.forward.xi)
    st = model.state(xi)
    for i in range(model.N):
        write_nodal(out / "fields" / f"u_{i + 1}.txt", mesh, st.u_fields[i])
        write_nodal(out / "fields" / f"v_{i + 1}.txt", mesh, st.v_fields[i])
    write_elementwise(out / "fields" / "xi.txt", xi, "xi")
    rep = estimate_check(model, st, cfg.cost.p)
    summary = {"estimate": rep.as_dict(), "max_abs_v": float(np.max(np.abs(st.v_fields))),
               "max_abs_u": float(np.max(np.abs(st.u_fields))),
               "solves": [r.as_dict() for r in st.reports]}
    ok = rep.passed
    if cfg.forward.exact_u is not None:
        exact = expr.parse_vector(cfg.forward.exact_u)
        study = convergence_study(cfg, exact, cfg.forward.sizes or [cfg.mesh.nx])
        with open(out / "convergence.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "h", "l2_error", "rate"])
            for r in study["rows"]:
                w.writerow([r["n"], _fmt(r["h"]), _fmt(r["l2_error"]), "" if r["rate"] is None else _fmt(r["rate"])])
        summary["convergence"] = study
        ok = ok and study["passed"]
    write_json(out / "forward.json", summary)
    write_manifest(out, cfg, "forward")
    return EXIT_OK if ok else EXIT_CHECK


def convergence_study(cfg, exact, sizes, min_rate=None) -> dict:
    """L2 error of u_1 against ``exact`` over square meshes; rates from successive pairs."""
    min_rate = cfg.forward.min_rate if min_rate is None else min_rate
    rows = []
    for n in sizes:
        model, _ = cfgmod.build_model(dataclasses.replace(cfg, predictions=cfgmod.PredictionSpec(
            kind="analytic", values=[["0", "0"]] * cfg.N)), n=n)
        u = model.solve_u()[0]
        err = l2_error(model.space, u, exact)
        nodal_err = float(np.max(np.abs(u - exact(model.mesh.vertices))))
        rows.append({"n": n, "h": max(cfg.mesh.width, cfg.mesh.height) / n, "l2_error": err,
                     "max_nodal_error": nodal_err, "rate": None})
    for a, b in zip(rows, rows[1:]):
        if a["l2_error"] > 0 and b["l2_error"] > 0:
            b["rate"] = float(np.log(a["l2_error"] / b["l2_error"]) / np.log(a["h"] / b["h"]))
    rates = [r["rate"] for r in rows if r["rate"] is not None]
    exact_to_tol = all(r["max_nodal_error"] <= 1e-10 for r in rows)
    passed = exact_to_tol or (bool(rates) and min(rates) >= min_rate)
    return {"rows": rows, "min_rate": min(rates) if rates else None, "exact": exact_to_tol, "passed": passed}


def cmd_gradcheck(cfg, out: Path, args) -> int:
    model, _ = cfgmod.build_model(cfg)
    mesh = model.mesh
    rng = np.random.default_rng(cfg.seed + 1)
    g = cfg.gradcheck
    if g.xi0 is None:
        xi = rng.uniform(0.5, 1.5, mesh.n_triangles)
    else:
        xi = cfgmod.xi_field(mesh, g.xi0)
    dirs = [rng.standard_normal(mesh.n_triangles) for _ in range(g.directions)]
    regimes = [cfg.cost.config()] + [cfgmod.CostSpec(a, M).config() for a, M in g.regimes]
    rows = []
    for cc in regimes:
        for p in g.p_list:
            rows += gradient_check(ReducedProblem(model, cc.with_p(float(p))), xi, dirs, g.h, g.tol)
    with open(out / "gradcheck.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "p", "direction", "fd", "adjoint", "rel_err", "status"])
        for r in rows:
            w.writerow([r["mode"], _fmt(r["p"]), r["direction"], _fmt(r["fd"]), _fmt(r["adjoint"]),
                        _fmt(r["rel_err"]), r["status"]])
    write_elementwise(out / "fields" / "xi0.txt", xi, "xi")
    bad = [r for r in rows if r["status"] == "fail"]
    write_manifest(out, cfg, "gradcheck", {"failed_rows": len(bad)})
    return EXIT_CHECK if bad else EXIT_OK


def _summary_misfit(model, state0, state1) -> dict:
    s0, s1 = sum(sup_misfits(model, state0.v_fields)), sum(sup_misfits(model, state1.v_fields))
    return {"sup_misfit_start": s0, "sup_misfit_final": s1,
            "misfit_reduction": (1.0 - s1 / s0) if s0 > 0 else None}


def cmd_optimize(cfg, out: Path, args) -> int:
    model, _ = cfgmod.build_model(cfg)
    cc = cfg.cost.config()
    xi0 = _start(cfg, model.mesh, cc.M)
    prob = ReducedProblem(model, cc)
    res = minimise_p(xi0, prob, cfg.optimizer.config())
    write_run_csv(out / "run.csv", res.log, model.N)
    kkt = res.kkt.as_dict() | {"status": res.status, "iterations": res.iterations}
    kkt.update(_summary_misfit(model, model.state(np.zeros(model.mesh.n_triangles)), res.state))
    write_json(out / "kkt.json", kkt)
    _dump_result(out, model, res, "")
    write_manifest(out, cfg, "optimize")
    return EXIT_OK if res.kkt.passed else EXIT_CHECK


def _dump_result(out, model, res, suffix):
    write_elementwise(out / "fields" / f"xi{suffix}.txt", res.xi, "xi")
    write_elementwise(out / "fields" / f"gradient{suffix}.txt", res.gradient.values, "G")
    for i in range(model.N):
        write_nodal(out / "fields" / f"v_{i + 1}{suffix}.txt", model.mesh, res.state.v_fields[i])
        write_nodal(out / "fields" / f"psi_{i + 1}{suffix}.txt", model.mesh, res.adjoint.psi_fields[i])


def cmd_continuation(cfg, out: Path, args) -> int:
    model, _ = cfgmod.build_model(cfg)
    cc = cfg.cost.config()
    xi0 = _start(cfg, model.mesh, cc.M)
    prob = ReducedProblem(model, cc)
    warm = not args.no_warm_start
    try:
        rep = run_continuation(cfg.schedule, prob, xi0, cfg.optimizer.config(), warm_start=warm)
    except BoundViolation as exc:
        write_json(out / "continuation.json", {"error": str(exc)})
        write_manifest(out, cfg, "continuation")
        log.error("total-variation bound violated: %s", exc)
        return EXIT_CHECK
    doc = rep.as_dict()
    if rep.final is not None:
        res = rep.final
        doc["summary"] = {
            "gap_final": rep.gap(),
            "gaps": [abs(s.Ip - s.Iinf) / s.Iinf if s.Iinf > 0 else None for s in rep.stages],
            "moment_cauchy_gap": moment_cauchy_gap(rep) if len(rep.stages) > 1 else None,
            "cross_exponent_holds": all(c[-1] for s in rep.stages for c in s.cross_exponent),
            "cross_exponent_corrected_holds": all(c[-1] for s in rep.stages for c in s.cross_exponent_corrected),
            "xi_moment_bound_holds": all(s.xi_moment >= s.xi_moment_lower - 1e-12 for s in rep.stages),
        }
        doc["summary"].update(_summary_misfit(model, model.state(np.zeros(model.mesh.n_triangles)), res.state))
        limits = verify_limit_relations(rep)
        write_json(out / "limits.json", limits.as_dict())
        write_json(out / "kkt.json", res.kkt.as_dict() | {"status": res.status, "iterations": res.iterations,
                                                          "p": rep.stages[-1].p})
        _dump_result(out, model, res, "_final")
    write_json(out / "continuation.json", doc)
    stage_rows = []
    for s in rep.stages:
        stage_rows.append({"iter": s.iterations, "p": s.p, "step": 0.0, "total": s.Ip, "misfits": s.misfits,
                           "regulariser": s.regulariser, "stationarity": s.stationarity})
    write_run_csv(out / "run.csv", stage_rows, model.N)
    write_manifest(out, cfg, "continuation", {"warm_start": warm})
    if rep.errors:
        return EXIT_SOLVER
    return EXIT_OK


COMMANDS = {"forward": cmd_forward, "gradcheck": cmd_gradcheck, "optimize": cmd_optimize,
            "continuation": cmd_continuation}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="linfmisfit", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="experiment JSON")
    ap.add_argument("--out", default=None, help="output directory (default: config output_dir)")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    ap.add_argument("--no-warm-start", action="store_true", help="restart every continuation stage from xi0")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = cfgmod.load(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise cfgmod.ConfigError("seed", "must be nonnegative")
            cfg = dataclasses.replace(cfg, seed=args.seed)
        out = Path(args.out if args.out is not None else cfg.output_dir)
        _prepare(out, cfg)
        return COMMANDS[args.command](cfg, out, args)
    except (cfgmod.ConfigError, CoefficientError, MeshError, InfeasibleStart, expr.ExprError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverFailure as exc:
        print(f"solver failure [{exc.stage}]: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
