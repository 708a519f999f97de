"""Command-line driver.

    qgfs <subcommand> --config <path> [--out <dir>] [--threads N]
                      [--field <name>] [--t <val>]

Subcommands: solve-elliptic, run (time marching), fixed-point (outer
iteration to tolerance), picard-demo, diagnose, convergence-study.  Runs
write binary snapshots, a JSON manifest and a CSV of diagnostic rows
(name,value,bound,pass); the exit status is 0 iff every enforced check
passed.  Reductions are fixed-order throughout, so outputs are bit-identical
across reruns and thread settings; --threads is recorded in the manifest as
a worker hint and does not affect results.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import diagnostics, snapshots
from .config import parse_config
from .elliptic import mass_tolerance, solve_constrained
from .errors import ConfigError
from .flowmap import picard_iterate, velocity_from_stream
from .geometry import build_domain, integrate
from .scheme import RunHistory, run_fixed_point, time_march, _resolve_initial_pv
from .snapshots import (emit_plot_data, read_manifest, read_snapshot,
                        verify_manifest, write_history)

_DEMO_FIELDS = {
    "rotation": lambda p, t: np.column_stack([-p[:, 1], p[:, 0]]),
    "shear": lambda p, t: np.column_stack([p[:, 1],
                                           np.zeros(p.shape[0])]),
}


def _resolve_out(args, config=None):
    out = getattr(args, "out", None) \
        or (getattr(config, "output_dir", None) if config else None) \
        or os.environ.get("QGFS_OUT") or "qgfs-out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _history_checks(history: RunHistory) -> diagnostics.DiagnosticReport:
    """The enforced per-run invariants: mass, boundary constancy, the
    calibrated boundary-constant bound, and the PV transport bound."""
    rep = diagnostics.DiagnosticReport()
    dom = history.domain
    mtol = mass_tolerance(dom)
    cal = diagnostics.l_bound_calibration(dom, trial_count=6,
                                          settings=history.config.linear,
                                          beta=history.beta)
    fmax = history.forcing.max_abs(dom, history.times)
    q0max = history.q[0].max_abs()
    bilinear = history.config.interpolation == "bilinear"
    for k, t in enumerate(history.times):
        psi, q, l = history.psi[k], history.q[k], history.l[k]
        mass = abs(integrate(psi))
        rep.add(f"mass[{k}]", mass, mtol, mass <= mtol, t=t)
        bdev = float(np.max(np.abs(psi.boundary() - l)))
        rep.add(f"boundary_constancy[{k}]", bdev, 0.0, bdev == 0.0, t=t)
        denom = 1.0 + float(np.max(np.abs(
            (q.values - history.beta * dom.Y)[dom.valued_mask])))
        rep.add(f"l_bound[{k}]", abs(l), cal.c_dom * denom,
                abs(l) <= cal.c_dom * denom, c_dom=cal.c_dom, t=t)
        qmax = q.max_abs()
        bound = q0max + t * fmax + 1e-12
        if bilinear:
            rep.add(f"pv_bound[{k}]", qmax, bound, qmax <= bound, t=t)
        else:
            rep.add(f"pv_overshoot[{k}]", max(qmax - bound, 0.0), np.inf,
                    True, note="bicubic overshoot reported, not enforced",
                    t=t)
    return rep


def _cmd_scheme(args, fixed_point):
    config = parse_config(args.config)
    outdir = _resolve_out(args, config)
    t0 = time.time()
    try:
        history = run_fixed_point(config) if fixed_point \
            else time_march(config)
    except Exception as exc:
        snapshots.write_manifest(
            outdir, snapshots._config_echo(config), [], [], [],
            time.time() - t0, {"error": str(exc)}, complete=False)
        raise
    rep = _history_checks(history)
    rep.to_csv(outdir / "diagnostics.csv")
    summary = {"rows": len(rep.rows), "failed": len(rep.failed()),
               "threads": args.threads}
    write_history(outdir, history, wall_seconds=time.time() - t0,
                  diagnostics_summary=summary, complete=True)
    series = diagnostics.pv_extrema_report(history)
    emit_plot_data(series, "extrema", outdir, prefix="run")
    print(f"{len(history)} snapshots -> {outdir}")
    print(rep)
    return 0 if rep.all_passed else 1


def _cmd_solve_elliptic(args):
    config = parse_config(args.config)
    outdir = _resolve_out(args, config)
    domain = config.build_domain()
    if args.input:
        snap = read_snapshot(args.input, domain)
        q = snap.q
    else:
        q = _resolve_initial_pv(domain, config)
    sol = solve_constrained(domain, q, config.linear, beta=config.beta)
    u = velocity_from_stream(sol)
    snapshots.write_snapshot(outdir / "snapshot_000000.bin", domain, q,
                             sol.psi, u, 0.0, sol.l, config.beta)
    rep = diagnostics.DiagnosticReport()
    mtol = mass_tolerance(domain)
    rep.add("mass", sol.mass_residual(), mtol, sol.mass_residual() <= mtol)
    bdev = sol.boundary_deviation()
    rep.add("boundary_constancy", bdev, 0.0, bdev == 0.0)
    p2 = sol.psi2.interior()
    rep.add("psi2_positive", float(np.min(p2)), 0.0, float(np.min(p2)) > 0.0)
    rep.add("psi2_below_one", float(np.max(p2)), 1.0,
            float(np.max(p2)) <= 1.0)
    rep.to_csv(outdir / "diagnostics.csv")
    snapshots.write_manifest(outdir, snapshots._config_echo(config),
                             [("snapshot_000000.bin", 0.0, sol.l)], [], [],
                             0.0, {"rows": len(rep.rows),
                                   "failed": len(rep.failed())},
                             complete=True)
    print(f"l = {sol.l:.12g}; wrote {outdir}/snapshot_000000.bin")
    print(rep)
    return 0 if rep.all_passed else 1


def _cmd_picard_demo(args):
    outdir = _resolve_out(args)
    try:
        field = _DEMO_FIELDS[args.field]
    except KeyError:
        raise ConfigError(f"unknown demo field {args.field!r}; "
                          f"choose from {sorted(_DEMO_FIELDS)}") from None
    g = np.linspace(-0.5, 0.5, 10)
    X, Y = np.meshgrid(g, g)
    seeds = np.column_stack([X.ravel(), Y.ravel()])
    dt = args.dt if args.dt else args.t / 64.0
    flow, trace = picard_iterate(field, seeds, args.t, dt,
                                 k_max=60, tol=1e-12)
    emit_plot_data(trace, "trace", outdir, prefix=f"picard_{args.field}")
    e = trace.e
    print(f"converged in {len(trace.rho)} iterates; "
          f"rho_final = {trace.rho[-1]:.3e}; e monotone: "
          f"{all(e[i+1] <= e[i] + 1e-15 for i in range(len(e)-1))}")
    return 0


def _cmd_diagnose(args):
    snapdir = Path(args.snapshots)
    outdir = _resolve_out(args) if args.out else snapdir
    rep = diagnostics.DiagnosticReport()
    problems = verify_manifest(snapdir)
    rep.add("manifest_complete", len(problems), 0, not problems,
            problems=problems)
    doc = read_manifest(snapdir)
    domain = None
    cal = None
    for entry in doc["snapshots"]:
        snap = read_snapshot(snapdir / entry["file"], domain)
        domain = snap.domain
        if cal is None:
            cal = diagnostics.l_bound_calibration(domain, trial_count=6,
                                                  beta=snap.beta)
        name = entry["file"].replace("snapshot_", "").replace(".bin", "")
        mtol = mass_tolerance(domain)
        mass = abs(integrate(snap.psi))
        rep.add(f"mass[{name}]", mass, mtol, mass <= mtol)
        bdev = float(np.max(np.abs(snap.psi.boundary() - snap.l)))
        rep.add(f"boundary_constancy[{name}]", bdev, 0.0, bdev == 0.0)
        denom = 1.0 + float(np.max(np.abs(
            (snap.q.values - snap.beta * domain.Y)[domain.valued_mask])))
        rep.add(f"l_bound[{name}]", abs(snap.l), cal.c_dom * denom,
                abs(snap.l) <= cal.c_dom * denom)
        # stream consistency: re-invert the stored PV and compare
        sol = solve_constrained(domain, snap.q, beta=snap.beta)
        scale = max(sol.psi.max_abs(), 1e-12)
        dev = float(np.nanmax(np.abs(sol.psi.values - snap.psi.values)))
        tol = 1e-6 * scale + 1e-12
        rep.add(f"stream_consistency[{name}]", dev, tol, dev <= tol)
        lhs, rhs = diagnostics.mean_square_gap(snap.psi - snap.l)
        rep.add(f"mean_square_inequality[{name}]", lhs, rhs * (1 + 1e-12),
                lhs <= rhs * (1 + 1e-12) + 1e-300)
    rep.to_csv(Path(outdir) / "diagnose.csv")
    print(rep)
    return 0 if rep.all_passed else 1


def _cmd_convergence_study(args):
    outdir = _resolve_out(args)
    from .geometry import interpolate
    from .elliptic import solve_dirichlet
    from .flowmap import integrate_rk4

    rep = diagnostics.DiagnosticReport()
    rows = []

    errs = []
    ns = (33, 65, 129)
    for n in ns:
        dom = build_domain("rectangle", nx=n, ny=n, lx=np.pi, ly=np.pi)
        rhs = dom.field(lambda x, y: -3.0 * np.sin(x) * np.sin(y))
        psi = solve_dirichlet(dom, rhs, 0.0)
        exact = dom.field(lambda x, y: np.sin(x) * np.sin(y))
        errs.append(float(np.nanmax(np.abs(psi.values - exact.values))))
        rows.append(("elliptic_sin", n, errs[-1]))
    orders = [np.log2(errs[i] / errs[i + 1]) for i in range(len(errs) - 1)]
    rep.add("elliptic_order", min(orders), 1.9, min(orders) >= 1.9,
            errors=errs)

    rot = _DEMO_FIELDS["rotation"]
    rerrs = []
    for dt in (0.1, 0.05, 0.025):
        tr = integrate_rk4(rot, [[1.0, 0.0]], 0.0, np.pi / 2, dt)
        rerrs.append(float(np.hypot(tr.positions[0, 0],
                                    tr.positions[0, 1] - 1.0)))
        rows.append(("rk4_rotation", dt, rerrs[-1]))
    rorders = [np.log2(rerrs[i] / rerrs[i + 1]) for i in range(2)]
    rep.add("rk4_order", min(rorders), 3.8, min(rorders) >= 3.8,
            errors=rerrs)

    ierrs = {"bilinear": [], "bicubic": []}
    pt = np.array([np.pi / 2, np.pi / 2])
    for n in ns:
        dom = build_domain("rectangle", nx=n, ny=n, lx=np.pi, ly=np.pi)
        f = dom.field(lambda x, y: np.sin(x) * np.sin(y))
        off = pt + 0.3 * np.array([dom.hx, dom.hy])
        exact = np.sin(off[0]) * np.sin(off[1])
        for order in ierrs:
            ierrs[order].append(abs(interpolate(f, off, order) - exact))
            rows.append((f"interp_{order}", n, ierrs[order][-1]))
    for order, floor in (("bilinear", 1.9), ("bicubic", 2.9)):
        o = [np.log2(ierrs[order][i] / ierrs[order][i + 1])
             for i in range(2)]
        rep.add(f"interp_{order}_order", min(o), floor, min(o) >= floor)

    with open(Path(outdir) / "convergence.csv", "w") as fh:
        fh.write("case,parameter,error\n")
        for case, param, err in rows:
            fh.write(f"{case},{param},{err!r}\n")
    rep.to_csv(Path(outdir) / "convergence_checks.csv")
    print(rep)
    return 0 if rep.all_passed else 1


def build_parser():
    p = argparse.ArgumentParser(prog="qgfs", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True)
        sp.add_argument("--out", default=None,
                        help="output directory (default $QGFS_OUT or "
                             "./qgfs-out)")
        sp.add_argument("--threads", type=int, default=1,
                        help="worker hint recorded in the manifest; "
                             "results are thread-count independent")

    sp = sub.add_parser("solve-elliptic",
                        help="one constrained solve from a PV field")
    common(sp)
    sp.add_argument("--input", default=None,
                    help="snapshot file supplying q (default: initial data "
                         "from the config)")

    sp = sub.add_parser("run", help="semi-Lagrangian time marching")
    common(sp)

    sp = sub.add_parser("fixed-point",
                        help="outer iteration to tolerance per window")
    common(sp)

    sp = sub.add_parser("picard-demo",
                        help="Picard flow-map trace on a named test field")
    common(sp, config=False)
    sp.add_argument("--field", default="rotation")
    sp.add_argument("--t", type=float, default=0.4)
    sp.add_argument("--dt", type=float, default=None)

    sp = sub.add_parser("diagnose",
                        help="full diagnostic report on a snapshot directory")
    common(sp, config=False)
    sp.add_argument("--snapshots", required=True)

    sp = sub.add_parser("convergence-study",
                        help="refinement sweeps with order tables")
    common(sp, config=False)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "solve-elliptic":
            return _cmd_solve_elliptic(args)
        if args.command == "run":
            return _cmd_scheme(args, fixed_point=False)
        if args.command == "fixed-point":
            return _cmd_scheme(args, fixed_point=True)
        if args.command == "picard-demo":
            return _cmd_picard_demo(args)
        if args.command == "diagnose":
            return _cmd_diagnose(args)
        if args.command == "convergence-study":
            return _cmd_convergence_study(args)
        raise ValueError(f"unhandled command {args.command!r}")
    except Exception as exc:
        print(f"qgfs {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
