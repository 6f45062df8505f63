"""Command line entry point.

Subcommands: ``mesh-gen`` (write a structured unit-square mesh file),
``run-manufactured`` (convergence study on the unit square),
``run-cylinder`` (channel benchmark with drag/lift/pressure series) and
``check`` (randomized property suites).  Flags may also be supplied via
``--config file`` holding ``key = value`` lines; explicit flags win.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import adaptivity, analysis_checks, benchmarks, fem, mesh as meshmod

DEFAULT_NUS = (1e-2, 1e-4, 1e-6, 1e-8, 1e-10)
DEFAULT_NS = (6, 12, 24)
DEFAULT_TOLS = (1e-4, 1e-5, 1e-6)


def _read_config(path):
    values = {}
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, val = line.partition("=")
            values[key.strip().replace("-", "_")] = val.strip()
    return values


def _apply_config(args, parser):
    if not getattr(args, "config", None):
        return args
    file_values = _read_config(args.config)
    explicit = {a.lstrip("-").replace("-", "_").split("=")[0] for a in sys.argv[1:]
                if a.startswith("--")}
    for key, val in file_values.items():
        if key in explicit or not hasattr(args, key):
            continue
        current = getattr(args, key)
        if isinstance(current, bool):
            setattr(args, key, val.lower() in ("1", "true", "yes"))
        elif isinstance(current, int):
            setattr(args, key, int(val))
        elif isinstance(current, float):
            setattr(args, key, float(val))
        else:
            setattr(args, key, val)
    return args


def _add_common(p):
    p.add_argument("--config", help="key = value file; explicit flags win")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--verbose", action="store_true")


def cmd_mesh_gen(args) -> int:
    mesh = meshmod.generate_unit_square_mesh(args.mesh_n)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    meshmod.save_mesh(mesh, out)
    print(f"wrote {out} ({mesh.n_nodes} nodes, {mesh.n_triangles} triangles)")
    return 0


def cmd_run_manufactured(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    ns = [int(s) for s in args.mesh_n.split(",")]
    tols = [float(s) for s in args.tolr.split(",")]
    nus = [float(s) for s in args.nu.split(",")]
    if len(tols) == 1:
        tols = tols * len(ns)
    if args.fixed_dt is not None:
        for nu in nus:
            for n in ns:
                u, _, omegas, dof, stepper, case = benchmarks.run_fixed_step(
                    n, nu, args.fixed_dt, args.scheme, mu=args.mu, t_final=args.tfinal)
                err = benchmarks.final_time_error(dof, stepper, case, u, args.tfinal)
                print(f"N={n} nu={nu:.3g} dt={args.fixed_dt:.6g}: error {err:.12g}")
        return 0
    report = benchmarks.run_convergence_study(
        ns, tols, nus, args.scheme, mu=args.mu, t_final=args.tfinal,
        progress_every=500 if args.verbose else 0, workers=args.workers)
    path = outdir / f"convergence_{args.scheme}.csv"
    benchmarks.write_convergence_csv(report, path)
    for nu in nus:
        hs, errs = report.errors_for(nu)
        if len(hs) >= 2:
            print(f"nu={nu:.3g}: errors {['%.6g' % e for e in errs]} "
                  f"slope {report.slope(nu):.3f}")
    print(f"wrote {path}")
    return 0


def cmd_run_cylinder(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    mesh = meshmod.load_mesh(args.mesh_file) if args.mesh_file else None
    result = benchmarks.run_cylinder(args.scheme, args.tolr, mesh=mesh,
                                     t_final=args.tfinal,
                                     progress_every=500 if args.verbose else 0)
    series_path = outdir / f"cylinder_series_{args.scheme}.csv"
    benchmarks.write_series_csv(result.series, series_path)
    summary_path = outdir / f"cylinder_summary_{args.scheme}.txt"
    benchmarks.write_summary(result.summary(), summary_path)
    log_path = outdir / f"cylinder_steps_{args.scheme}.csv"
    result.log.to_csv(log_path)
    for key, val in result.summary().items():
        print(f"{key} = {val:.12g}" if isinstance(val, float) else f"{key} = {val}")
    print(f"wrote {series_path}, {summary_path}, {log_path}")
    return 0


def cmd_check(args) -> int:
    results = list(analysis_checks.run_property_checks(args.seed))
    results += _fem_property_checks(args.seed)
    width = max(len(name) for name, _, _ in results)
    failures = 0
    for name, passed, detail in results:
        status = "pass" if passed else "FAIL"
        failures += not passed
        print(f"{name:<{width}}  {status}  {detail}")
    print(f"{len(results) - failures}/{len(results)} checks passed")
    return 1 if failures else 0


def _fem_property_checks(seed: int):
    rng = np.random.default_rng(seed)
    mesh = meshmod.generate_unit_square_mesh(6)
    dof = fem.build_dof_maps(mesh)
    results = []

    n_mat = fem.assemble_convection_matrix(
        dof, rng.standard_normal(dof.n_vel_dofs) * (~dof.dirichlet_mask))
    worst = 0.0
    for _ in range(100):
        v = np.zeros(dof.n_vel_dofs)
        v[dof.free_vel] = rng.standard_normal(dof.n_free_vel)
        scale = max(float(v @ v), 1e-30)
        worst = max(worst, abs(v @ (n_mat @ v)) / scale)
    results.append(("convection skew-symmetry (100 random fields)", worst <= 1e-12,
                    f"max |b(w,v,v)|/|v|^2 = {worst:.3e}"))

    m = fem.assemble_mass(dof)
    g = fem.assemble_graddiv(dof)
    m_min, g_min = np.inf, np.inf
    for _ in range(200):
        v = rng.standard_normal(dof.n_vel_dofs)
        m_min = min(m_min, (v @ (m @ v)) / (v @ v))
        g_min = min(g_min, (v @ (g @ v)) / (v @ v))
    results.append(("mass SPD / grad-div PSD (Rayleigh sampling)",
                    m_min > 0 and g_min > -1e-14,
                    f"min Rayleigh: mass {m_min:.3e}, grad-div {g_min:.3e}"))

    case = benchmarks.ManufacturedCase(nu=1e-2)
    x = rng.uniform(0, 1, 100)
    y = rng.uniform(0, 1, 100)
    u1x, _, _, u2y = case.velocity_gradient(x, y, 0.37)
    div = np.abs(u1x + u2y).max()
    results.append(("manufactured field divergence-free (100 points)", div <= 1e-12,
                    f"max |div u| = {div:.3e}"))
    return results


def build_parser():
    ap = argparse.ArgumentParser(prog="graddiv-ns", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh-gen", help="write a structured unit-square mesh file")
    p.add_argument("--mesh-n", type=int, required=True, help="subdivisions per side")
    _add_common(p)

    p = sub.add_parser("run-manufactured", help="unit-square convergence study")
    p.add_argument("--mesh-n", default=",".join(str(n) for n in DEFAULT_NS),
                   help="comma list of subdivisions")
    p.add_argument("--scheme", choices=("imex", "semi"), default="semi")
    p.add_argument("--nu", default=",".join(f"{v:g}" for v in DEFAULT_NUS),
                   help="comma list of viscosities")
    p.add_argument("--mu", type=float, default=0.05)
    p.add_argument("--tolr", default=",".join(f"{v:g}" for v in DEFAULT_TOLS),
                   help="comma list of tolerances (per mesh, or one for all)")
    p.add_argument("--fixed-dt", type=float, default=None,
                   help="disable the controller and run constant steps")
    p.add_argument("--tfinal", type=float, default=4.0)
    p.add_argument("--workers", type=int, default=1)
    _add_common(p)

    p = sub.add_parser("run-cylinder", help="flow past a cylinder benchmark")
    p.add_argument("--mesh-file", default=None,
                   help="mesh file (defaults to the shipped benchmark mesh)")
    p.add_argument("--scheme", choices=("imex", "semi"), default="imex")
    p.add_argument("--tolr", type=float, default=1e-4)
    p.add_argument("--tfinal", type=float, default=None)
    _add_common(p)

    p = sub.add_parser("check", help="run the property-check suites")
    _add_common(p)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args = _apply_config(args, parser)
    np.random.seed(args.seed)
    handlers = {
        "mesh-gen": cmd_mesh_gen,
        "run-manufactured": cmd_run_manufactured,
        "run-cylinder": cmd_run_cylinder,
        "check": cmd_check,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
