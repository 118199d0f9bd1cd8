"""Command-line front end.

Subcommands: mesh-gen, forward, dtn, avgdtn, reconstruct, verify, curves.
Common flags: --config PATH (required), --seed N, --jobs N, --out DIR; verify
also accepts --only ID. Every run is deterministic given (config, seed):
artifacts carry the resolved-config digest in a header comment and are
byte-identical across reruns, independent of --jobs.

Exit codes: 0 success, 1 solver failure or failed verification, 2 invalid
configuration.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from nltomo import boundary_ops, config as cfgmod, forward, imaging, verify
from nltomo._parallel import map_ordered
from nltomo.constitutive import h4_envelope
from nltomo.errors import ConfigurationError, NonConvergenceError, QuadratureNotConvergedError
from nltomo.io import ensure_dir, fmt, write_csv, write_json
from nltomo.mesh import rasterize_phantom, write_mesh

__all__ = ["main"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nltomo",
        description="Steady-current simulation and monotonicity-based imaging "
        "for nonlinear conductors",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "mesh-gen": "generate the configured mesh and write the interchange file",
        "forward": "solve the forward problem for every configured excitation",
        "dtn": "tabulate flux pairings over the excitation dictionary",
        "avgdtn": "tabulate averaged powers and flux pairings with quadrature report",
        "reconstruct": "synthesize measurements and sweep the test-inclusion grid",
        "verify": "run the property-check suite and write its report",
        "curves": "export constitutive curves with growth-envelope columns",
    }
    for name, help_text in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--jobs", type=int, default=1, help="worker cap for independent tasks")
        p.add_argument("--out", default=None, help="override the config output directory")
        if name == "verify":
            p.add_argument("--only", default=None, help="run only this check id family")
    return parser


def _prepare(cfg):
    mesh = cfgmod.build_mesh(cfg)
    models = cfgmod.build_models(cfg)
    phantom = cfgmod.build_phantom(cfg)
    assignment = rasterize_phantom(mesh, phantom, known_models=models)
    excitations = cfgmod.build_excitations(cfg, mesh)
    return mesh, models, phantom, assignment, excitations


def cmd_mesh_gen(cfg, args) -> int:
    out = cfg["output_dir"]
    ensure_dir(out)
    mesh = cfgmod.build_mesh(cfg)
    path = os.path.join(out, "mesh.txt")
    write_mesh(mesh, path, header=f"config_digest={cfgmod.config_digest(cfg)}")
    print(f"mesh: {mesh.n_nodes} nodes, {mesh.n_elements} elements, "
          f"{len(mesh.boundary_edges)} boundary edges -> {path}")
    return 0


def cmd_forward(cfg, args) -> int:
    digest = cfgmod.config_digest(cfg)
    out = cfg["output_dir"]
    ensure_dir(out)
    mesh, models, _, assignment, excitations = _prepare(cfg)
    solver = cfgmod.build_solver_options(cfg)
    problem = forward.ForwardProblem(mesh, assignment, models)

    def run(f):
        return problem.solve(f, options=solver)

    results = map_ordered(run, excitations, jobs=args.jobs)
    reports = []
    for i, (fld, rep) in enumerate(results):
        path = os.path.join(out, f"potential_{i:03d}.csv")
        rows = zip(range(mesh.n_nodes), mesh.nodes[:, 0], mesh.nodes[:, 1], fld.u)
        write_csv(path, ["node", "x", "y", "u"], rows, digest=digest)
        reports.append({
            "excitation": i,
            "energy": rep.energy,
            "iterations": rep.iterations,
            "ncg_iterations": rep.ncg_iterations,
            "residual_norm": rep.residual_norm,
            "backtracks": rep.backtracks,
            "branch": rep.branch,
            "tolerance": rep.tolerance,
        })
        print(f"excitation {i}: energy={fmt(rep.energy)} "
              f"iterations={rep.iterations} branch={rep.branch}")
    write_json(os.path.join(out, "solve_report.json"),
               {"schema_version": 1, "config_digest": digest, "solves": reports})
    return 0


def _write_gram(path, rows, digest):
    write_csv(
        path,
        ["excitation_i", "excitation_j", "dtn_pairing", "avg_dtn_power", "quad_error"],
        ([r.i, r.j, r.dtn_pairing, r.avg_power, r.quad_error] for r in rows),
        digest=digest,
    )


def cmd_dtn(cfg, args) -> int:
    digest = cfgmod.config_digest(cfg)
    out = cfg["output_dir"]
    ensure_dir(out)
    mesh, models, _, assignment, excitations = _prepare(cfg)
    solver = cfgmod.build_solver_options(cfg)
    problem = forward.ForwardProblem(mesh, assignment, models)

    def run(f):
        fld, _ = problem.solve(f, options=solver)
        return problem.boundary_flux(fld)

    fluxes = map_ordered(run, excitations, jobs=args.jobs)
    rows = [
        boundary_ops.GramRow(i=i, j=j, dtn_pairing=flux.pair(g))
        for i, flux in enumerate(fluxes)
        for j, g in enumerate(excitations)
    ]
    path = os.path.join(out, "gram.csv")
    _write_gram(path, rows, digest)
    print(f"{len(rows)} pairings -> {path}")
    return 0


def cmd_avgdtn(cfg, args) -> int:
    digest = cfgmod.config_digest(cfg)
    out = cfg["output_dir"]
    ensure_dir(out)
    mesh, models, _, assignment, excitations = _prepare(cfg)
    solver = cfgmod.build_solver_options(cfg)
    quad = cfgmod.build_quadrature_options(cfg)
    table = boundary_ops.gram_record(
        mesh, assignment, models, excitations,
        quadrature=quad, solver=solver, jobs=args.jobs,
    )
    path = os.path.join(out, "gram.csv")
    _write_gram(path, table.rows, digest)
    write_json(os.path.join(out, "quadrature_report.json"), {
        "schema_version": 1,
        "config_digest": digest,
        "per_excitation": table.quadrature,
        "failures": {str(k): v for k, v in table.failures.items()},
    })
    diag = table.diagonal_powers()
    print(f"averaged powers: {', '.join(fmt(v) for v in diag)} -> {path}")
    return 1 if table.failures else 0


def cmd_reconstruct(cfg, args) -> int:
    digest = cfgmod.config_digest(cfg)
    out = cfg["output_dir"]
    ensure_dir(out)
    mesh, models, phantom, assignment, excitations = _prepare(cfg)
    solver = cfgmod.build_solver_options(cfg)
    quad = cfgmod.build_quadrature_options(cfg)
    imcfg = cfg.get("imaging")
    if imcfg is None:
        raise ConfigurationError("reconstruct requires an imaging section")
    background = models[phantom.background]
    anomaly = models[imcfg["anomaly_model"]]
    direction = imcfg.get("direction", "less")
    tau = float(imcfg.get("tau", 1e-6))
    noise = float(imcfg.get("noise", 0.0))
    grid = imcfg.get("grid", {})

    measurements = imaging.synthesize_measurements(
        mesh, assignment, models, excitations,
        noise=noise, seed=int(cfg["seed"]), quadrature=quad, solver=solver, jobs=args.jobs,
    )
    regions = imaging.disk_test_grid(
        mesh, float(grid.get("radius", 0.1)), int(grid.get("m", 4))
    )
    indicator = imaging.mpm_reconstruct(
        mesh, background, anomaly, measurements, regions, tau,
        direction=direction, quadrature=quad, solver=solver, jobs=args.jobs,
    )

    path = os.path.join(out, "indicator.csv")
    write_csv(
        path,
        ["center_x", "center_y", "radius", "verdict", "worst_margin", "worst_excitation"],
        (
            [r.center[0], r.center[1], r.radius, r.verdict, r.worst_margin,
             r.worst_excitation]
            for r in indicator.regions
        ),
        digest=digest,
    )
    write_json(os.path.join(out, "summary.json"), {
        "schema_version": 1,
        "config_digest": digest,
        "tau": tau,
        "direction": direction,
        "noise": noise,
        "regions": len(indicator.regions),
        "compatible": indicator.compatible_count(),
        "excluded": sum(1 for r in indicator.regions if r.verdict == "excluded"),
        "unknown": sum(1 for r in indicator.regions if r.verdict == "unknown"),
        "measured_powers": measurements.powers,
    })
    print(f"{indicator.compatible_count()}/{len(indicator.regions)} regions compatible "
          f"at tau={fmt(tau)} -> {path}")
    return 0


def cmd_verify(cfg, args) -> int:
    digest = cfgmod.config_digest(cfg)
    out = cfg["output_dir"]
    ensure_dir(out)
    suite_cfg = dict(cfg.get("verify", {}))
    suite_cfg["seed"] = int(cfg["seed"])
    if getattr(args, "only", None):
        suite_cfg["only"] = args.only
    report = verify.run_full_suite(suite_cfg, jobs=args.jobs)
    payload = report.to_json_dict()
    payload["config_digest"] = digest
    write_json(os.path.join(out, "verification_report.json"), payload)
    for check in report.checks:
        marker = "PASS" if check.passed else "FAIL"
        print(f"{marker} {check.id} {check.case}")
    print(f"all_pass={str(report.all_pass).lower()} "
          f"({len(report.checks)} checks, ids: {', '.join(report.ids())})")
    return 0 if report.all_pass else 1


def cmd_curves(cfg, args) -> int:
    digest = cfgmod.config_digest(cfg)
    out = cfg["output_dir"]
    ensure_dir(out)
    models = cfgmod.build_models(cfg)
    spec = cfg.get("curves", {})
    points = int(spec.get("points", 61))
    for mid in sorted(models):
        model = models[mid]
        e_max = float(spec.get("e_max", 3.0 * model.E0))
        grid = np.linspace(0.0, e_max, points)
        from nltomo.constitutive import export_constitutive_curves

        table = export_constitutive_curves(model, grid)
        if model.sigma_lower is not None and model.sigma_upper is not None:
            lower, upper = h4_envelope(model, grid)
        else:
            lower = upper = [None] * len(grid)
        rows = (
            [e, s, j, q, lo, hi]
            for (e, s, j, q), lo, hi in zip(table, lower, upper)
        )
        path = os.path.join(out, f"curves_{mid}.csv")
        write_csv(path, ["E", "sigma", "J", "Q", "sigma_lower", "sigma_upper"],
                  rows, digest=digest)
        print(f"{mid}: {len(grid)} rows -> {path}")
    return 0


_COMMANDS = {
    "mesh-gen": cmd_mesh_gen,
    "forward": cmd_forward,
    "dtn": cmd_dtn,
    "avgdtn": cmd_avgdtn,
    "reconstruct": cmd_reconstruct,
    "verify": cmd_verify,
    "curves": cmd_curves,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = cfgmod.load_config(args.config, seed_override=args.seed,
                                 output_override=args.out)
        return _COMMANDS[args.command](cfg, args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (NonConvergenceError, QuadratureNotConvergedError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
