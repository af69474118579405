"""Command line: ``anisofem {refine,solve,study}``.

Settings come from ``--config FILE`` (key=value lines, see
``configs/study.cfg`` in the repository) and are overridden by flags.
"""

from __future__ import annotations

import argparse
import sys
import time

from .domains import DOMAINS, build_domain
from .experiments import LEVEL_CAP, ConfigError, ExperimentConfig, emit_table, load_config, run_experiment
from .fem import EmptyInterior, h1_seminorm, solve
from .mesh import check_conformity, refine
from .meshio import export_vtk, save_mesh

__all__ = ["main", "build_parser"]


def _kappa_list(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value settings file; flags take precedence")
    common.add_argument("--domain", choices=sorted(DOMAINS))
    common.add_argument("--kappa-edge", type=_kappa_list, help="edge grading κ_e, comma list allowed for study")
    common.add_argument("--kappa-vertex", type=float, help="corner vertex grading κ_v (default 0.5)")
    common.add_argument("--levels", type=int, help="number of refinements")
    common.add_argument("--tol", type=float, help="relative CG residual tolerance")
    common.add_argument("--out", help="output path")
    common.add_argument("--format", help="text|csv for study; mesh|vtk for refine and solve")
    common.add_argument("--allow-large", action="store_true", default=None,
                        help=f"permit more than {LEVEL_CAP} refinement levels")

    p = argparse.ArgumentParser(prog="anisofem", description="Graded tetrahedral refinement and P1 convergence studies.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("refine", parents=[common], help="refine a domain mesh and write it")
    sub.add_parser("solve", parents=[common], help="solve -Δu = 1 on one refinement level")
    sub.add_parser("study", parents=[common], help="full convergence-rate table")
    return p


def _configs(args) -> list:
    """Experiment configs for each requested κ_e, plus the single-mesh level.

    The study invariant levels >= 2 does not apply to refine and solve, so
    for those the level is taken out and checked here.
    """
    values = load_config(args.config) if args.config else {}
    level = None
    levels = args.levels
    if args.command != "study":
        values.pop("format", None)  # text/csv only applies to tables
        level = levels if levels is not None else int(values.get("levels", ExperimentConfig.levels))
        values.pop("levels", None)
        levels = None
        allow = args.allow_large or str(values.get("allow_large", "")).lower() in ("1", "true", "yes", "on")
        if level < 0:
            raise ConfigError("levels must be non-negative")
        if level > LEVEL_CAP and not allow:
            raise ConfigError(f"levels={level} exceeds the cap {LEVEL_CAP}; pass --allow-large")
    base = ExperimentConfig.from_mapping(values) if values else ExperimentConfig()
    out = []
    for ke in args.kappa_edge or [None]:
        kw = dict(domain=args.domain, kappa_edge=ke, kappa_vertex=args.kappa_vertex, levels=levels,
                  tol=args.tol, out=args.out, allow_large=args.allow_large)
        if args.command == "study":
            kw["format"] = args.format
        out.append(base.updated(**kw))
    return out, level


def _write(text: str, path) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    try:
        with open(path, "w") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path!r}: {exc.strerror}") from exc


def _mesh_for(cfg, level):
    dom = build_domain(cfg.domain, cfg.kappa_e, cfg.kappa_v)
    return dom, refine(dom.mesh, dom.singular, level)


def cmd_refine(cfg, level, fmt) -> int:
    t0 = time.perf_counter()
    dom, mesh = _mesh_for(cfg, level)
    report = check_conformity(mesh)
    print(f"{dom.name} level {mesh.level}: {mesh.n_points} vertices, {mesh.n_tets} tets, "
          f"census {mesh.census()}, conforming={not report}, {time.perf_counter() - t0:.1f}s", file=sys.stderr)
    if cfg.out:
        if (fmt or "mesh") == "vtk":
            export_vtk(mesh, cfg.out)
        else:
            save_mesh(mesh, cfg.out)
    return 0 if not report else 1


def cmd_solve(cfg, level, fmt) -> int:
    t0 = time.perf_counter()
    dom, mesh = _mesh_for(cfg, level)
    try:
        u, res, system = solve(mesh, 1.0, tol=cfg.tol)
        iters, resid = res.iterations, res.residual
        seminorm = h1_seminorm(u, system.A)
    except EmptyInterior:
        u, iters, resid, seminorm = None, 0, 0.0, 0.0
    print(f"domain={dom.name} level={mesh.level} kappa_edge={cfg.kappa_e:g} kappa_vertex={cfg.kappa_v:g} "
          f"points={mesh.n_points} tets={mesh.n_tets} cg_iters={iters} residual={resid:.3e} "
          f"h1_seminorm={seminorm:.12g} seconds={time.perf_counter() - t0:.2f}")
    if cfg.out:
        if (fmt or "vtk") == "mesh":
            save_mesh(mesh, cfg.out)
        else:
            export_vtk(mesh, cfg.out, u)
    return 0


def cmd_study(cfgs) -> int:
    tables = [run_experiment(c, log=lambda s: print(s, file=sys.stderr)) for c in cfgs]
    _write(emit_table(tables, cfgs[0].format), cfgs[0].out)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfgs, level = _configs(args)
        if args.command != "study" and len(cfgs) > 1:
            raise ConfigError(f"{args.command} takes a single --kappa-edge value")
        if args.command == "refine":
            return cmd_refine(cfgs[0], level, args.format)
        if args.command == "solve":
            return cmd_solve(cfgs[0], level, args.format)
        return cmd_study(cfgs)
    except (ConfigError, OSError) as exc:
        print(f"anisofem: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
