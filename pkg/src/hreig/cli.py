"""Command-line interface: experiment presets and machine-readable outputs.

Subcommands:

* ``run``             adaptive eigenvalue computation, writes history.csv
* ``uniform``         uniform-refinement history with the same schema
* ``dump-mesh``       write a preset or refined mesh in the text format
* ``dump-estimator``  one solve + per-element estimator table as CSV

Configuration precedence: command-line flags override config-file values
override built-in defaults.  Config files (and the emitted run manifest)
are flat ``key=value`` text, so a manifest can be replayed with
``--config``.
"""

import argparse
import os
import sys

from . import __version__
from .adapt import AdaptConfig, afem_run, uniform_run
from .assembly import ComplianceModel
from .eigensolver import SolverConfig
from .estimator import compute_estimator, eta_global
from .mesh import PRESETS, load_mesh, save_mesh, uniform_refine

_DEFAULTS = {
    "preset": None,
    "mesh": None,
    "theta": 0.5,
    "k": 3,
    "model": "stokes",
    "nu": 1.0,
    "mu": 1.0,
    "lam": 1.0,
    "max_dof": 50000,
    "eta_tol": None,
    "postprocess": False,
    "mark_with": "eta",
    "target_index": 1,
    "shift": None,
    "tol": 1e-10,
    "max_iters": 500,
    "seed": 0,
    "threads": 1,
    "levels": 3,
    "refine": 0,
    "out": "out",
    "dump_meshes": False,
    "dump_estimators": False,
}

_TYPES = {
    "theta": float, "k": int, "nu": float, "mu": float, "lam": float,
    "max_dof": int, "eta_tol": float, "postprocess": bool, "target_index": int,
    "shift": float, "tol": float, "max_iters": int, "seed": int, "threads": int,
    "levels": int, "refine": int, "dump_meshes": bool, "dump_estimators": bool,
}


class CliError(Exception):
    def __init__(self, message, code=2):
        super().__init__(message)
        self.code = code


def _build_parser():
    p = argparse.ArgumentParser(
        prog="hreig",
        description="Adaptive mixed finite element solver for elasticity "
                    "and Stokes eigenvalue problems",
    )
    p.add_argument("--version", action="version", version=f"hreig {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(sp):
        sp.add_argument("--preset", choices=sorted(PRESETS),
                        help="built-in initial mesh")
        sp.add_argument("--mesh", help="mesh file in the text format")
        sp.add_argument("--config", help="key=value config file")
        sp.add_argument("--out", help="output directory (default: out)")
        sp.add_argument("--threads", type=int,
                        help="reserved; execution is single-threaded")

    def add_model(sp):
        sp.add_argument("--k", type=int, help="stress polynomial degree (>= 3)")
        sp.add_argument("--model", choices=["stokes", "elasticity"])
        sp.add_argument("--nu", type=float, help="viscosity (stokes)")
        sp.add_argument("--mu", type=float, help="shear modulus (elasticity)")
        sp.add_argument("--lam", type=float, help="first Lame parameter (elasticity)")
        sp.add_argument("--target-index", type=int, dest="target_index")
        sp.add_argument("--shift", type=float)
        sp.add_argument("--tol", type=float)
        sp.add_argument("--max-iters", type=int, dest="max_iters")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--postprocess", action="store_const", const=True,
                        help="compute the reconstructed eigenvalue and estimator")

    sp = sub.add_parser("run", help="adaptive eigenvalue computation")
    add_common(sp)
    add_model(sp)
    sp.add_argument("--theta", type=float, help="bulk marking parameter in (0,1)")
    sp.add_argument("--max-dof", type=int, dest="max_dof",
                    help="stop once dim V reaches this budget")
    sp.add_argument("--eta-tol", type=float, dest="eta_tol",
                    help="stop once the estimator drops below this")
    sp.add_argument("--mark-with", choices=["eta", "eta_star"], dest="mark_with")
    sp.add_argument("--dump-meshes", action="store_const", const=True,
                    dest="dump_meshes", help="write one mesh file per level")
    sp.add_argument("--dump-estimators", action="store_const", const=True,
                    dest="dump_estimators",
                    help="write one per-element estimator CSV per level")

    sp = sub.add_parser("uniform", help="uniform-refinement history")
    add_common(sp)
    add_model(sp)
    sp.add_argument("--levels", type=int, help="number of refinement rounds")

    sp = sub.add_parser("dump-mesh", help="write a mesh in the text format")
    add_common(sp)
    sp.add_argument("--refine", type=int, help="uniform refinement rounds first")

    sp = sub.add_parser("dump-estimator", help="per-element estimator table")
    add_common(sp)
    add_model(sp)
    sp.add_argument("--refine", type=int, help="uniform refinement rounds first")
    return p


def _read_config(path):
    values = {}
    try:
        with open(path) as fh:
            for ln, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise CliError(f"{path}:{ln}: expected key=value")
                key, _, raw = line.partition("=")
                key = key.strip().replace("-", "_")
                raw = raw.strip()
                if key in ("command", "version", "config"):
                    continue
                if key not in _DEFAULTS:
                    raise CliError(f"{path}:{ln}: unknown config key {key!r}")
                if raw == "":
                    values[key] = None
                elif key in _TYPES and _TYPES[key] is bool:
                    values[key] = raw.lower() in ("1", "true", "yes", "on")
                elif key in _TYPES:
                    values[key] = _TYPES[key](raw)
                else:
                    values[key] = raw
    except OSError as exc:
        raise CliError(f"cannot read config file: {exc}") from None
    return values


def _resolve(args):
    """Merge CLI > config file > defaults into one flat dict."""
    cfg = dict(_DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(_read_config(args.config))
    for key in _DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _validate(cfg, command):
    if command in ("run",) and not (0.0 < cfg["theta"] < 1.0):
        raise CliError(f"theta must lie in (0, 1), got {cfg['theta']}")
    if cfg["k"] < 3:
        raise CliError(f"k must be >= 3, got {cfg['k']}")
    if cfg["threads"] < 1:
        raise CliError("threads must be >= 1")
    if command == "run" and cfg["max_dof"] is None and cfg["eta_tol"] is None:
        raise CliError("need a stopping rule: --max-dof or --eta-tol")
    if cfg["mark_with"] == "eta_star" and not cfg["postprocess"]:
        raise CliError("--mark-with eta_star requires --postprocess")
    if cfg["preset"] and cfg["mesh"]:
        raise CliError("give either --preset or --mesh, not both")
    if not cfg["preset"] and not cfg["mesh"]:
        raise CliError("an initial mesh is required: --preset or --mesh")


def _initial_mesh(cfg):
    if cfg["preset"]:
        return PRESETS[cfg["preset"]]()
    return load_mesh(cfg["mesh"])


def _compliance(cfg):
    if cfg["model"] == "stokes":
        return ComplianceModel.stokes(cfg["nu"])
    return ComplianceModel.elasticity(cfg["mu"], cfg["lam"])


def _adapt_config(cfg):
    return AdaptConfig(
        theta=cfg["theta"],
        k=cfg["k"],
        target_index=cfg["target_index"],
        model=_compliance(cfg),
        max_displacement_dofs=cfg["max_dof"],
        eta_tol=cfg["eta_tol"],
        solver=SolverConfig(shift=cfg["shift"], tol=cfg["tol"],
                            max_iters=cfg["max_iters"], seed=cfg["seed"]),
        postprocess=cfg["postprocess"],
        mark_with=cfg["mark_with"],
    )


def _write_manifest(cfg, command, path):
    def fmt(v):
        if v is None:
            return ""
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, float):
            return f"{v:.12g}"
        return str(v)

    with open(path, "w") as fh:
        fh.write(f"command={command}\n")
        fh.write(f"version={__version__}\n")
        for key in sorted(_DEFAULTS):
            fh.write(f"{key}={fmt(cfg[key])}\n")


def _cmd_run(cfg):
    mesh = _initial_mesh(cfg)
    acfg = _adapt_config(cfg)
    outdir = cfg["out"]
    os.makedirs(outdir, exist_ok=True)
    _write_manifest(cfg, "run", os.path.join(outdir, "run-manifest.txt"))

    collect = cfg["dump_meshes"] or cfg["dump_estimators"]
    history = afem_run(mesh, acfg, collect=collect)
    history.to_csv(os.path.join(outdir, "history.csv"))
    if collect:
        for state in history.levels:
            if cfg["dump_meshes"]:
                save_mesh(state.mesh,
                          os.path.join(outdir, f"mesh_level_{state.level:03d}.txt"))
            if cfg["dump_estimators"]:
                from .spaces import build_displacement_space, build_stress_space
                S = build_stress_space(state.mesh, cfg["k"])
                U = build_displacement_space(state.mesh, cfg["k"])
                rep = compute_estimator(S, U, acfg.model, state.sigma,
                                        state.displacement)
                rep.write_csv(os.path.join(
                    outdir, f"estimator_level_{state.level:03d}.csv"))
    last = history.records[-1]
    print(f"levels={len(history.records)} ntri={last.ntri} dim_v={last.dim_v} "
          f"lambda={last.lam:.12g}"
          + (f" lambda_star={last.lam_star:.12g}" if cfg["postprocess"] else ""))
    return 0


def _cmd_uniform(cfg):
    mesh = _initial_mesh(cfg)
    acfg = _adapt_config(cfg)
    acfg.max_displacement_dofs = None
    acfg.eta_tol = None
    acfg.max_displacement_dofs = 10 ** 9
    outdir = cfg["out"]
    os.makedirs(outdir, exist_ok=True)
    _write_manifest(cfg, "uniform", os.path.join(outdir, "run-manifest.txt"))
    history = uniform_run(mesh, acfg, cfg["levels"])
    history.to_csv(os.path.join(outdir, "history.csv"))
    last = history.records[-1]
    print(f"levels={len(history.records)} ntri={last.ntri} "
          f"lambda={last.lam:.12g}")
    return 0


def _cmd_dump_mesh(cfg):
    mesh = _initial_mesh(cfg)
    if cfg["refine"]:
        mesh = uniform_refine(mesh, cfg["refine"])
    outdir = cfg["out"]
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, "mesh.txt")
    save_mesh(mesh, path)
    print(f"wrote {path}: {mesh.n_triangles} triangles, {mesh.n_vertices} vertices")
    return 0


def _cmd_dump_estimator(cfg):
    from .eigensolver import solve_eigen
    from .spaces import build_displacement_space, build_stress_space
    from .assembly import assemble

    mesh = _initial_mesh(cfg)
    if cfg["refine"]:
        mesh = uniform_refine(mesh, cfg["refine"])
    model = _compliance(cfg)
    S = build_stress_space(mesh, cfg["k"])
    U = build_displacement_space(mesh, cfg["k"])
    system = assemble(S, U, model)
    scfg = SolverConfig(shift=cfg["shift"] if cfg["shift"] is not None else 1.0,
                        tol=cfg["tol"], max_iters=cfg["max_iters"],
                        nev=cfg["target_index"], seed=cfg["seed"])
    pair = solve_eigen(system, cfg["target_index"], scfg)[cfg["target_index"] - 1]
    rep = compute_estimator(S, U, model, pair.stress, pair.displacement)
    outdir = cfg["out"]
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, "estimator.csv")
    rep.write_csv(path)
    print(f"wrote {path}: lambda={pair.value:.12g} "
          f"eta={eta_global(rep) ** 0.5:.12g}")
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "uniform": _cmd_uniform,
    "dump-mesh": _cmd_dump_mesh,
    "dump-estimator": _cmd_dump_estimator,
}


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve(args)
        _validate(cfg, args.command)
    except CliError as exc:
        print(f"hreig: error: {exc}", file=sys.stderr)
        return exc.code
    try:
        return _COMMANDS[args.command](cfg)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        stage = getattr(exc, "stage", type(exc).__name__)
        print(f"hreig: {args.command} failed [{stage}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
