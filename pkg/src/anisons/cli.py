"""``anisons`` command line: gen, solve, norm and sweep.

Exit codes: 0 success, 1 usage or configuration, 2 generation, 3 solver,
4 sweep failed.  Every command that writes files also updates
``<out>/manifest.json`` with the config hash, seed, library versions and the
sha256 of each output, which is enough to reproduce the run bit for bit.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import GEN_FAMILIES, RunConfig, load_config, parse_eps_list
from .datagen import (
    CERTIFICATE_TOL,
    HYPOTHESIS_TOL,
    ProfileSpec,
    cone_masks,
    decompose_horizontal,
    gen_cone_supported,
    gen_cone_union,
    gen_oscillating,
    gen_slow_varying,
    gen_thm12_data,
    snap_eps,
    layered_example,
)
from .exceptions import (
    AnisoError,
    BlowupSuspectedError,
    ConfigError,
    NormSpecError,
    SolverError,
    SweepFailedError,
    TrajectoryError,
)
from .fieldio import read_field, write_checkpoint, write_field
from .harness import RECIPES, localized_taylor_green, run_sweep
from .norms import GRAMMAR, evaluate, parse_norm_spec
from .solvers import (
    rest_trajectory,
    solve_ns2d_stack,
    solve_ns3d,
    solve_rescaled_W,
    solve_transport_diffusion,
)
from .spectral import VelocityField

EXIT_OK, EXIT_USAGE, EXIT_GEN, EXIT_SOLVER, EXIT_SWEEP = 0, 1, 2, 3, 4
SYSTEMS = ("ns3d", "ns2d-stack", "transport", "rescaled")
RESOLUTION_TOL = 1e-8

log = logging.getLogger("anisons")


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------- manifest


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def versions() -> dict:
    return {"anisons": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def update_manifest(cfg: RunConfig, label: str, command: list, outputs: list[Path]) -> Path:
    """Record one run under ``label``; reruns of the same command rewrite identical content."""
    out = cfg.out_dir
    path = out / "manifest.json"
    data = json.loads(path.read_text()) if path.exists() else {}
    data["versions"] = versions()
    runs = data.setdefault("runs", {})
    runs[label] = {
        "command": command,
        "config_sha256": cfg.sha256,
        "config": cfg.effective(),
        "seed": cfg.seed,
        "outputs": {p.relative_to(out).as_posix(): _sha256(p) for p in sorted(outputs)},
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def _json_write(path: Path, payload) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


# --------------------------------------------------------------------------- gen


def _outside_fraction(u: VelocityField, allowed: np.ndarray) -> float:
    mass = (np.abs(u.coeffs) ** 2).sum(axis=0)
    total = mass.sum()
    return float(mass[~allowed].sum() / total) if total > 0 else 0.0


def generate(cfg: RunConfig, family: str, eps: float) -> tuple[VelocityField, dict]:
    """Build one field and its provenance record (without writing anything)."""
    if family not in GEN_FAMILIES:
        raise UsageError(f"unknown family {family!r}; choose from {', '.join(GEN_FAMILIES)}")
    p = cfg.generator_params(family)
    gs = cfg.grid_spec(family)
    grid = gs.build(eps)
    effective_eps = eps
    if family in ("oscillating", "slow-varying"):
        spec = ProfileSpec(family, eps, amplitude=p.get("amplitude", 1.0), phi_width=p.get("phi_width"),
                           phi0_width=p.get("phi0_width", 1.0), phi0_center=p.get("phi0_center", 0.0))
        if family == "oscillating":
            effective_eps = snap_eps(eps, grid.L3)[0]
            u = gen_oscillating(spec, grid)
        else:
            u = gen_slow_varying(spec, grid)
        cert = ("dealias-band-leakage", _outside_fraction(u, grid.dealias), RESOLUTION_TOL)
    elif family == "cone":
        u = gen_cone_supported(cfg.seed, eps, (0.0, 0.5), grid, power=p.get("power", 2.0))
        _, horizontal = cone_masks(grid, eps)
        cert = ("mass-outside-horizontal-cone", _outside_fraction(u, horizontal), HYPOTHESIS_TOL)
    elif family == "cone-union":
        u = gen_cone_union(cfg.seed, eps, grid, power=p.get("power", 2.0),
                           vertical_weight=p.get("vertical_weight", 1.0))
        vertical, horizontal = cone_masks(grid, eps)
        cert = ("mass-outside-both-cones", _outside_fraction(u, vertical | horizontal), HYPOTHESIS_TOL)
    elif family == "layered":
        zero_slice = bool(p.get("zero_slice", True))
        v0h, w0 = layered_example(gs.build(None), zero_slice=zero_slice, amplitude=p.get("amplitude", 1.0),
                                w_amplitude=p.get("w_amplitude", 1.0), width=p.get("phi_width"))
        u = gen_thm12_data(v0h, w0, eps, zero_slice=zero_slice)
        cert = ("max-horizontal-over-eps-vertical", decompose_horizontal(u, eps).certificate, 1.0 + CERTIFICATE_TOL)
    else:
        amp = p.get("amplitude", 1.0)
        if "width" in p:
            u = localized_taylor_green(grid, amp, p["width"])
        else:
            x1, x2 = np.meshgrid(grid.coords(0), grid.coords(1), indexing="ij")
            c1 = np.repeat((amp * np.cos(x1) * np.sin(x2))[..., None], grid.n3, axis=2)
            c2 = np.repeat((-amp * np.sin(x1) * np.cos(x2))[..., None], grid.n3, axis=2)
            u = VelocityField.from_physical(grid, [c1, c2, np.zeros(grid.shape)], divfree=True)
        cert = ("dealias-band-leakage", _outside_fraction(u, grid.dealias), RESOLUTION_TOL)
    name, value, tol = cert
    provenance = {
        "family": family,
        "eps_requested": eps,
        "eps": effective_eps,
        "seed": cfg.seed,
        "parameters": p,
        "grid": {"shape": list(grid.shape), "lengths": list(grid.lengths)},
        "divergence_residual": u.divergence_residual(),
        "certificate": {"name": name, "value": value, "tolerance": tol, "passes": bool(value <= tol)},
    }
    return u, provenance


def cmd_gen(cfg: RunConfig, family: str, eps: float, argv: list) -> int:
    try:
        u, prov = generate(cfg, family, eps)
    except AnisoError as exc:
        log.error("generation failed: %s", exc)
        return EXIT_GEN
    stem = f"{family}-eps{eps:.10g}"
    field_path = write_field(cfg.out_dir / f"{stem}.anf1", u)
    prov_path = _json_write(cfg.out_dir / f"{stem}.json", prov)
    update_manifest(cfg, f"gen {family} eps={eps:.10g}", argv, [field_path, prov_path])
    cert = prov["certificate"]
    print(f"{field_path}  certificate {cert['name']}={cert['value']:.3e} {'ok' if cert['passes'] else 'FAILED'}")
    if not cert["passes"]:
        log.error("certificate %s failed: %.3e > %.3e", cert["name"], cert["value"], cert["tolerance"])
        return EXIT_GEN
    return EXIT_OK


# --------------------------------------------------------------------------- solve


def _advector(cfg: RunConfig, path, grid):
    if path is None:
        return rest_trajectory(grid, cfg.solver.t_end)
    v = read_field(path)
    if v.grid.shape != grid.shape:
        raise UsageError(f"advecting field {path} has shape {v.grid.shape}, expected {grid.shape}")
    return solve_ns2d_stack(v, replace(cfg.solver, stride=1))


def cmd_solve(cfg: RunConfig, system: str, inputs: list[str], eps: float | None, argv: list) -> int:
    if system not in SYSTEMS:
        raise UsageError(f"unknown system {system!r}; choose from {', '.join(SYSTEMS)}")
    if not inputs:
        raise UsageError("solve needs an input field file")
    extra = inputs[1] if len(inputs) > 1 else None
    if len(inputs) > 2 or (extra is not None and system in ("ns3d", "ns2d-stack")):
        raise UsageError(f"too many inputs for {system}")
    try:
        u0 = read_field(inputs[0])
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read {inputs[0]}: {exc}") from exc
    if not isinstance(u0, VelocityField):
        raise UsageError("solver inputs must be three-component fields")
    cfgs = cfg.solver
    try:
        if system == "ns3d":
            traj = solve_ns3d(u0, cfgs)
        elif system == "ns2d-stack":
            traj = solve_ns2d_stack(u0, cfgs)
        elif system == "transport":
            traj = solve_transport_diffusion(u0, _advector(cfg, extra, u0.grid), cfgs)
        else:
            if eps is None:
                raise UsageError("the rescaled system needs --eps")
            adv = _advector(cfg, extra, u0.grid)
            traj = solve_rescaled_W(u0, adv, eps, cfgs)
    except BlowupSuspectedError as exc:
        log.error("blow-up suspected at t=%s: %s", exc.time, exc)
        return EXIT_SOLVER
    except (SolverError, TrajectoryError, AnisoError) as exc:
        log.error("solver failed: %s", exc)
        return EXIT_SOLVER
    data_path, index_path = write_checkpoint(cfg.out_dir / system, traj)
    label = f"solve {system}" + (f" eps={eps:.10g}" if system == "rescaled" else "")
    update_manifest(cfg, label, argv, [data_path, index_path])
    print(f"{data_path}  {len(traj)} samples, final energy {traj.sample_energy()[-1]:.6e}")
    return EXIT_OK


# --------------------------------------------------------------------------- norm


def cmd_norm(path: str, spec_text: str) -> int:
    try:
        spec = parse_norm_spec(spec_text)
    except NormSpecError as exc:
        msg = str(exc) if GRAMMAR in str(exc) else f"{exc}\n{GRAMMAR}"
        print(f"anisons norm: {msg}", file=sys.stderr)
        return EXIT_USAGE
    try:
        u = read_field(path)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    value = evaluate(spec, u)
    csv.writer(sys.stdout, lineterminator="\n").writerow(value.csv_row())
    return EXIT_OK


# --------------------------------------------------------------------------- sweep


def cmd_sweep(cfg: RunConfig, recipes: list[str], eps: list[float], workers: int, argv: list) -> int:
    names = recipes or list(cfg.recipes)
    if not names:
        raise UsageError("no recipe given (positional argument or [sweep] recipes)")
    unknown = [r for r in names if r not in RECIPES]
    if unknown:
        raise UsageError(f"unknown recipes {unknown}; known: {', '.join(sorted(RECIPES))}")
    status = EXIT_OK
    for name in names:
        try:
            report = run_sweep(name, eps, cfg.sweep, out_dir=cfg.out_dir, workers=workers)
        except SweepFailedError as exc:
            log.error("%s", exc)
            status = EXIT_SWEEP
            continue
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        outputs = [p for p in (cfg.out_dir / name).glob("*.json")]
        outputs += [cfg.out_dir / f"{name}{ext}" for ext in (".json", ".csv", ".dat")]
        update_manifest(cfg, f"sweep {name}", argv, outputs)
        print(report.line())
    return status


# --------------------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="run configuration file")
    common.add_argument("--seed", type=int, metavar="N", help="override [run] seed")
    common.add_argument("--out", metavar="DIR", help="output directory (else $ANISONS_OUT, else ./anisons-out)")
    common.add_argument("--workers", type=int, metavar="N", default=None,
                        help="parallel sweep jobs (default: available cores)")
    common.add_argument("--eps", metavar="LIST", help="comma-separated eps values, e.g. 1/4,1/8")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="anisons", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"anisons {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    g = sub.add_parser("gen", parents=[common], help="generate an initial field")
    g.add_argument("family", choices=GEN_FAMILIES)
    s = sub.add_parser("solve", parents=[common], help="integrate one of the systems")
    s.add_argument("system", choices=SYSTEMS)
    s.add_argument("inputs", nargs="+", help="initial field; transport/rescaled accept a second file "
                                                 "with the horizontal advecting data")
    n = sub.add_parser("norm", parents=[common], help="evaluate a norm, print a CSV row")
    n.add_argument("field")
    n.add_argument("spec", help=GRAMMAR)
    w = sub.add_parser("sweep", parents=[common], help="run eps sweeps for recipes")
    w.add_argument("recipes", nargs="*", help="recipe names (default: [sweep] recipes)")
    return parser


def _one_eps(text: str | None, default: float | None) -> float | None:
    if text is None:
        return default
    values = parse_eps_list(text)
    if len(values) != 1:
        raise UsageError("this command takes a single eps value")
    return values[0]


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="anisons: %(message)s")
    try:
        if args.command == "norm":
            return cmd_norm(args.field, args.spec)
        cfg = load_config(args.config, seed=args.seed, out=args.out)
        if args.command == "gen":
            return cmd_gen(cfg, args.family, _one_eps(args.eps, 0.25), argv)
        if args.command == "solve":
            return cmd_solve(cfg, args.system, args.inputs, _one_eps(args.eps, None), argv)
        eps = parse_eps_list(args.eps) if args.eps else list(cfg.eps)
        workers = args.workers if args.workers is not None else (os.cpu_count() or 1)
        if workers < 1:
            raise UsageError("--workers must be positive")
        return cmd_sweep(cfg, args.recipes, eps, workers, argv)
    except (UsageError, ConfigError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
