"""Command line entry point: ``calderon-lab <subcommand> <config> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .dtn import assemble_dtn, boundary_space, build_fractional_gram, op_norm_diff
from .errors import LabError, ValidationError
from .experiments import (MODES, OUTPUT_ENV, config_pairs, emit_results, load_config, run_sweep,
                          summarize)
from .fem import assemble, solve_dirichlet
from .green import asymptotic_exponent_fit, compute_green
from .mesh import OMEGA, save_field
from .probes import misfit, peeling_split

log = logging.getLogger("calderon_lab")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _point(text: str) -> np.ndarray:
    v = _floats(text)
    if len(v) != 3:
        raise argparse.ArgumentTypeError("a point needs three coordinates")
    return np.array(v)


def _out_dir(cfg, sub: str) -> Path:
    d = cfg.output / sub
    d.mkdir(parents=True, exist_ok=True)
    return d


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=1, sort_keys=True, default=str))


def cmd_validate(cfg, args) -> None:
    _emit({
        "status": "ok",
        "layers": cfg.domain.base.n_layers + 1,
        "pitch": cfg.domain.pitch,
        "explicit_pair": cfg.pair is not None,
        "config_hash": cfg.digest(),
    })


def cmd_solve(cfg, args) -> None:
    adm = config_pairs(cfg)[0][0]
    mesh = cfg.build_mesh()
    sys_ = assemble(adm, mesh, OMEGA)
    coeffs = np.asarray(args.data, float)
    u = solve_dirichlet(sys_, lambda x: coeffs[0] + x @ coeffs[1:4])
    path = _out_dir(cfg, "fields") / "solution.f64"
    save_field(u, path)
    _emit({"field": str(path), "nodes": int(sys_.nodes.n), "residual": sys_.interior_residual(u.local())})


def cmd_green(cfg, args) -> None:
    adm = config_pairs(cfg)[0][0]
    mesh = cfg.build_mesh()
    G = compute_green(adm, mesh, args.pole)
    path = _out_dir(cfg, "fields") / "green_regular.f64"
    G.regular.meta["pole"] = G.pole.tolist()
    save_field(G.regular, path)
    radius = 0.5 * G.cutoff.inner if G.cutoff is not None else 0.05
    _emit({"pole": G.pole.tolist(), "regular_field": str(path), "flux": abs(G.flux(radius)),
           "cutoff": None if G.cutoff is None else [G.cutoff.inner, G.cutoff.outer]})


def cmd_dtn_norm(cfg, args) -> None:
    adm1, adm2 = config_pairs(cfg)[0]
    mesh = cfg.build_mesh()
    space = boundary_space(mesh)
    L1 = assemble_dtn(adm1, mesh, space)
    L2 = assemble_dtn(adm2, mesh, space)
    eps = op_norm_diff(L1, L2, build_fractional_gram(space))
    d = _out_dir(cfg, "dtn")
    L1.export(d / "dtn1.json")
    L2.export(d / "dtn2.json")
    _emit({"eps": eps, "dofs": space.n, "export": str(d)})


def cmd_misfit(cfg, args) -> None:
    adm1, adm2 = config_pairs(cfg)[0]
    mesh = cfg.build_mesh()
    res = misfit(adm1, adm2, mesh, *cfg.pole_grids())
    _emit({"J": res.J, "max_abs_S0": float(np.abs(res.S0).max())})


def cmd_sweep(cfg, args) -> None:
    records = run_sweep(cfg, args.mode)
    path = emit_results(records, _out_dir(cfg, args.mode), args.mode)
    out = {"csv": str(path), "records": len(records)}
    if args.mode in ("lipschitz", "misfit"):
        out["summary"] = summarize(records)
    _emit(out)


def cmd_probe(cfg, args) -> None:
    mesh = cfg.build_mesh()
    adm1, adm2 = config_pairs(cfg)[0]
    if args.kind == "asymptotic":
        rep = asymptotic_exponent_fit(adm1, mesh, args.interface, args.ladder, mixed=not args.no_mixed)
        _emit({"radii": rep.radii.tolist(), "remainder": rep.remainder.tolist(),
               "theta1": rep.theta1, "theta2": rep.theta2, "theta3": rep.theta3,
               "monotone": rep.monotone})
    else:
        rep = peeling_split(adm1, adm2, mesh, args.interface, args.ladder, args.variant)
        _emit({"radii": rep.radii.tolist(), "I1": [abs(v) for v in rep.I1],
               "I2": [abs(v) for v in rep.I2], "slope_I1": rep.slope_I1})


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="calderon-lab", description=__doc__)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config", type=Path)
        sp.set_defaults(func=fn)
        return sp

    add("validate", cmd_validate, "check a configuration file")
    s = add("solve", cmd_solve, "forward Dirichlet solve with affine boundary data")
    s.add_argument("--data", type=_floats, default=[0.0, 1.0, 0.0, 0.0],
                   help="a,b1,b2,b3 for the boundary data a + b.x")
    g = add("green", cmd_green, "Green function for one pole in the slab")
    g.add_argument("--pole", type=_point, required=True)
    add("dtn-norm", cmd_dtn_norm, "operator norm of the DtN difference")
    add("misfit", cmd_misfit, "misfit functional on the configured pole grids")
    sw = add("sweep", cmd_sweep, "run a sweep and write CSV/JSON results")
    sw.add_argument("--mode", choices=MODES, required=True)
    pr = add("probe", cmd_probe, "interface probes (asymptotics or peeling split)")
    pr.add_argument("--interface", type=int, required=True)
    pr.add_argument("--ladder", type=_floats, required=True)
    pr.add_argument("--kind", choices=("asymptotic", "peeling"), default="asymptotic")
    pr.add_argument("--variant", choices=("value", "mixed_nn"), default="value")
    pr.add_argument("--no-mixed", action="store_true", help="skip the mixed-derivative fit")
    p.epilog = f"The output root can be overridden with ${OUTPUT_ENV}."
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed)
        args.func(cfg, args)
    except ValidationError as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return 2
    except LabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
