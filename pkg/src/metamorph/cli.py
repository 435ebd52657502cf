"""Command line interface: register, shoot, interpolate, viz-velocity.

Exit codes form a stable contract: 0 success, 2 malformed configuration
or arguments, 3 unreadable or invalid input data, 4 solver
non-convergence (partial outputs are still written).
"""

from __future__ import annotations

import argparse
import os
import sys

from PIL import Image as PILImage

from . import (config, imageio, interpolation, registration, shooting, viz)
from .errors import (ConfigError, DimensionError, DomainError, FormatError,
                     InversionError, MetamorphError, NonConvergenceError,
                     SolverError)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_SOLVER = 4


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="metamorph",
        description="Geodesic shooting and interpolation for images")
    sub = ap.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--out", help="output directory")

    p = sub.add_parser("register", parents=[common],
                       help="match a deformation to an image pair")
    p.add_argument("--u0", required=True)
    p.add_argument("--u1", required=True)

    p = sub.add_parser("shoot", parents=[common],
                       help="extrapolate a sequence from an initial pair")
    p.add_argument("--u0", required=True)
    p.add_argument("--u1", required=True)
    p.add_argument("--steps", type=int, help="number of steps K")

    p = sub.add_parser("interpolate", parents=[common],
                       help="discrete geodesic between two images")
    p.add_argument("--u0", required=True)
    p.add_argument("--uK", required=True)
    p.add_argument("--segments", type=int, help="number of segments K")

    p = sub.add_parser("viz-velocity", parents=[common],
                       help="render a deformation as a velocity color image")
    p.add_argument("--phi", required=True, help="deformation (.mdef) file")
    p.add_argument("--steps", type=int, default=1, help="velocity scale K")
    return ap


def _load_config(args) -> config.RunConfig:
    cfg = config.load(args.config) if args.config else config.RunConfig()
    for key in ("u0", "u1", "uK", "out", "steps", "segments"):
        value = getattr(args, key, None)
        if value is not None and value != "":
            setattr(cfg, key, value)
    return cfg


def _out_dir(cfg) -> str:
    os.makedirs(cfg.out, exist_ok=True)
    return cfg.out


def _save_rgb(rgb, path):
    pix = viz.rgb_to_pixels(rgb)
    PILImage.fromarray(pix, mode="RGB").save(path, format="PNG")


def _check_pair(u0, u1):
    if u0.level != u1.level:
        raise DimensionError(
            f"input images disagree in size: levels {u0.level} vs {u1.level}")


def cmd_register(args) -> int:
    cfg = _load_config(args)
    u0 = imageio.load_image(cfg.u0)
    u1 = imageio.load_image(cfg.u1)
    _check_pair(u0, u1)
    level = cfg.spline_level if cfg.spline_level > 0 else u0.level - 1
    result = registration.register(
        u0, u1, cfg.energy_params(), cfg.registration_config(), level=level)
    out = _out_dir(cfg)
    imageio.save_deformation(result.phi, os.path.join(out, "phi.mdef"))
    with open(os.path.join(out, "report.txt"), "w") as fh:
        fh.write(f"energy = {result.energy:.12e}\n")
        fh.write(f"grad_norm = {result.grad_norm:.3e}\n")
        fh.write(f"converged = {result.converged}\n")
        fh.write(f"iterations = {result.iterations}\n")
    return EXIT_OK if result.converged else EXIT_SOLVER


def _write_sequence(out, images, phis, do_viz, K):
    for k, img in enumerate(images):
        imageio.save_image(img, os.path.join(out, f"u_{k:03d}.png"))
    for k, phi in enumerate(phis, start=1):
        imageio.save_deformation(phi, os.path.join(out, f"phi_{k:03d}.mdef"))
        if do_viz:
            _save_rgb(viz.velocity_viz(phi, K),
                      os.path.join(out, f"velocity_{k:03d}.png"))


def cmd_shoot(args) -> int:
    cfg = _load_config(args)
    u0 = imageio.load_image(cfg.u0)
    u1 = imageio.load_image(cfg.u1)
    _check_pair(u0, u1)
    out = _out_dir(cfg)
    p = cfg.energy_params()
    partial = False
    failing = None
    try:
        result = shooting.exp_k(
            u0, u1, cfg.steps, p, cfg.shooting_config(),
            reg_cfg=cfg.registration_config(), reregister=cfg.reregister)
    except NonConvergenceError as exc:
        result = exc.partial
        partial = True
        failing = len(result.images)  # index of the step that failed
    bounds = []
    for k, mod in enumerate(result.modulations, start=1):
        img, bound = viz.modulation_viz(mod)
        if cfg.viz:
            imageio.save_image(img, os.path.join(out, f"modulation_{k:03d}.png"))
        bounds.append(bound)
    _write_sequence(out, result.images, result.deformations, cfg.viz, cfg.steps)
    with open(os.path.join(out, "modulation_bounds.txt"), "w") as fh:
        for k, b in enumerate(bounds, start=1):
            fh.write(f"I_{k} bound = {b:.12e}\n")
    with open(os.path.join(out, "report.txt"), "w") as fh:
        fh.write(f"steps = {cfg.steps}\n")
        fh.write(f"completed_images = {len(result.images)}\n")
        if partial:
            fh.write(f"FAILED at step index {failing}\n")
        for i, d in enumerate(result.diagnostics, start=2):
            fh.write(f"step {i}: iterations={d.iterations} "
                     f"final_diff={d.final_diff:.3e} residual={d.residual:.3e} "
                     f"min_det={d.min_det:.4f}\n")
        for i, e in enumerate(result.energies):
            fh.write(f"segment {i}: energy={e:.12e}\n")
    return EXIT_SOLVER if partial else EXIT_OK


def cmd_interpolate(args) -> int:
    cfg = _load_config(args)
    u0 = imageio.load_image(cfg.u0)
    uK = imageio.load_image(cfg.uK)
    _check_pair(u0, uK)
    result = interpolation.interpolate(
        u0, uK, cfg.energy_params(), cfg.interpolation_config())
    out = _out_dir(cfg)
    _write_sequence(out, result.images, result.deformations, cfg.viz,
                    cfg.segments)
    with open(os.path.join(out, "report.txt"), "w") as fh:
        fh.write(f"segments = {cfg.segments}\n")
        fh.write(f"sweeps = {result.sweeps}\n")
        for i, e in enumerate(result.energies, start=1):
            fh.write(f"sweep {i}: path_energy={e:.12e}\n")
    return EXIT_OK


def cmd_viz_velocity(args) -> int:
    cfg = _load_config(args)
    phi = imageio.load_deformation(args.phi)
    out = _out_dir(cfg)
    _save_rgb(viz.velocity_viz(phi, args.steps),
              os.path.join(out, "velocity.png"))
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    handlers = {
        "register": cmd_register,
        "shoot": cmd_shoot,
        "interpolate": cmd_interpolate,
        "viz-velocity": cmd_viz_velocity,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, DimensionError, DomainError, FileNotFoundError,
            IsADirectoryError, PermissionError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NonConvergenceError, SolverError, InversionError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except MetamorphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
