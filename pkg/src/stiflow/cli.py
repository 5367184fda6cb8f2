"""Command line driver.

Verbs:

  phantom      render the configured scene: template, velocity, frames
  simulate     scene plus measured sinograms and simulation metadata
  reconstruct  full joint recovery run with artifacts and figures
  verify       property batteries; pass/fail table plus a JSON report
  info         version, defaults, and the config schema

Common flags: ``--config PATH`` (JSON experiment file), ``--seed N``
and ``--out DIR`` (override the config), ``--suite NAME`` (verify
only).  ``STIFLOW_THREADS`` caps linear-algebra thread pools; it is
applied before numpy loads, which is why the heavyweight imports here
live inside the verb handlers.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 verification failure.  Failures print a one-line JSON object
(``{"error": ..., "message": ...}``) to stderr; when an output
directory is known, the same object is written to ``error.json``
there.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .errors import ConfigError, StiflowError, UnknownSuite

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)


def _apply_thread_cap() -> None:
    cap = os.environ.get("STIFLOW_THREADS")
    if cap is None:
        return
    try:
        n = int(cap)
    except ValueError:
        raise ConfigError(f"STIFLOW_THREADS must be an integer, got {cap!r}")
    if n < 1:
        raise ConfigError("STIFLOW_THREADS must be at least 1")
    for var in _THREAD_VARS:
        os.environ[var] = str(n)


def _load_experiment(args):
    from .config import ExperimentConfig, load_config

    if args.config is not None:
        cfg = load_config(args.config)
    else:
        cfg = ExperimentConfig(phantom="translating_disk")
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        updates["out_dir"] = args.out
    if updates:
        cfg = dataclasses.replace(cfg, **updates)
    args.resolved_out = cfg.out_dir  # for error.json placement on failure
    return cfg


def _cmd_phantom(args) -> int:
    from .fileio import (
        save_scalar_field,
        save_trajectory,
        save_velocity_field,
        write_png,
    )
    from .phantoms import make_phantom
    from .transport import solve_transport

    cfg = _load_experiment(args)
    out = Path(cfg.out_dir)
    grid, tg = cfg.image_grid(), cfg.time_grid()
    f0, v = make_phantom(cfg.phantom, grid, tg, cfg.kernel_spec())
    frames = solve_transport(
        f0,
        v,
        substeps_per_interval=cfg.model_config().substeps_per_interval,
        source=f"phantom:{cfg.phantom}",
    )
    save_scalar_field(f0, out / "template")
    save_velocity_field(v, out / "velocity")
    save_trajectory(frames, out / "frames", stem="truth")
    write_png(f0, out / "template_preview")
    print(
        f"phantom {cfg.phantom}: template, velocity, and "
        f"{len(frames.times)} frames in {out}"
    )
    return 0


def _cmd_simulate(args) -> int:
    from .fileio import save_sinogram, write_metrics
    from .phantoms import make_phantom, simulate_data

    cfg = _load_experiment(args)
    out = Path(cfg.out_dir)
    grid, tg = cfg.image_grid(), cfg.time_grid()
    f0, v = make_phantom(cfg.phantom, grid, tg, cfg.kernel_spec())
    data = simulate_data(f0, v, cfg.schedule(), cfg.noise_sigma, cfg.seed)
    for sino in data:
        save_sinogram(sino, out / f"sinogram_{sino.obs_index:02d}")
    write_metrics(
        {
            "phantom": cfg.phantom,
            "seed": cfg.seed,
            "noise_sigma": cfg.noise_sigma,
            "times": list(tg.obs_times),
        },
        out / "simulation.json",
    )
    print(f"simulate {cfg.phantom}: {len(data)} sinograms in {out}")
    return 0


def _cmd_reconstruct(args) -> int:
    from .reconstruct import run_reconstruct

    cfg = _load_experiment(args)
    metrics = run_reconstruct(cfg)
    print(
        f"reconstruct {cfg.phantom}: {metrics['termination']} after "
        f"{metrics['iterations']} iterations"
    )
    print(
        f"  final objective {metrics['objective']['value']:.6g}, "
        f"max frame error {metrics['frames']['max_rel_l2']:.4f}"
    )
    print(f"  artifacts in {cfg.out_dir}")
    return 0


def _cmd_verify(args) -> int:
    from .fileio import write_metrics
    from .verify import format_report, run_verify

    report, code = run_verify(args.suite)
    print(format_report(report))
    out = Path(args.out if args.out is not None else "runs/verify")
    args.resolved_out = str(out)
    write_metrics(report, out / "verify_report.json")
    print(f"report written to {out / 'verify_report.json'}")
    return code


def _cmd_info(args) -> int:
    from . import __version__, config
    from .phantoms import PHANTOM_IDS
    from .verify import SUITE_NAMES

    print(f"stiflow {__version__}")
    print("verbs: phantom, simulate, reconstruct, verify, info")
    print(f"phantoms: {', '.join(PHANTOM_IDS)}")
    print(f"verify suites: {', '.join(SUITE_NAMES)}, all")
    if args.config is not None:
        cfg = _load_experiment(args)
        print("resolved config:")
        print(json.dumps(dataclasses.asdict(cfg), indent=2, sort_keys=True))
    else:
        print()
        print(config.__doc__)
    return 0


_HANDLERS = {
    "phantom": _cmd_phantom,
    "simulate": _cmd_simulate,
    "reconstruct": _cmd_reconstruct,
    "verify": _cmd_verify,
    "info": _cmd_info,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stiflow",
        description="template and motion recovery from projection data",
    )
    sub = parser.add_subparsers(dest="verb", required=True)
    specs = (
        ("phantom", "write the configured scene to disk"),
        ("simulate", "write simulated sinograms for the scene"),
        ("reconstruct", "run the full reconstruction pipeline"),
        ("verify", "run property batteries and report pass/fail"),
        ("info", "show version, defaults, and the config schema"),
    )
    for name, help_text in specs:
        p = sub.add_parser(name, help=help_text)
        if name != "verify":
            p.add_argument("--config", metavar="PATH", help="experiment JSON file")
            p.add_argument(
                "--seed", type=int, metavar="N", help="override the config seed"
            )
        if name == "verify":
            p.add_argument(
                "--suite",
                default="all",
                metavar="NAME",
                help="flow, transport, mollifier, radon, gradients, or all",
            )
        if name != "info":
            p.add_argument(
                "--out", metavar="DIR", help="override the output directory"
            )
    return parser


def _emit_error(args, exc: Exception) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    line = json.dumps(payload, sort_keys=True)
    print(line, file=sys.stderr)
    out = getattr(args, "resolved_out", None) or getattr(args, "out", None)
    if out is not None:
        try:
            target = Path(out)
            target.mkdir(parents=True, exist_ok=True)
            (target / "error.json").write_text(line + "\n")
        except OSError:
            pass  # the stderr line already carries the report


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        _apply_thread_cap()
        return _HANDLERS[args.verb](args)
    except (ConfigError, UnknownSuite) as exc:
        _emit_error(args, exc)
        return 2
    except StiflowError as exc:
        _emit_error(args, exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())
