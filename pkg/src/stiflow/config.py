"""Experiment configuration: one JSON file drives a whole run.

Schema (all keys optional except ``phantom``; unknown keys anywhere are
rejected so typos cannot silently fall back to defaults):

    {
      "phantom":  "translating_disk" | "rotating_bump" | "shepp_like_static",
      "image":    {"nx": 64, "ny": 64},
      "time":     {"num_steps": 8, "obs_indices": [2, 4, 6, 8]},
      "kernel":   {"control_n": 10, "sigma": 0.25, "edge_margin": 0.05},
      "angles":   {"per_time": 10, "n_det": null, "det_spacing": null},
      "weights":  {"mu1": 1e-4, "mu2": 1e-3, "tv_delta": 1e-3},
      "optimizer": {"max_outer_iters": 60, "rel_tol": 1e-6,
                    "substeps_per_interval": 2, "f0_steps": 1, "v_steps": 1,
                    "max_backtracks": 30, "step_scale_f0": 0.2,
                    "step_scale_v": 0.2},
      "noise_sigma": 0.0,
      "seed": 0,
      "out_dir": "runs/example"
    }

``n_det``/``det_spacing`` of null mean grid-matched defaults.  The
defaults realize the desk-scale reference setup: 64x64 image, 8 time
steps, observations at steps 2/4/6/8, 10 angles per observation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .grids import ImageGrid, TimeGrid
from .objective import ModelConfig
from .phantoms import PHANTOM_IDS
from .radon import AngleSchedule, golden_angle_schedule
from .velocity import KernelSpec

_OPTIMIZER_KEYS = (
    "max_outer_iters",
    "rel_tol",
    "substeps_per_interval",
    "f0_steps",
    "v_steps",
    "max_backtracks",
    "step_scale_f0",
    "step_scale_v",
    "armijo_c",
    "backtrack_factor",
)


def _require_keys(section: dict, allowed, where: str) -> None:
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")


def _number(section: dict, key: str, default, where: str):
    value = section.get(key, default)
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigError(f"{where}.{key} must be a number")
    return value


@dataclass(frozen=True)
class ExperimentConfig:
    phantom: str
    nx: int = 64
    ny: int = 64
    num_steps: int = 8
    obs_indices: tuple = (2, 4, 6, 8)
    control_n: int = 10
    sigma: float = 0.25
    edge_margin: float = 0.05
    angles_per_time: int = 10
    n_det: int | None = None
    det_spacing: float | None = None
    mu1: float = 1e-4
    mu2: float = 1e-3
    tv_delta: float = 1e-3
    optimizer: dict = field(default_factory=dict)
    noise_sigma: float = 0.0
    seed: int = 0
    out_dir: str = "runs/out"

    def __post_init__(self) -> None:
        if self.phantom not in PHANTOM_IDS:
            raise ConfigError(
                f"phantom must be one of {PHANTOM_IDS}, got {self.phantom!r}"
            )
        if self.noise_sigma < 0.0:
            raise ConfigError("noise_sigma must be nonnegative")
        self.model_config()  # validates weights and optimizer settings

    def image_grid(self) -> ImageGrid:
        return ImageGrid(self.nx, self.ny)

    def time_grid(self) -> TimeGrid:
        return TimeGrid(self.num_steps, obs_indices=self.obs_indices)

    def kernel_spec(self) -> KernelSpec:
        return KernelSpec(
            image_grid=self.image_grid(),
            control_grid=ImageGrid(self.control_n, self.control_n),
            sigma=self.sigma,
            edge_margin=self.edge_margin,
        )

    def schedule(self) -> AngleSchedule:
        return golden_angle_schedule(
            len(self.obs_indices),
            self.image_grid(),
            n_angles=self.angles_per_time,
            n_det=self.n_det,
            det_spacing=self.det_spacing,
        )

    def model_config(self) -> ModelConfig:
        # desk-scale profile: finishes the reference reconstruction in
        # a few minutes while leaving frame errors well under the gate
        settings = {
            "max_outer_iters": 50,
            "substeps_per_interval": 2,
            "rel_tol": 1e-7,
        }
        settings.update(self.optimizer)
        return ModelConfig(
            mu1=self.mu1, mu2=self.mu2, tv_delta=self.tv_delta, **settings
        )


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    _require_keys(
        raw,
        (
            "phantom",
            "image",
            "time",
            "kernel",
            "angles",
            "weights",
            "optimizer",
            "noise_sigma",
            "seed",
            "out_dir",
        ),
        "top-level",
    )
    if "phantom" not in raw:
        raise ConfigError("config must name a phantom")

    image = raw.get("image", {})
    _require_keys(image, ("nx", "ny"), "image")
    time_sec = raw.get("time", {})
    _require_keys(time_sec, ("num_steps", "obs_indices"), "time")
    kernel = raw.get("kernel", {})
    _require_keys(kernel, ("control_n", "sigma", "edge_margin"), "kernel")
    angles = raw.get("angles", {})
    _require_keys(angles, ("per_time", "n_det", "det_spacing"), "angles")
    weights = raw.get("weights", {})
    _require_keys(weights, ("mu1", "mu2", "tv_delta"), "weights")
    optimizer = raw.get("optimizer", {})
    _require_keys(optimizer, _OPTIMIZER_KEYS, "optimizer")

    obs = time_sec.get("obs_indices", (2, 4, 6, 8))
    if not isinstance(obs, (list, tuple)) or not all(
        isinstance(k, int) for k in obs
    ):
        raise ConfigError("time.obs_indices must be a list of integers")

    nx = int(_number(image, "nx", 64, "image"))
    try:
        return ExperimentConfig(
            phantom=raw["phantom"],
            nx=nx,
            ny=int(_number(image, "ny", nx, "image")),
            num_steps=int(_number(time_sec, "num_steps", 8, "time")),
            obs_indices=tuple(obs),
            control_n=int(_number(kernel, "control_n", 10, "kernel")),
            sigma=_number(kernel, "sigma", 0.25, "kernel"),
            edge_margin=_number(kernel, "edge_margin", 0.05, "kernel"),
            angles_per_time=int(_number(angles, "per_time", 10, "angles")),
            n_det=(
                None
                if angles.get("n_det") is None
                else int(_number(angles, "n_det", None, "angles"))
            ),
            det_spacing=(
                None
                if angles.get("det_spacing") is None
                else _number(angles, "det_spacing", None, "angles")
            ),
            mu1=_number(weights, "mu1", 1e-4, "weights"),
            mu2=_number(weights, "mu2", 1e-3, "weights"),
            tv_delta=_number(weights, "tv_delta", 1e-3, "weights"),
            optimizer=dict(optimizer),
            noise_sigma=_number(raw, "noise_sigma", 0.0, "config"),
            seed=int(_number(raw, "seed", 0, "config")),
            out_dir=str(raw.get("out_dir", "runs/out")),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(raw)
