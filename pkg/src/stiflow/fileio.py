"""File formats for every artifact the pipeline emits.

Numeric ground truth is raw little-endian float32 next to a JSON
descriptor; PNG renderings are 8-bit previews whose normalization is
recorded in a sidecar so they are never mistaken for data.  All JSON is
written with sorted keys and no timestamps, which makes byte-identical
reruns possible.

Layout conventions:
 - ScalarField: ``<stem>.f32`` row-major (y outer, x inner), sidecar
   ``<stem>.json`` holding {nx, ny, x_min, x_max, y_min, y_max}.
 - VelocityField: ``<stem>.json`` header (kernel spec + time grid) and
   coefficient block ``<stem>.f32`` of shape (num_steps, controls, 2).
 - FlowMap: ``<stem>.f32`` holding the x-positions plane then the
   y-positions plane, descriptor ``<stem>.json``.
 - Sinogram: ``<stem>.f32`` angle-major, sidecar {angles, n_det,
   det_spacing, obs_index}.
 - TrajectorySolution: one ScalarField pair per frame plus
   ``<stem>_manifest.json`` listing times, files, the source tag, and a
   content hash.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
import zlib
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ShapeMismatch
from .flows import FlowMap
from .grids import ImageGrid, ScalarField, TimeGrid
from .objective import LOG_COLUMNS
from .radon import AngleSchedule, Sinogram
from .transport import TrajectorySolution
from .velocity import KernelSpec, VelocityField


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _read_json(path: Path) -> dict:
    return json.loads(Path(path).read_text())


def _grid_meta(grid: ImageGrid) -> dict:
    return {
        "nx": grid.nx,
        "ny": grid.ny,
        "x_min": grid.x_min,
        "x_max": grid.x_max,
        "y_min": grid.y_min,
        "y_max": grid.y_max,
    }


def _grid_from_meta(meta: dict) -> ImageGrid:
    return ImageGrid(
        meta["nx"],
        meta["ny"],
        x_min=meta["x_min"],
        x_max=meta["x_max"],
        y_min=meta["y_min"],
        y_max=meta["y_max"],
    )


def save_scalar_field(field: ScalarField, stem) -> Path:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    raw = stem.with_suffix(".f32")
    raw.write_bytes(field.values.astype("<f4").tobytes(order="C"))
    _write_json(stem.with_suffix(".json"), _grid_meta(field.grid))
    return raw


def load_scalar_field(stem) -> ScalarField:
    stem = Path(stem)
    meta = _read_json(stem.with_suffix(".json"))
    grid = _grid_from_meta(meta)
    data = np.frombuffer(stem.with_suffix(".f32").read_bytes(), dtype="<f4")
    if data.size != grid.nx * grid.ny:
        raise ShapeMismatch(
            f"{data.size} samples for a {grid.ny}x{grid.nx} grid"
        )
    return ScalarField(grid, data.astype(float).reshape(grid.ny, grid.nx))


def save_velocity_field(v: VelocityField, stem) -> Path:
    stem = Path(stem)
    header = {
        "image_grid": _grid_meta(v.spec.image_grid),
        "control_grid": _grid_meta(v.spec.control_grid),
        "sigma": v.spec.sigma,
        "edge_margin": v.spec.edge_margin,
        "num_steps": v.time_grid.num_steps,
        "obs_indices": list(v.time_grid.obs_indices),
        "coefficients": stem.with_suffix(".f32").name,
    }
    _write_json(stem.with_suffix(".json"), header)
    stem.with_suffix(".f32").write_bytes(v.alpha.astype("<f4").tobytes(order="C"))
    return stem.with_suffix(".json")


def load_velocity_field(stem) -> VelocityField:
    stem = Path(stem)
    h = _read_json(stem.with_suffix(".json"))
    spec = KernelSpec(
        image_grid=_grid_from_meta(h["image_grid"]),
        control_grid=_grid_from_meta(h["control_grid"]),
        sigma=h["sigma"],
        edge_margin=h["edge_margin"],
    )
    tg = TimeGrid(h["num_steps"], obs_indices=tuple(h["obs_indices"]))
    raw = np.frombuffer(
        (stem.parent / h["coefficients"]).read_bytes(), dtype="<f4"
    )
    want = (tg.num_steps, spec.num_controls, 2)
    if raw.size != int(np.prod(want)):
        raise ShapeMismatch(f"{raw.size} coefficients, expected {want}")
    return VelocityField(spec, tg, raw.astype(float).reshape(want))


def save_flow_map(fm: FlowMap, stem) -> Path:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    planes = np.concatenate(
        [fm.positions[..., 0].ravel(), fm.positions[..., 1].ravel()]
    )
    stem.with_suffix(".f32").write_bytes(planes.astype("<f4").tobytes())
    meta = _grid_meta(fm.grid)
    meta.update({"s": fm.s, "t": fm.t, "planes": ["x", "y"]})
    _write_json(stem.with_suffix(".json"), meta)
    return stem.with_suffix(".f32")


def load_flow_map(stem) -> FlowMap:
    stem = Path(stem)
    meta = _read_json(stem.with_suffix(".json"))
    grid = _grid_from_meta(meta)
    raw = np.frombuffer(stem.with_suffix(".f32").read_bytes(), dtype="<f4")
    n = grid.nx * grid.ny
    if raw.size != 2 * n:
        raise ShapeMismatch(f"{raw.size} samples for two {grid.shape} planes")
    pos = np.empty(grid.shape + (2,))
    pos[..., 0] = raw[:n].astype(float).reshape(grid.shape)
    pos[..., 1] = raw[n:].astype(float).reshape(grid.shape)
    return FlowMap(grid=grid, positions=pos, s=meta["s"], t=meta["t"])


def save_sinogram(g: Sinogram, stem) -> Path:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    stem.with_suffix(".f32").write_bytes(g.values.astype("<f4").tobytes(order="C"))
    sidecar = {
        "angles": list(g.schedule.angles_for(g.obs_index)),
        "n_det": g.schedule.n_det,
        "det_spacing": g.schedule.det_spacing,
        "obs_index": g.obs_index,
    }
    _write_json(stem.with_suffix(".json"), sidecar)
    return stem.with_suffix(".f32")


def load_sinogram(stem, schedule: AngleSchedule | None = None) -> Sinogram:
    """Rebuild a sinogram; pass ``schedule`` to attach it to a known one.

    Without a schedule the loader constructs a minimal one whose other
    observation slots are empty.
    """
    stem = Path(stem)
    side = _read_json(stem.with_suffix(".json"))
    values = np.frombuffer(stem.with_suffix(".f32").read_bytes(), dtype="<f4")
    shape = (len(side["angles"]), side["n_det"])
    values = values.astype(float).reshape(shape)
    i = side["obs_index"]
    if schedule is None:
        rows = [()] * i + [tuple(side["angles"])]
        schedule = AngleSchedule(
            angles=tuple(rows),
            n_det=side["n_det"],
            det_spacing=side["det_spacing"],
        )
    else:
        if (
            tuple(side["angles"]) != schedule.angles_for(i)
            or side["n_det"] != schedule.n_det
            or side["det_spacing"] != schedule.det_spacing
        ):
            raise ShapeMismatch("sinogram sidecar disagrees with the schedule")
    return Sinogram(schedule, i, values)


def save_trajectory(sol: TrajectorySolution, directory, stem: str = "frame") -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    sha = hashlib.sha256()
    for idx, t in enumerate(sol.times):
        name = f"{stem}_{idx:03d}"
        save_scalar_field(sol.frames[idx], directory / name)
        files.append(name)
        sha.update(sol.frames[idx].values.astype("<f4").tobytes())
    manifest = {
        "times": list(sol.times),
        "files": files,
        "num_steps": sol.time_grid.num_steps,
        "obs_indices": list(sol.time_grid.obs_indices),
        "source": sol.source,
        "content_sha256": sha.hexdigest(),
    }
    path = directory / f"{stem}_manifest.json"
    _write_json(path, manifest)
    return path


def load_trajectory(manifest_path) -> TrajectorySolution:
    manifest_path = Path(manifest_path)
    m = _read_json(manifest_path)
    frames = tuple(
        load_scalar_field(manifest_path.parent / name) for name in m["files"]
    )
    sha = hashlib.sha256()
    for f in frames:
        sha.update(f.values.astype("<f4").tobytes())
    if sha.hexdigest() != m["content_sha256"]:
        raise ShapeMismatch("trajectory content hash mismatch")
    tg = TimeGrid(m["num_steps"], obs_indices=tuple(m["obs_indices"]))
    return TrajectorySolution(
        time_grid=tg,
        times=tuple(m["times"]),
        frames=frames,
        source=m["source"],
    )


def write_iteration_log(log: Sequence, path) -> Path:
    """CSV with the fixed optimizer column set, full float precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for row in log:
            writer.writerow(
                [
                    getattr(row, col) if isinstance(getattr(row, col), (int, str))
                    else repr(getattr(row, col))
                    for col in LOG_COLUMNS
                ]
            )
    return path


def read_iteration_log(path) -> list:
    with Path(path).open() as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != LOG_COLUMNS:
            raise ShapeMismatch(f"unexpected log columns {header}")
        rows = []
        for raw in reader:
            rec = dict(zip(header, raw))
            for col in header:
                if col == "status":
                    continue
                rec[col] = int(rec[col]) if col == "iter" else float(rec[col])
            rows.append(rec)
    return rows


def write_metrics(metrics: dict, path) -> Path:
    path = Path(path)
    _write_json(path, metrics)
    return path


def _png_chunk(tag: bytes, payload: bytes) -> bytes:
    body = tag + payload
    return struct.pack(">I", len(payload)) + body + struct.pack(
        ">I", zlib.crc32(body) & 0xFFFFFFFF
    )


def write_png(field: ScalarField, stem) -> Path:
    """8-bit grayscale preview, min-max normalized, top row = y_max.

    The normalization interval goes into ``<stem>.png.json`` so the
    preview can be mapped back to physical values.
    """
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    values = field.values
    lo, hi = float(values.min()), float(values.max())
    span = hi - lo if hi > lo else 1.0
    img = np.round(255.0 * (values - lo) / span).astype(np.uint8)
    img = img[::-1, :]  # y axis points up in the field, down in the image

    h, w = img.shape
    raw = b"".join(b"\x00" + img[r].tobytes() for r in range(h))
    png = b"\x89PNG\r\n\x1a\n"
    png += _png_chunk(
        b"IHDR", struct.pack(">IIBBBBB", w, h, 8, 0, 0, 0, 0)
    )
    png += _png_chunk(b"IDAT", zlib.compress(raw, 9))
    png += _png_chunk(b"IEND", b"")
    path = stem.with_suffix(".png")
    path.write_bytes(png)
    _write_json(
        Path(str(path) + ".json"), {"v_min": lo, "v_max": hi, "orientation": "y_up"}
    )
    return path
