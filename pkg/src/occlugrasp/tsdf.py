"""Truncated signed distance grids over the workspace cube.

`fuse` integrates a single depth frame: per voxel, signed distance along the
camera ray (measured depth minus voxel depth), clamped to the truncation
band and normalized to [-1, 1]. Positive values are observed free space in
front of the surface; voxels hidden deeper than one truncation behind a
surface, or outside the frustum, carry weight 0.

`splat` builds a target grid from a completed point cloud: a truncated,
normalized unsigned distance field, observed only within a fixed kernel
radius of the points.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .camera import DepthFrame
from .errors import InputError
from .geometry import PointCloud


@dataclass(frozen=True)
class TsdfConfig:
    resolution: int = 40
    extent: float = 0.3
    truncation: float | None = None  # meters; default 4 voxel widths

    def __post_init__(self):
        if self.resolution <= 0 or self.extent <= 0:
            raise InputError("resolution and extent must be positive")
        if self.truncation is None:
            object.__setattr__(self, "truncation", 4.0 * self.voxel_size)
        elif self.truncation <= 0:
            raise InputError("truncation must be positive")

    @property
    def voxel_size(self) -> float:
        return self.extent / self.resolution

    def voxel_centers(self) -> np.ndarray:
        """(res^3, 3) world coordinates in C order (x-major first axis)."""
        r = self.resolution
        axis = (np.arange(r) + 0.5) * self.voxel_size
        gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)


@dataclass(frozen=True)
class TsdfGrid:
    values: np.ndarray   # (r, r, r) float32 in [-1, 1]
    weights: np.ndarray  # (r, r, r) float32 >= 0, 0 exactly where unobserved
    config: TsdfConfig

    def __post_init__(self):
        object.__setattr__(self, "values", np.ascontiguousarray(self.values, dtype=np.float32))
        object.__setattr__(self, "weights", np.ascontiguousarray(self.weights, dtype=np.float32))
        self.values.flags.writeable = False
        self.weights.flags.writeable = False

    @property
    def resolution(self) -> int:
        return self.config.resolution

    @property
    def voxel_size(self) -> float:
        return self.config.voxel_size


def fuse(frame: DepthFrame, config: TsdfConfig | None = None) -> TsdfGrid:
    """Single-view TSDF of the workspace from one depth frame."""
    config = TsdfConfig() if config is None else config
    r = config.resolution
    centers = config.voxel_centers()
    cam = frame.camera
    world_to_cam = cam.pose.inverse()
    pts = world_to_cam.transform(centers)
    z = pts[:, 2]
    values = np.zeros(r**3, dtype=np.float64)
    weights = np.zeros(r**3, dtype=np.float64)
    in_front = z > 1e-9
    u = np.full(len(z), -1, dtype=np.int64)
    v = np.full(len(z), -1, dtype=np.int64)
    u[in_front] = np.floor(pts[in_front, 0] / z[in_front] * cam.fx + cam.cx).astype(np.int64)
    v[in_front] = np.floor(pts[in_front, 1] / z[in_front] * cam.fy + cam.cy).astype(np.int64)
    onscreen = in_front & (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
    uu = u[onscreen]
    vv = v[onscreen]
    measured = frame.depth[vv, uu].astype(np.float64)
    background = measured == 0.0
    sdf = measured - z[onscreen]
    norm = np.clip(sdf / config.truncation, -1.0, 1.0)
    observed = background | (sdf > -config.truncation)
    vals = np.where(background, 1.0, norm)
    values[np.nonzero(onscreen)[0]] = np.where(observed, vals, norm)
    weights[np.nonzero(onscreen)[0]] = observed.astype(np.float64)
    return TsdfGrid(values.reshape(r, r, r), weights.reshape(r, r, r), config)


def splat(cloud: PointCloud, config: TsdfConfig | None = None,
          kernel_radius_voxels: float = 1.0) -> TsdfGrid:
    """Unsigned truncated distance grid around a completed target cloud."""
    config = TsdfConfig() if config is None else config
    if len(cloud) == 0:
        raise InputError("cannot splat an empty cloud")
    r = config.resolution
    centers = config.voxel_centers()
    dist, _ = cKDTree(cloud.points).query(centers, k=1)
    values = np.minimum(dist / config.truncation, 1.0)
    weights = (dist <= kernel_radius_voxels * config.voxel_size).astype(np.float64)
    return TsdfGrid(values.reshape(r, r, r), weights.reshape(r, r, r), config)


def near_surface_mask(grid: TsdfGrid, band: float) -> np.ndarray:
    """True where 0 <= value < band and the voxel was observed."""
    if not 0.0 < band <= 1.0:
        raise InputError(f"band must be in (0, 1], got {band}")
    return (grid.values >= 0.0) & (grid.values < band) & (grid.weights > 0.0)


def save_grid(dir_path, stem: str, grid: TsdfGrid) -> list[Path]:
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    val_path = dir_path / f"{stem}.tsdf.raw"
    wgt_path = dir_path / f"{stem}.weights.raw"
    meta_path = dir_path / f"{stem}.tsdf.json"
    val_path.write_bytes(grid.values.astype("<f4").tobytes())
    wgt_path.write_bytes(grid.weights.astype("<f4").tobytes())
    meta_path.write_text(
        json.dumps(
            {
                "resolution": grid.config.resolution,
                "extent": grid.config.extent,
                "truncation": grid.config.truncation,
                "dtype": "<f4",
            },
            sort_keys=True,
            indent=1,
        )
    )
    return [val_path, wgt_path, meta_path]


def load_grid(dir_path, stem: str) -> TsdfGrid:
    dir_path = Path(dir_path)
    meta = json.loads((dir_path / f"{stem}.tsdf.json").read_text())
    r = meta["resolution"]
    cfg = TsdfConfig(r, meta["extent"], meta["truncation"])
    values = np.frombuffer((dir_path / f"{stem}.tsdf.raw").read_bytes(), dtype="<f4").reshape(r, r, r)
    weights = np.frombuffer((dir_path / f"{stem}.weights.raw").read_bytes(), dtype="<f4").reshape(r, r, r)
    return TsdfGrid(values, weights, cfg)
