"""Target shape completion (non-neural baselines) and completion metrics.

Completers share one contract: partial target cloud in, completed cloud out,
deterministic. `OracleCompleter` resamples the true target mesh and is the
upper bound; `MirrorCompleter` reflects the observation through an estimated
vertical symmetry plane; `PassthroughCompleter` returns the input.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .camera import CameraModel
from .errors import InputError
from .geometry import PointCloud
from .meshes import surface_sample
from .scenes import Scene

log = logging.getLogger(__name__)

DEFAULT_COMPLETION_POINTS = 2048


class PassthroughCompleter:
    """No completion: the partial cloud is the completed cloud."""

    name = "none"

    def __call__(self, partial: PointCloud, scene: Scene | None = None,
                 camera: CameraModel | None = None) -> PointCloud:
        return partial


class OracleCompleter:
    """Ground-truth completion: surface samples of the true target mesh."""

    name = "oracle"

    def __init__(self, count: int = DEFAULT_COMPLETION_POINTS):
        self.count = count

    def __call__(self, partial: PointCloud, scene: Scene,
                 camera: CameraModel | None = None) -> PointCloud:
        target = scene.target
        samples = surface_sample(target.mesh, self.count, seed=scene.seed ^ 0xC0FFEE)
        return samples.transformed(target.pose)


class MirrorCompleter:
    """Reflect observed points through an estimated vertical symmetry plane.

    The plane passes through the partial cloud's centroid; its normal is the
    horizontal component of the camera view direction. Reflected points that
    duplicate existing ones are dropped, so an already symmetric-complete
    cloud passes through unchanged.
    """

    name = "mirror"

    def __init__(self, dedupe_radius: float = 1e-3):
        self.dedupe_radius = dedupe_radius

    def __call__(self, partial: PointCloud, scene: Scene | None = None,
                 camera: CameraModel | None = None,
                 table_normal=(0.0, 0.0, 1.0)) -> PointCloud:
        if len(partial) == 0:
            raise InputError("mirror completion needs a non-empty partial cloud")
        if len(partial) < 4:
            log.warning("mirror completion: fewer than 4 points, passing through")
            return partial
        if camera is None:
            raise InputError("mirror completion needs the camera model")
        up = np.asarray(table_normal, dtype=float)
        up = up / np.linalg.norm(up)
        centroid = partial.points.mean(axis=0)
        view = centroid - camera.pose.translation
        horiz = view - (view @ up) * up
        n = np.linalg.norm(horiz)
        if n < 1e-9:
            log.warning("mirror completion: top-down view has no horizontal axis, passing through")
            return partial
        normal = horiz / n
        offsets = (partial.points - centroid) @ normal
        reflected = partial.points - 2.0 * offsets[:, None] * normal
        keep = cKDTree(partial.points).query(reflected, k=1)[0] > self.dedupe_radius
        if not keep.any():
            return partial
        pts = np.vstack([partial.points, reflected[keep]])
        normals = None
        if partial.normals is not None:
            refl_n = partial.normals - 2.0 * (partial.normals @ normal)[:, None] * normal
            normals = np.vstack([partial.normals, refl_n[keep]])
        return PointCloud(pts, normals)


COMPLETERS = {
    "oracle": OracleCompleter,
    "mirror": MirrorCompleter,
    "none": PassthroughCompleter,
}


def make_completer(name: str):
    if name not in COMPLETERS:
        raise InputError(f"unknown completer {name!r}; choose from {sorted(COMPLETERS)}")
    return COMPLETERS[name]()


# ---------------------------------------------------------------------------
# metrics


def chamfer_l1(a: PointCloud, b: PointCloud) -> float:
    """Symmetric mean nearest-neighbor distance: 0.5 * (mean_a NN_b + mean_b NN_a)."""
    if len(a) == 0 or len(b) == 0:
        raise InputError("chamfer distance is undefined for empty clouds")
    d_ab = cKDTree(b.points).query(a.points, k=1)[0]
    d_ba = cKDTree(a.points).query(b.points, k=1)[0]
    return 0.5 * (float(d_ab.mean()) + float(d_ba.mean()))


def volumetric_iou(a: PointCloud, b: PointCloud, voxel_size: float = 0.0075) -> float:
    """Occupancy IoU on a shared voxel grid anchored at the workspace origin."""
    if voxel_size <= 0:
        raise InputError("voxel_size must be positive")
    if len(a) == 0 and len(b) == 0:
        raise InputError("IoU is undefined when both clouds are empty")
    occ_a = {tuple(v) for v in np.floor(a.points / voxel_size).astype(np.int64)}
    occ_b = {tuple(v) for v in np.floor(b.points / voxel_size).astype(np.int64)}
    union = occ_a | occ_b
    if not union:
        raise InputError("IoU is undefined when both clouds are empty")
    return len(occ_a & occ_b) / len(union)


def completion_ground_truth(scene: Scene, count: int = DEFAULT_COMPLETION_POINTS) -> PointCloud:
    """Complete cloud sampled from the target mesh at its scene pose."""
    target = scene.target
    return surface_sample(target.mesh, count, seed=scene.seed ^ 0x6E0C).transformed(target.pose)


def write_completion_csv(path, rows: list[dict]) -> None:
    """Rows: scene_id, target, completer, cd_l1_x1000, iou_pct, occlusion_level."""
    fields = ["scene_id", "target", "completer", "cd_l1_x1000", "iou_pct", "occlusion_level"]
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
