"""Occlusion measurement from paired renders, level binning, scene factors.

The level is the occluded fraction of the target: 1 - visible/total, where
`total` counts the target's pixels in the paired single-scene render (the
complete target at this camera pose, self-occlusion included) and `visible`
counts its pixels in the cluttered render.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import DepthFrame
from .errors import InputError, MeasurementError
from .scenes import Scene


@dataclass(frozen=True)
class OcclusionRecord:
    level: float
    bin_index: int | None
    visible_pixels: int
    total_pixels: int


@dataclass(frozen=True)
class BinScheme:
    edges: tuple[float, ...]

    def __post_init__(self):
        e = self.edges
        if len(e) < 2 or e[0] != 0.0 or any(b <= a for a, b in zip(e, e[1:])) or e[-1] > 1.0:
            raise InputError(f"bin edges must ascend from 0 and end <= 1, got {e}")

    @property
    def n_bins(self) -> int:
        return len(self.edges) - 1

    def labels(self) -> list[str]:
        return [f"[{a:g},{b:g})" for a, b in zip(self.edges, self.edges[1:])]

    @staticmethod
    def training() -> "BinScheme":
        # ten bins, final bin [0.9, 0.95)
        return BinScheme(tuple(np.round(np.arange(0.0, 0.91, 0.1), 10)) + (0.95,))

    @staticmethod
    def test() -> "BinScheme":
        # nine bins, [0,0.1) .. [0.8,0.9)
        return BinScheme(tuple(np.round(np.arange(0.0, 0.91, 0.1), 10)))

    @staticmethod
    def real_world() -> "BinScheme":
        # Easy / Medium / Hard
        return BinScheme((0.0, 0.3, 0.6, 0.9))


def assign_bin(level: float, scheme: BinScheme) -> int | None:
    """Half-open [edge_i, edge_{i+1}) bin index; None when level >= last edge."""
    if not 0.0 <= level <= 1.0:
        raise InputError(f"occlusion level must be in [0, 1], got {level}")
    if level >= scheme.edges[-1]:
        return None
    idx = int(np.searchsorted(scheme.edges, level, side="right")) - 1
    return idx


def occlusion_level(
    single_frame: DepthFrame,
    cluttered_frame: DepthFrame,
    target_index: int,
    scheme: BinScheme | None = None,
) -> OcclusionRecord:
    """Occluded fraction of the target from paired renders at one camera pose.

    The single frame must come from the derived single scene, where the
    target is instance 0.
    """
    if not single_frame.camera.same_view(cluttered_frame.camera):
        raise InputError("paired frames must share the camera model")
    total = int((single_frame.instance_id == 0).sum())
    if total == 0:
        raise MeasurementError("target absent from the single-scene render")
    visible = int((cluttered_frame.instance_id == target_index).sum())
    # integer subtraction first: the result is the correctly rounded
    # occluded fraction (e.g. 30/100 compares equal to 0.3)
    level = (total - visible) / total
    bin_index = assign_bin(min(max(level, 0.0), 1.0), scheme) if scheme is not None else None
    return OcclusionRecord(level, bin_index, visible, total)


def scene_factors(scene: Scene) -> dict:
    """Occluder count and target size (min of footprint length/width)."""
    target = scene.target
    return {
        "occluder_count": len(scene.instances) - 1,
        "target_size": float(min(target.footprint[0], target.footprint[1])),
    }


def write_occlusion_csv(path, rows: list[dict]) -> None:
    """Rows: scene_id, target_index, level, bin, visible, total."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["scene_id", "target_index", "level", "bin", "visible", "total"])
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def read_occlusion_csv(path) -> list[dict]:
    with Path(path).open() as fh:
        out = []
        for row in csv.DictReader(fh):
            row["target_index"] = int(row["target_index"])
            row["level"] = float(row["level"])
            row["bin"] = int(row["bin"]) if row["bin"] != "" else None
            row["visible"] = int(row["visible"])
            row["total"] = int(row["total"])
            out.append(row)
        return out
