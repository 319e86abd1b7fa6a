"""Pinhole depth camera: rendering, sensor noise, back-projection, persistence.

Rendering is organized triangle-major for speed, but each covered pixel is
resolved by an exact ray/triangle-plane intersection through the pixel
center, so the result is identical to per-pixel ray casting (nearest hit
wins via the z-buffer). Depth is the camera-frame z coordinate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import InputError
from .geometry import PointCloud, Pose, Quaternion
from .scenes import Scene

BACKGROUND_ID = 65535


@dataclass(frozen=True)
class CameraModel:
    width: int = 640
    height: int = 480
    fx: float = 540.0
    fy: float = 540.0
    cx: float = 320.0
    cy: float = 240.0
    pose: Pose = None  # camera-to-world

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InputError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InputError("principal point must lie inside the image")
        if self.pose is None:
            object.__setattr__(self, "pose", Pose.identity())

    def intrinsics_equal(self, other: "CameraModel") -> bool:
        return (
            self.width == other.width
            and self.height == other.height
            and (self.fx, self.fy, self.cx, self.cy) == (other.fx, other.fy, other.cx, other.cy)
        )

    def same_view(self, other: "CameraModel") -> bool:
        return (
            self.intrinsics_equal(other)
            and self.pose.rotation.rotation_equal(other.pose.rotation, tol=1e-12)
            and np.allclose(self.pose.translation, other.pose.translation, atol=1e-12)
        )


def look_at_pose(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera-to-world pose: +z looks at target, +x right, +y down."""
    eye = np.asarray(eye, dtype=float)
    forward = np.asarray(target, dtype=float) - eye
    forward = forward / np.linalg.norm(forward)
    up = np.asarray(up, dtype=float)
    x = np.cross(forward, up)
    n = np.linalg.norm(x)
    if n < 1e-12:
        raise InputError("view direction parallel to up vector")
    x /= n
    y = np.cross(forward, x)
    rot = np.column_stack([x, y, forward])
    return Pose(Quaternion.from_matrix(rot), eye)


def default_camera(workspace_extent: float = 0.3, width: int = 640, height: int = 480,
                   focal: float = 540.0, elevation_deg: float = 45.0,
                   distance: float = 0.6) -> CameraModel:
    """Side-view camera at the given elevation, looking at the workspace center."""
    c = workspace_extent / 2.0
    el = np.deg2rad(elevation_deg)
    eye = np.array([c, c - distance * np.cos(el), distance * np.sin(el)])
    pose = look_at_pose(eye, (c, c, 0.05))
    return CameraModel(width, height, focal, focal, width / 2.0, height / 2.0, pose)


@dataclass(frozen=True)
class DepthFrame:
    depth: np.ndarray        # (H, W) float32 meters, 0 where no hit
    instance_id: np.ndarray  # (H, W) uint16, BACKGROUND_ID where no hit
    camera: CameraModel

    def __post_init__(self):
        object.__setattr__(self, "depth", np.ascontiguousarray(self.depth, dtype=np.float32))
        object.__setattr__(self, "instance_id", np.ascontiguousarray(self.instance_id, dtype=np.uint16))
        self.depth.flags.writeable = False
        self.instance_id.flags.writeable = False

    @property
    def valid(self) -> np.ndarray:
        return self.instance_id != BACKGROUND_ID


def render(scene: Scene, camera: CameraModel) -> DepthFrame:
    """Nearest-surface depth + owning instance id per pixel."""
    h, w = camera.height, camera.width
    zbuf = np.full((h, w), np.inf, dtype=np.float64)
    inst = np.full((h, w), BACKGROUND_ID, dtype=np.uint16)
    world_to_cam = camera.pose.inverse()
    rot = world_to_cam.rotation.as_matrix()
    trans = world_to_cam.translation
    fx, fy, cx, cy = camera.fx, camera.fy, camera.cx, camera.cy
    for index, instance in enumerate(scene.instances):
        verts_cam = instance.pose.transform(instance.mesh.vertices) @ rot.T + trans
        tris = instance.mesh.triangles
        tv = verts_cam[tris]  # (m, 3, 3)
        # skip triangles touching or behind the camera plane
        front = tv[:, :, 2].min(axis=1) > 1e-6
        if not front.any():
            continue
        tv = tv[front]
        u = tv[:, :, 0] / tv[:, :, 2] * fx + cx
        v = tv[:, :, 1] / tv[:, :, 2] * fy + cy
        u0 = np.maximum(np.ceil(u.min(axis=1) - 0.5), 0).astype(int)
        u1 = np.minimum(np.floor(u.max(axis=1) - 0.5), w - 1).astype(int)
        v0 = np.maximum(np.ceil(v.min(axis=1) - 0.5), 0).astype(int)
        v1 = np.minimum(np.floor(v.max(axis=1) - 0.5), h - 1).astype(int)
        keep = (u1 >= u0) & (v1 >= v0)
        for a, b, c, iu0, iu1, iv0, iv1 in zip(
            tv[keep, 0], tv[keep, 1], tv[keep, 2], u0[keep], u1[keep], v0[keep], v1[keep]
        ):
            px = np.arange(iu0, iu1 + 1)
            py = np.arange(iv0, iv1 + 1)
            # pixel-center rays in camera frame, z component 1 => t equals depth
            dx = (px + 0.5 - cx) / fx
            dy = (py + 0.5 - cy) / fy
            dirs = np.empty((len(py), len(px), 3))
            dirs[:, :, 0] = dx[None, :]
            dirs[:, :, 1] = dy[:, None]
            dirs[:, :, 2] = 1.0
            e1 = b - a
            e2 = c - a
            pvec = np.cross(dirs, e2)
            det = pvec @ e1
            ok = np.abs(det) > 1e-14
            inv_det = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
            s = -a  # ray origin is the camera center
            uu = (pvec @ s) * inv_det
            qvec = np.cross(s, e1)
            vv = (dirs @ qvec) * inv_det
            t = float(e2 @ qvec) * inv_det
            hit = ok & (uu >= -1e-12) & (vv >= -1e-12) & (uu + vv <= 1 + 1e-12) & (t > 1e-9)
            if not hit.any():
                continue
            sub = zbuf[iv0 : iv1 + 1, iu0 : iu1 + 1]
            better = hit & (t < sub)
            sub[better] = t[better]
            inst[iv0 : iv1 + 1, iu0 : iu1 + 1][better] = index
    depth = np.where(np.isfinite(zbuf), zbuf, 0.0).astype(np.float32)
    return DepthFrame(depth, inst, camera)


def add_depth_noise(frame: DepthFrame, sigma: float, seed: int) -> DepthFrame:
    """I.i.d. zero-mean Gaussian perturbation of non-background depths."""
    if sigma < 0:
        raise InputError("sigma must be >= 0")
    if sigma == 0:
        return DepthFrame(frame.depth.copy(), frame.instance_id.copy(), frame.camera)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    noise = rng.normal(0.0, sigma, size=frame.depth.shape).astype(np.float32)
    depth = frame.depth.copy()
    valid = frame.valid
    depth[valid] = np.maximum(depth[valid] + noise[valid], np.float32(1e-6))
    return DepthFrame(depth, frame.instance_id.copy(), frame.camera)


def _pixel_rays(camera: CameraModel, us, vs):
    dx = (us + 0.5 - camera.cx) / camera.fx
    dy = (vs + 0.5 - camera.cy) / camera.fy
    return dx, dy


def back_project(frame: DepthFrame, instance_filter: int | None = None,
                 estimate_normals: bool = True) -> PointCloud:
    """World-space point per retained pixel, with screen-space normal estimates."""
    cam = frame.camera
    if instance_filter is None:
        mask = frame.valid
    else:
        mask = frame.instance_id == instance_filter
    if not mask.any():
        return PointCloud.empty()
    h, w = frame.depth.shape
    vs_all, us_all = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    z = frame.depth.astype(np.float64)
    dx, dy = _pixel_rays(cam, us_all, vs_all)
    pts_cam = np.stack([dx * z, dy * z, z], axis=-1)

    rot = cam.pose.rotation.as_matrix()
    pts_world = pts_cam @ rot.T + cam.pose.translation
    if not estimate_normals:
        return PointCloud(pts_world[mask])

    # screen-space normals: cross of horizontal/vertical neighbor differences,
    # restricted to same-instance neighbors; fallback points at the camera
    du = np.zeros_like(pts_cam)
    dv = np.zeros_like(pts_cam)
    same_u = np.zeros((h, w), dtype=bool)
    same_v = np.zeros((h, w), dtype=bool)
    inst = frame.instance_id
    same_u[:, :-1] = (inst[:, :-1] == inst[:, 1:]) & mask[:, :-1] & mask[:, 1:]
    same_v[:-1, :] = (inst[:-1, :] == inst[1:, :]) & mask[:-1, :] & mask[1:, :]
    du[:, :-1][same_u[:, :-1]] = (pts_cam[:, 1:] - pts_cam[:, :-1])[same_u[:, :-1]]
    dv[:-1, :][same_v[:-1, :]] = (pts_cam[1:, :] - pts_cam[:-1, :])[same_v[:-1, :]]
    n_cam = np.cross(du, dv)
    lens = np.linalg.norm(n_cam, axis=-1)
    good = lens > 1e-12
    n_cam[good] /= lens[good][..., None]
    # orient toward the camera (camera sits at the origin of the cam frame)
    flip = np.einsum("hwc,hwc->hw", n_cam, pts_cam) > 0
    n_cam[flip] *= -1.0
    view = pts_cam / np.maximum(np.linalg.norm(pts_cam, axis=-1), 1e-12)[..., None]
    n_cam[~good] = -view[~good]
    n_world = n_cam @ rot.T
    n_sel = n_world[mask]
    n_sel /= np.linalg.norm(n_sel, axis=1)[:, None]
    return PointCloud(pts_world[mask], n_sel)


# ---------------------------------------------------------------------------
# persistence: raw little-endian grids + JSON sidecar


def save_frame(dir_path, stem: str, frame: DepthFrame) -> list[Path]:
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    depth_path = dir_path / f"{stem}.depth.raw"
    inst_path = dir_path / f"{stem}.inst.raw"
    meta_path = dir_path / f"{stem}.meta.json"
    depth_path.write_bytes(frame.depth.astype("<f4").tobytes())
    inst_path.write_bytes(frame.instance_id.astype("<u2").tobytes())
    cam = frame.camera
    meta = {
        "width": cam.width,
        "height": cam.height,
        "fx": cam.fx,
        "fy": cam.fy,
        "cx": cam.cx,
        "cy": cam.cy,
        "pose": cam.pose.as_7floats(),
        "background_id": BACKGROUND_ID,
        "depth_dtype": "<f4",
        "instance_dtype": "<u2",
    }
    meta_path.write_text(json.dumps(meta, sort_keys=True, indent=1))
    return [depth_path, inst_path, meta_path]


def load_frame(dir_path, stem: str) -> DepthFrame:
    dir_path = Path(dir_path)
    meta = json.loads((dir_path / f"{stem}.meta.json").read_text())
    h, w = meta["height"], meta["width"]
    depth = np.frombuffer((dir_path / f"{stem}.depth.raw").read_bytes(), dtype="<f4").reshape(h, w)
    inst = np.frombuffer((dir_path / f"{stem}.inst.raw").read_bytes(), dtype="<u2").reshape(h, w)
    cam = CameraModel(w, h, meta["fx"], meta["fy"], meta["cx"], meta["cy"], Pose.from_7floats(meta["pose"]))
    return DepthFrame(depth, inst, cam)
