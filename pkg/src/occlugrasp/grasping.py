"""Parallel-jaw grasp oracle: candidate sampling, collision checks, and
quasi-static success labels in single and cluttered contexts.

The oracle replaces dynamic physics with a deterministic model: a grasp
succeeds iff the swept gripper volume is collision free, the width is within
the gripper limit, and both extremal contacts inside the finger-pad slab have
surface normals within the friction cone of the closing axis. Because the
contact and width terms depend only on the target and the table, a grasp that
succeeds amid occluders also succeeds with them removed, so cluttered
successes are a subset of single-scene successes by construction.

Grasp frame: x is the closing axis joining the antipodal pair, z is the
approach (travel) direction, y completes the right-handed frame. The grasp
center is the tool center point between the fingertips; fingers extend
backward along -z.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import InputError
from .geometry import PointCloud, Pose, Quaternion, orthonormal_tangents
from .meshes import TriMesh, surface_sample
from .scenes import Scene, derive_single_scene

DEFAULT_FRICTION = 0.4


class FailureReason(str, Enum):
    NONE = "none"
    TABLE_BLOCK = "table_block"
    WIDTH_EXCEEDED = "width_exceeded"
    OCCLUDER_COLLISION = "occluder_collision"
    ANTIPODAL_FAIL = "antipodal_fail"


@dataclass(frozen=True)
class GripperModel:
    max_width: float = 0.08
    finger_depth: float = 0.05
    finger_thickness: float = 0.01
    palm_clearance: float = 0.005

    def __post_init__(self):
        if min(self.max_width, self.finger_depth, self.finger_thickness, self.palm_clearance) <= 0:
            raise InputError("all gripper dimensions must be positive")


@dataclass(frozen=True)
class Grasp:
    center: np.ndarray
    rotation: Quaternion
    width: float
    quality: float = 0.0

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(3)
        c.flags.writeable = False
        object.__setattr__(self, "center", c)
        if self.width < 0:
            raise InputError("grasp width must be >= 0")
        if not 0.0 <= self.quality <= 1.0:
            raise InputError("grasp quality must be in [0, 1]")

    @property
    def axis(self) -> np.ndarray:
        return self.rotation.rotate(np.array([1.0, 0.0, 0.0]))

    @property
    def approach(self) -> np.ndarray:
        return self.rotation.rotate(np.array([0.0, 0.0, 1.0]))


@dataclass(frozen=True)
class GraspLabel:
    grasp: Grasp
    success_single: bool
    success_cluttered: bool
    failure_reason: FailureReason

    def __post_init__(self):
        if self.success_cluttered and not self.success_single:
            raise InputError("cluttered success without single success violates the subset invariant")


@dataclass(frozen=True)
class SimResult:
    success: bool
    reason: FailureReason


@dataclass(frozen=True)
class CollisionResult:
    free: bool
    offender: int | str | None  # instance index or "table"


def grasp_frame(axis, approach) -> Quaternion:
    """Rotation whose x is the closing axis and z the approach direction."""
    x = np.asarray(axis, dtype=float)
    z = np.asarray(approach, dtype=float)
    x = x / np.linalg.norm(x)
    z = z - (z @ x) * x
    n = np.linalg.norm(z)
    if n < 1e-9:
        raise InputError("approach direction parallel to the grasp axis")
    z /= n
    y = np.cross(z, x)
    return Quaternion.from_matrix(np.column_stack([x, y, z]))


# ---------------------------------------------------------------------------
# gripper volume


def gripper_boxes(width: float, gripper: GripperModel, sweep: float | None = None) -> np.ndarray:
    """(3, 2, 3) [lo, hi] corners of finger/finger/palm boxes in the grasp frame.

    Boxes are extended backward along -z by the pre-grasp standoff so the
    approach sweep is part of the tested volume.
    """
    ft = gripper.finger_thickness
    fd = gripper.finger_depth
    sweep = fd if sweep is None else sweep
    hw = width / 2.0
    return np.array(
        [
            [[hw, -ft / 2, -fd - sweep], [hw + ft, ft / 2, 0.0]],
            [[-hw - ft, -ft / 2, -fd - sweep], [-hw, ft / 2, 0.0]],
            [[-hw - ft, -ft / 2, -fd - ft - sweep], [hw + ft, ft / 2, -fd - sweep]],
        ]
    )


_BOX_CORNERS = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)])


def _box_world_corners(box: np.ndarray, grasp: Grasp) -> np.ndarray:
    local = box[0] + _BOX_CORNERS * (box[1] - box[0])
    return grasp.rotation.rotate(local) + grasp.center


def _tri_aabb_overlap(v0, v1, v2, half: np.ndarray) -> np.ndarray:
    """Vectorized triangle vs origin-centered AABB separating-axis test."""
    sep = np.zeros(len(v0), dtype=bool)
    # box face axes
    for k in range(3):
        lo = np.minimum(np.minimum(v0[:, k], v1[:, k]), v2[:, k])
        hi = np.maximum(np.maximum(v0[:, k], v1[:, k]), v2[:, k])
        sep |= (lo > half[k]) | (hi < -half[k])
    # triangle plane
    n = np.cross(v1 - v0, v2 - v0)
    d = np.einsum("ij,ij->i", n, v0)
    r = np.abs(n) @ half
    sep |= np.abs(d) > r
    # nine edge cross-product axes
    edges = (v1 - v0, v2 - v1, v0 - v2)
    for e in edges:
        for k in range(3):
            a = np.zeros_like(e)
            # u_k x e
            a[:, (k + 1) % 3] = -e[:, (k + 2) % 3]
            a[:, (k + 2) % 3] = e[:, (k + 1) % 3]
            p0 = np.einsum("ij,ij->i", a, v0)
            p1 = np.einsum("ij,ij->i", a, v1)
            p2 = np.einsum("ij,ij->i", a, v2)
            lo = np.minimum(np.minimum(p0, p1), p2)
            hi = np.maximum(np.maximum(p0, p1), p2)
            r = np.abs(a) @ half
            sep |= (lo > r) | (hi < -r)
    return ~sep


def _box_intersects_mesh(box: np.ndarray, grasp: Grasp, mesh: TriMesh, pose: Pose) -> bool:
    center_local = (box[0] + box[1]) / 2.0
    half = (box[1] - box[0]) / 2.0
    # mesh triangles into the grasp frame, box centered at the origin
    to_grasp = Pose(grasp.rotation, grasp.center).inverse() * pose
    verts = to_grasp.transform(mesh.vertices) - center_local
    lo = verts.min(axis=0)
    hi = verts.max(axis=0)
    if (lo > half).any() or (hi < -half).any():
        return False
    tris = mesh.triangles
    tv0, tv1, tv2 = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    return bool(_tri_aabb_overlap(tv0, tv1, tv2, half).any())


def _collision_offenders(grasp: Grasp, scene: Scene, gripper: GripperModel) -> list[int | str]:
    boxes = gripper_boxes(grasp.width, gripper)
    offenders: list[int | str] = []
    if min(_box_world_corners(b, grasp)[:, 2].min() for b in boxes) < -1e-9:
        offenders.append("table")
    for idx, inst in enumerate(scene.instances):
        if any(_box_intersects_mesh(b, grasp, inst.mesh, inst.pose) for b in boxes):
            offenders.append(idx)
    return offenders


def check_collision(grasp: Grasp, scene: Scene, gripper: GripperModel) -> CollisionResult:
    """Swept gripper volume vs the table half-space and all scene meshes."""
    offenders = _collision_offenders(grasp, scene, gripper)
    if not offenders:
        return CollisionResult(True, None)
    return CollisionResult(False, offenders[0])


# ---------------------------------------------------------------------------
# contacts and the friction cone


def _pad_slab_contacts(points_g: np.ndarray, normals_g: np.ndarray, width: float,
                       gripper: GripperModel, mu: float,
                       contact_band: float = 0.0015) -> tuple[bool, str]:
    """Extremal contacts along the closing axis inside the finger-pad slab.

    Returns (ok, why). Both extremal contact regions must carry a normal
    inside the friction cone of the closing axis, and the contacted interval
    must fit within the jaws.
    """
    ft = gripper.finger_thickness
    fd = gripper.finger_depth
    in_slab = (np.abs(points_g[:, 1]) <= ft / 2) & (points_g[:, 2] >= -fd) & (points_g[:, 2] <= 0.0)
    if not in_slab.any():
        return False, "no contact in the pad slab"
    xs = points_g[in_slab, 0]
    ns = normals_g[in_slab]
    a, b = float(xs.min()), float(xs.max())
    if a < -width / 2 - 1e-9 or b > width / 2 + 1e-9:
        return False, "object does not fit within the jaws"
    cos_cone = math.cos(math.atan(mu))
    low_band = xs <= a + contact_band
    high_band = xs >= b - contact_band
    if np.max(-ns[low_band, 0]) < cos_cone:
        return False, "low-side contact outside the friction cone"
    if np.max(ns[high_band, 0]) < cos_cone:
        return False, "high-side contact outside the friction cone"
    return True, ""


def simulate_grasp(grasp: Grasp, scene: Scene, gripper: GripperModel,
                   friction_mu: float = DEFAULT_FRICTION) -> SimResult:
    """Quasi-static grasp oracle: width limit, collisions, antipodal cone."""
    if grasp.width > gripper.max_width + 1e-12:
        return SimResult(False, FailureReason.WIDTH_EXCEEDED)
    offenders = _collision_offenders(grasp, scene, gripper)
    if "table" in offenders:
        return SimResult(False, FailureReason.TABLE_BLOCK)
    occluders = [o for o in offenders if o != scene.target_index]
    if occluders:
        return SimResult(False, FailureReason.OCCLUDER_COLLISION)
    if offenders:  # only the target itself: gripper body crashes into it
        return SimResult(False, FailureReason.ANTIPODAL_FAIL)
    target = scene.target
    samples = target.mesh.contact_samples
    to_grasp = Pose(grasp.rotation, grasp.center).inverse() * target.pose
    pts_g = to_grasp.transform(samples.points)
    nrm_g = to_grasp.rotate_only(samples.normals)
    ok, _ = _pad_slab_contacts(pts_g, nrm_g, grasp.width, gripper, friction_mu)
    if not ok:
        return SimResult(False, FailureReason.ANTIPODAL_FAIL)
    return SimResult(True, FailureReason.NONE)


# ---------------------------------------------------------------------------
# candidate sampling


def sample_candidate_grasps(
    target_cloud: PointCloud,
    gripper: GripperModel,
    count: int,
    seed: int,
    approaches_per_pair: int = 12,
    pair_tolerance: float = 0.004,
) -> list[Grasp]:
    """Antipodal candidates: surface point, inward-normal ray, opposing point.

    Candidates whose pair distance exceeds the gripper opening are emitted
    anyway (width > max_width) so downstream labeling can flag them.
    """
    if len(target_cloud) == 0 or target_cloud.normals is None:
        raise InputError("candidate sampling needs a non-empty cloud with normals")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    pts = target_cloud.points
    nrm = target_cloud.normals
    out: list[Grasp] = []
    attempts = 0
    max_attempts = 50 * count
    while len(out) < count and attempts < max_attempts:
        attempts += 1
        i = int(rng.integers(len(pts)))
        p1 = pts[i]
        d = -nrm[i]  # inward
        rel = pts - p1
        s = rel @ d
        perp = np.linalg.norm(rel - s[:, None] * d, axis=1)
        opposing = (s > 1e-3) & (perp < pair_tolerance) & (nrm @ d > 0.3)
        if not opposing.any():
            continue
        j = int(np.nonzero(opposing)[0][np.argmax(s[opposing])])
        pair_dist = float(s[j])
        width = pair_dist + gripper.palm_clearance
        center = p1 + 0.5 * pair_dist * d
        u, v = orthonormal_tangents(d)
        for k in range(approaches_per_pair):
            theta = 2.0 * math.pi * k / approaches_per_pair
            approach = math.cos(theta) * u + math.sin(theta) * v
            out.append(Grasp(center, grasp_frame(d, approach), width))
            if len(out) >= count:
                break
    return out


# ---------------------------------------------------------------------------
# paired labeling


def label_pair(cluttered: Scene, gripper: GripperModel, count: int, seed: int,
               friction_mu: float = DEFAULT_FRICTION) -> list[GraspLabel]:
    """Label candidates in both the derived single scene and the cluttered scene."""
    target = cluttered.target
    cloud = surface_sample(target.mesh, 1024, seed=seed ^ 0x9E3779B9).transformed(target.pose)
    candidates = sample_candidate_grasps(cloud, gripper, count, seed)
    single = derive_single_scene(cluttered, cluttered.target_index)
    labels = []
    for g in candidates:
        sim_s = simulate_grasp(g, single, gripper, friction_mu)
        sim_c = simulate_grasp(g, cluttered, gripper, friction_mu)
        labels.append(GraspLabel(g, sim_s.success, sim_c.success, sim_c.reason))
    return labels


def taxonomy_counts(labels: list[GraspLabel]) -> dict[str, int]:
    """Three-way grasp taxonomy over single/cluttered outcomes."""
    counts = {"fail_fail": 0, "succeed_fail": 0, "succeed_succeed": 0}
    for lab in labels:
        if lab.success_cluttered:
            counts["succeed_succeed"] += 1
        elif lab.success_single:
            counts["succeed_fail"] += 1
        else:
            counts["fail_fail"] += 1
    return counts


# ---------------------------------------------------------------------------
# JSONL serialization


def label_to_record(scene_id: str, target_index: int, label: GraspLabel) -> dict:
    q = label.grasp.rotation.canonical()
    return {
        "scene_id": scene_id,
        "target_index": target_index,
        "t": [float(x) for x in label.grasp.center],
        "r": [q.w, q.x, q.y, q.z],
        "w": label.grasp.width,
        "success_single": label.success_single,
        "success_cluttered": label.success_cluttered,
        "reason": label.failure_reason.value,
    }


def write_labels_jsonl(path, scene_id: str, target_index: int, labels: list[GraspLabel]) -> None:
    with Path(path).open("w") as fh:
        for lab in labels:
            fh.write(json.dumps(label_to_record(scene_id, target_index, lab), sort_keys=True) + "\n")


def read_labels_jsonl(path) -> list[dict]:
    with Path(path).open() as fh:
        return [json.loads(line) for line in fh if line.strip()]


def record_to_label(rec: dict) -> GraspLabel:
    grasp = Grasp(np.array(rec["t"]), Quaternion.from_array(rec["r"]), rec["w"])
    return GraspLabel(grasp, rec["success_single"], rec["success_cluttered"], FailureReason(rec["reason"]))
