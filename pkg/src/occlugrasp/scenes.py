"""Packed tabletop scenes: procedural object catalog, collision-free placement,
and paired single-scene derivation.

Objects are placed upright in their canonical poses (yaw-only rotation) on the
table plane z=0, so removing any instance never changes another's pose. All
catalog shapes are convex extrusions (the sphere is bounded by its extruded
footprint disk), which makes footprint-polygon separation a sound
non-penetration certificate for placement.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GenerationError, InputError
from .geometry import Pose, Quaternion, quaternion_about_axis
from .meshes import TriMesh, load_ply_mesh, make_box, make_cylinder, make_hex_prism, make_sphere


# ---------------------------------------------------------------------------
# catalog


@dataclass(frozen=True)
class CatalogConfig:
    seed: int = 0
    size: int = 100
    # uniform sampling ranges for primitive dimensions, meters
    box_side: tuple[float, float] = (0.03, 0.09)
    cylinder_radius: tuple[float, float] = (0.015, 0.045)
    hex_circumradius: tuple[float, float] = (0.02, 0.05)
    sphere_radius: tuple[float, float] = (0.02, 0.035)
    height: tuple[float, float] = (0.05, 0.14)


@dataclass(frozen=True)
class CatalogObject:
    catalog_id: str
    kind: str
    mesh: TriMesh
    footprint: tuple[float, float, float]  # (length, width, height), canonical frame
    footprint_poly: np.ndarray  # convex CCW xy polygon bounding the solid


def _convex_hull_xy(points: np.ndarray) -> np.ndarray:
    """Andrew monotone chain over xy projections; returns CCW hull."""
    pts = np.unique(np.round(points[:, :2], 12), axis=0)
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    if len(pts) <= 2:
        return pts

    def cross2(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2 and cross2(out[-2], out[-1], p) <= 0:
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    return np.asarray(lower[:-1] + upper[:-1])


def _catalog_entry(kind: str, catalog_id: str, dims, mesh: TriMesh) -> CatalogObject:
    verts = mesh.vertices
    poly = _convex_hull_xy(verts)
    if kind == "sphere":
        # circumscribed polygon so the footprint bound contains the full sphere
        r = dims[0] / math.cos(math.pi / 24)
        ang = 2 * np.pi * np.arange(24) / 24
        poly = r * np.column_stack([np.cos(ang), np.sin(ang)])
    length = float(verts[:, 0].max() - verts[:, 0].min())
    width = float(verts[:, 1].max() - verts[:, 1].min())
    height = float(verts[:, 2].max())
    return CatalogObject(catalog_id, kind, mesh, (length, width, height), poly)


def build_catalog(config: CatalogConfig) -> list[CatalogObject]:
    """Deterministic procedural catalog of box/cylinder/hex-prism/sphere primitives."""
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    kinds = ["box", "cylinder", "hex", "sphere"]
    out = []
    for i in range(config.size):
        kind = kinds[i % len(kinds)]
        cid = f"{kind}_{i:03d}"
        if kind == "box":
            lx = rng.uniform(*config.box_side)
            ly = rng.uniform(*config.box_side)
            h = rng.uniform(*config.height)
            out.append(_catalog_entry(kind, cid, (lx, ly, h), make_box(lx, ly, h)))
        elif kind == "cylinder":
            r = rng.uniform(*config.cylinder_radius)
            h = rng.uniform(*config.height)
            out.append(_catalog_entry(kind, cid, (r, h), make_cylinder(r, h)))
        elif kind == "hex":
            r = rng.uniform(*config.hex_circumradius)
            h = rng.uniform(*config.height)
            out.append(_catalog_entry(kind, cid, (r, h), make_hex_prism(r, h)))
        else:
            r = rng.uniform(*config.sphere_radius)
            out.append(_catalog_entry(kind, cid, (r,), make_sphere(r)))
    return out


# ---------------------------------------------------------------------------
# scene types


@dataclass(frozen=True)
class ObjectInstance:
    catalog_id: str
    mesh: TriMesh
    pose: Pose
    footprint: tuple[float, float, float]
    footprint_poly: np.ndarray = field(repr=False, default=None)

    def world_footprint_poly(self) -> np.ndarray:
        yaw_rot = self.pose.rotation.as_matrix()[:2, :2]
        return self.footprint_poly @ yaw_rot.T + self.pose.translation[:2]


@dataclass(frozen=True)
class Scene:
    instances: tuple[ObjectInstance, ...]
    target_index: int
    workspace_extent: float
    seed: int

    def __post_init__(self):
        if not 0 <= self.target_index < len(self.instances):
            raise InputError(f"target_index {self.target_index} out of range")

    @property
    def target(self) -> ObjectInstance:
        return self.instances[self.target_index]

    def mesh_set(self) -> list[tuple[TriMesh, Pose]]:
        return [(inst.mesh, inst.pose) for inst in self.instances]


# ---------------------------------------------------------------------------
# 2D separation between convex footprint polygons


def _polygons_intersect(p: np.ndarray, q: np.ndarray) -> bool:
    """SAT over both polygons' edge normals (convex, CCW)."""
    for poly_a, poly_b in ((p, q), (q, p)):
        edges = np.roll(poly_a, -1, axis=0) - poly_a
        normals = np.column_stack([-edges[:, 1], edges[:, 0]])
        for n in normals:
            if (poly_b @ n).max() < (poly_a @ n).min():
                return False
    return True


def _segment_point_dist(a, b, pts):
    ab = b - a
    t = np.clip(((pts - a) @ ab) / max(float(ab @ ab), 1e-300), 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(pts - proj, axis=1).min()


def polygon_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Euclidean separation between two convex polygons (0 if they overlap)."""
    if _polygons_intersect(p, q):
        return 0.0
    best = math.inf
    for poly_a, poly_b in ((p, q), (q, p)):
        for i in range(len(poly_a)):
            a = poly_a[i]
            b = poly_a[(i + 1) % len(poly_a)]
            best = min(best, _segment_point_dist(a, b, poly_b))
    return best


# ---------------------------------------------------------------------------
# packed generation


@dataclass(frozen=True)
class SceneConfig:
    object_count_range: tuple[int, int] = (4, 6)
    workspace_extent: float = 0.3
    catalog: CatalogConfig = field(default_factory=CatalogConfig)
    seed: int = 0
    max_attempts: int = 1000
    placement_margin: float = 1e-3


def _scene_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def _place_instance(
    obj: CatalogObject,
    extent: float,
    placed: list[ObjectInstance],
    margin: float,
    rng: np.random.Generator,
    position: np.ndarray | None = None,
    yaw: float | None = None,
) -> ObjectInstance | None:
    if obj.footprint[2] > extent:
        return None
    yaw = rng.uniform(0.0, 2.0 * math.pi) if yaw is None else yaw
    rot = quaternion_about_axis((0.0, 0.0, 1.0), yaw)
    cos, sin = math.cos(yaw), math.sin(yaw)
    rot2d = np.array([[cos, -sin], [sin, cos]])
    poly = obj.footprint_poly @ rot2d.T
    lo = poly.min(axis=0)
    hi = poly.max(axis=0)
    if position is None:
        span_lo = -lo
        span_hi = extent - hi
        if (span_hi <= span_lo).any():
            return None
        position = rng.uniform(span_lo, span_hi)
    else:
        position = np.asarray(position, dtype=float)
        if (position + lo < -1e-12).any() or (position + hi > extent + 1e-12).any():
            return None
    world_poly = poly + position
    # all objects rest on z=0, so z-intervals always overlap and the
    # footprint separation decides collision
    for other in placed:
        if polygon_distance(world_poly, other.world_footprint_poly()) < margin:
            return None
    pose = Pose(rot, np.array([position[0], position[1], 0.0]))
    return ObjectInstance(obj.catalog_id, obj.mesh, pose, obj.footprint, obj.footprint_poly)


def generate_packed_scene(config: SceneConfig, catalog: list[CatalogObject] | None = None) -> Scene:
    """Rejection-sampled collision-free packed scene; pure function of config."""
    lo, hi = config.object_count_range
    if not (1 <= lo <= hi <= 10):
        raise InputError(f"object_count_range must lie within [1, 10], got {config.object_count_range}")
    if config.workspace_extent <= 0:
        raise InputError("workspace_extent must be positive")
    catalog = build_catalog(config.catalog) if catalog is None else catalog
    rng = _scene_rng(config.seed, 0)
    count = int(rng.integers(lo, hi + 1))
    placed: list[ObjectInstance] = []
    for i in range(count):
        inst_rng = _scene_rng(config.seed, 1, i)
        inst = None
        for _ in range(config.max_attempts):
            obj = catalog[int(inst_rng.integers(len(catalog)))]
            inst = _place_instance(obj, config.workspace_extent, placed, config.placement_margin, inst_rng)
            if inst is not None:
                break
        if inst is None:
            raise GenerationError(f"could not place instance {i} after {config.max_attempts} attempts")
        placed.append(inst)
    target_index = int(_scene_rng(config.seed, 2).integers(count))
    return Scene(tuple(placed), target_index, config.workspace_extent, config.seed)


def derive_single_scene(scene: Scene, target_index: int) -> Scene:
    """Scene containing only the designated target at its unchanged pose."""
    if not 0 <= target_index < len(scene.instances):
        raise InputError(f"target_index {target_index} out of range")
    return Scene((scene.instances[target_index],), 0, scene.workspace_extent, scene.seed)


def enumerate_targets(scene: Scene) -> list[Scene]:
    """One scene per instance, differing only in target designation."""
    return [
        Scene(scene.instances, i, scene.workspace_extent, scene.seed)
        for i in range(len(scene.instances))
    ]


# ---------------------------------------------------------------------------
# manifest serialization


def scene_to_manifest(scene: Scene, catalog_config: CatalogConfig) -> dict:
    return {
        "workspace_extent": scene.workspace_extent,
        "seed": scene.seed,
        "target_index": scene.target_index,
        "catalog": {
            "seed": catalog_config.seed,
            "size": catalog_config.size,
            "box_side": list(catalog_config.box_side),
            "cylinder_radius": list(catalog_config.cylinder_radius),
            "hex_circumradius": list(catalog_config.hex_circumradius),
            "sphere_radius": list(catalog_config.sphere_radius),
            "height": list(catalog_config.height),
        },
        "instances": [
            {"catalog_id": inst.catalog_id, "pose": inst.pose.as_7floats()}
            for inst in scene.instances
        ],
    }


def save_scene(path, scene: Scene, catalog_config: CatalogConfig) -> None:
    Path(path).write_text(json.dumps(scene_to_manifest(scene, catalog_config), sort_keys=True, indent=1))


def catalog_config_from_manifest(data: dict) -> CatalogConfig:
    c = data["catalog"]
    return CatalogConfig(
        seed=c["seed"],
        size=c["size"],
        box_side=tuple(c["box_side"]),
        cylinder_radius=tuple(c["cylinder_radius"]),
        hex_circumradius=tuple(c["hex_circumradius"]),
        sphere_radius=tuple(c["sphere_radius"]),
        height=tuple(c["height"]),
    )


def scene_from_manifest(data: dict, catalog: list[CatalogObject] | None = None, mesh_dir=None) -> Scene:
    if catalog is None:
        catalog = build_catalog(catalog_config_from_manifest(data))
    by_id = {obj.catalog_id: obj for obj in catalog}
    instances = []
    for rec in data["instances"]:
        cid = rec["catalog_id"]
        pose = Pose.from_7floats(rec["pose"])
        if cid in by_id:
            obj = by_id[cid]
            mesh, footprint, poly = obj.mesh, obj.footprint, obj.footprint_poly
        elif mesh_dir is not None:
            mesh = load_ply_mesh(Path(mesh_dir) / f"{cid}.ply")
            v = mesh.vertices
            footprint = (
                float(v[:, 0].max() - v[:, 0].min()),
                float(v[:, 1].max() - v[:, 1].min()),
                float(v[:, 2].max()),
            )
            poly = _convex_hull_xy(v)
        else:
            raise InputError(f"unknown catalog id {cid!r} and no mesh directory given")
        instances.append(ObjectInstance(cid, mesh, pose, footprint, poly))
    return Scene(tuple(instances), data["target_index"], data["workspace_extent"], data["seed"])


def load_scene(path, catalog: list[CatalogObject] | None = None, mesh_dir=None) -> Scene:
    return scene_from_manifest(json.loads(Path(path).read_text()), catalog, mesh_dir)
