import json

import numpy as np
import pytest

from occlugrasp.errors import GenerationError, InputError
from occlugrasp.geometry import Pose
from occlugrasp.meshes import surface_sample
from occlugrasp.scenes import (
    CatalogConfig,
    Scene,
    SceneConfig,
    build_catalog,
    derive_single_scene,
    enumerate_targets,
    generate_packed_scene,
    load_scene,
    polygon_distance,
    save_scene,
    scene_from_manifest,
    scene_to_manifest,
)


def points_inside_mesh(points: np.ndarray, mesh, pose: Pose) -> np.ndarray:
    """Ray-parity containment oracle using brute-force all-triangle intersection."""
    inv = pose.inverse()
    local = inv.transform(points)
    v0 = mesh.vertices[mesh.triangles[:, 0]]
    v1 = mesh.vertices[mesh.triangles[:, 1]]
    v2 = mesh.vertices[mesh.triangles[:, 2]]
    d = np.array([0.577350269, 0.577350269, 0.577350269])
    e1 = v1 - v0
    e2 = v2 - v0
    p = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, p)
    ok = np.abs(det) > 1e-14
    inside = np.zeros(len(points), dtype=bool)
    for i, o in enumerate(local):
        s = o - v0
        u = np.einsum("ij,ij->i", s, p) / np.where(ok, det, 1.0)
        q = np.cross(s, e1)
        v = np.einsum("j,ij->i", d, q) / np.where(ok, det, 1.0)
        t = np.einsum("ij,ij->i", e2, q) / np.where(ok, det, 1.0)
        hits = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 1e-9)
        inside[i] = hits.sum() % 2 == 1
    return inside


def meshes_interpenetrate(inst_a, inst_b, n_samples: int = 400) -> bool:
    sa = surface_sample(inst_a.mesh, n_samples, seed=5).transformed(inst_a.pose)
    sb = surface_sample(inst_b.mesh, n_samples, seed=6).transformed(inst_b.pose)
    return bool(
        points_inside_mesh(sa.points, inst_b.mesh, inst_b.pose).any()
        or points_inside_mesh(sb.points, inst_a.mesh, inst_a.pose).any()
    )


class TestCatalog:
    def test_deterministic(self):
        a = build_catalog(CatalogConfig(seed=3, size=20))
        b = build_catalog(CatalogConfig(seed=3, size=20))
        for oa, ob in zip(a, b):
            assert oa.catalog_id == ob.catalog_id
            assert np.array_equal(oa.mesh.vertices, ob.mesh.vertices)

    def test_all_primitives_watertight(self):
        for obj in build_catalog(CatalogConfig(seed=1, size=12)):
            assert obj.mesh.is_watertight(), obj.catalog_id


class TestPolygonDistance:
    def test_overlapping_is_zero(self):
        sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1.0]])
        assert polygon_distance(sq, sq + 0.5) == 0.0

    def test_separated_squares(self):
        sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1.0]])
        assert abs(polygon_distance(sq, sq + np.array([2.0, 0.0])) - 1.0) < 1e-12

    def test_diagonal_separation(self):
        sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1.0]])
        d = polygon_distance(sq, sq + np.array([2.0, 2.0]))
        assert abs(d - np.sqrt(2.0)) < 1e-12


class TestGeneratePacked:
    def test_single_object_is_target(self):
        cfg = SceneConfig(object_count_range=(1, 1), seed=5)
        scene = generate_packed_scene(cfg)
        assert len(scene.instances) == 1
        assert scene.target_index == 0

    def test_deterministic(self):
        cfg = SceneConfig(object_count_range=(5, 5), seed=42)
        a = generate_packed_scene(cfg)
        b = generate_packed_scene(cfg)
        assert a.target_index == b.target_index
        for ia, ib in zip(a.instances, b.instances):
            assert ia.catalog_id == ib.catalog_id
            assert ia.pose.as_7floats() == ib.pose.as_7floats()

    def test_instances_inside_workspace_and_resting(self):
        cfg = SceneConfig(object_count_range=(4, 6), seed=7)
        for s in range(20):
            scene = generate_packed_scene(SceneConfig(object_count_range=(4, 6), seed=s))
            for inst in scene.instances:
                world = inst.pose.transform(inst.mesh.vertices)
                assert world.min() > -1e-9
                assert world[:, :2].max() < scene.workspace_extent + 1e-9
                assert world[:, 2].max() < scene.workspace_extent + 1e-9
                assert abs(world[:, 2].min()) < 1e-6

    def test_yaw_only_rotation(self):
        scene = generate_packed_scene(SceneConfig(object_count_range=(5, 5), seed=11))
        up = np.array([0.0, 0.0, 1.0])
        for inst in scene.instances:
            assert np.allclose(inst.pose.rotate_only(up), up, atol=1e-12)

    def test_no_interpenetration_brute_force(self):
        # scaled-down version of the exhaustive pairwise oracle sweep
        catalog = build_catalog(CatalogConfig())
        for s in range(30):
            scene = generate_packed_scene(SceneConfig(object_count_range=(5, 5), seed=1000 + s), catalog)
            n = len(scene.instances)
            for i in range(n):
                for j in range(i + 1, n):
                    assert not meshes_interpenetrate(scene.instances[i], scene.instances[j]), (
                        f"seed {1000 + s}: instances {i},{j} interpenetrate"
                    )

    def test_bad_count_range_rejected(self):
        with pytest.raises(InputError):
            generate_packed_scene(SceneConfig(object_count_range=(0, 3)))
        with pytest.raises(InputError):
            generate_packed_scene(SceneConfig(object_count_range=(2, 11)))

    def test_placement_failure_names_instance(self):
        # a workspace too small for any catalog object
        cfg = SceneConfig(object_count_range=(1, 1), workspace_extent=0.01, seed=0, max_attempts=20)
        with pytest.raises(GenerationError, match="instance 0"):
            generate_packed_scene(cfg)


class TestDeriveSingle:
    def test_keeps_target_pose_exactly(self):
        scene = generate_packed_scene(SceneConfig(object_count_range=(5, 5), seed=3))
        single = derive_single_scene(scene, 2)
        assert len(single.instances) == 1
        assert single.instances[0].pose.as_7floats() == scene.instances[2].pose.as_7floats()
        assert single.workspace_extent == scene.workspace_extent
        assert single.seed == scene.seed

    def test_idempotent_on_single(self):
        scene = generate_packed_scene(SceneConfig(object_count_range=(1, 1), seed=9))
        again = derive_single_scene(scene, 0)
        assert again.instances[0].pose.as_7floats() == scene.instances[0].pose.as_7floats()

    def test_invalid_index(self):
        scene = generate_packed_scene(SceneConfig(object_count_range=(2, 2), seed=1))
        with pytest.raises(InputError):
            derive_single_scene(scene, 5)


class TestEnumerateTargets:
    def test_one_scene_per_instance(self):
        scene = generate_packed_scene(SceneConfig(object_count_range=(5, 5), seed=13))
        variants = enumerate_targets(scene)
        assert len(variants) == len(scene.instances)
        assert [v.target_index for v in variants] == list(range(len(scene.instances)))
        for v in variants:
            assert v.instances is scene.instances

    def test_single_object(self):
        scene = generate_packed_scene(SceneConfig(object_count_range=(1, 1), seed=2))
        assert len(enumerate_targets(scene)) == 1

    def test_union_of_singles_is_distinct(self):
        scene = generate_packed_scene(SceneConfig(object_count_range=(5, 5), seed=17))
        singles = [derive_single_scene(v, v.target_index) for v in enumerate_targets(scene)]
        keys = {tuple(s.instances[0].pose.as_7floats()) + (s.instances[0].catalog_id,) for s in singles}
        assert len(keys) == len(scene.instances)


class TestManifest:
    def test_round_trip(self, tmp_path):
        cfg = SceneConfig(object_count_range=(4, 4), seed=21)
        scene = generate_packed_scene(cfg)
        path = tmp_path / "scene.json"
        save_scene(path, scene, cfg.catalog)
        loaded = load_scene(path)
        assert loaded.target_index == scene.target_index
        assert loaded.workspace_extent == scene.workspace_extent
        for ia, ib in zip(scene.instances, loaded.instances):
            assert ia.catalog_id == ib.catalog_id
            assert ia.pose.as_7floats() == ib.pose.as_7floats()
            assert np.array_equal(ia.mesh.vertices, ib.mesh.vertices)

    def test_manifest_is_stable_json(self):
        cfg = SceneConfig(object_count_range=(3, 3), seed=8)
        scene = generate_packed_scene(cfg)
        a = json.dumps(scene_to_manifest(scene, cfg.catalog), sort_keys=True)
        b = json.dumps(scene_to_manifest(generate_packed_scene(cfg), cfg.catalog), sort_keys=True)
        assert a == b

    def test_unknown_catalog_id(self):
        cfg = SceneConfig(object_count_range=(2, 2), seed=4)
        scene = generate_packed_scene(cfg)
        data = scene_to_manifest(scene, cfg.catalog)
        data["instances"][0]["catalog_id"] = "mystery_999"
        with pytest.raises(InputError):
            scene_from_manifest(data)
