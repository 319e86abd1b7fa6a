import numpy as np
import pytest

from occlugrasp.camera import back_project, default_camera, render
from occlugrasp.completion import (
    MirrorCompleter,
    OracleCompleter,
    PassthroughCompleter,
    chamfer_l1,
    completion_ground_truth,
    make_completer,
    volumetric_iou,
)
from occlugrasp.errors import InputError
from occlugrasp.geometry import PointCloud
from occlugrasp.meshes import make_cylinder, surface_sample
from occlugrasp.scenes import SceneConfig, derive_single_scene, generate_packed_scene

from .test_camera import box_instance, make_scene


def brute_chamfer(a: np.ndarray, b: np.ndarray) -> float:
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    return 0.5 * (d.min(axis=1).mean() + d.min(axis=0).mean())


class TestChamfer:
    def test_identical_zero(self):
        pts = np.random.default_rng(0).normal(size=(50, 3))
        assert chamfer_l1(PointCloud(pts), PointCloud(pts.copy())) == 0.0

    def test_unit_separation(self):
        a = PointCloud(np.array([[0.0, 0.0, 0.0]]))
        b = PointCloud(np.array([[1.0, 0.0, 0.0]]))
        assert chamfer_l1(a, b) == 1.0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            a = rng.normal(size=(100, 3))
            b = rng.normal(size=(100, 3))
            fast = chamfer_l1(PointCloud(a), PointCloud(b))
            slow = brute_chamfer(a, b)
            assert abs(fast - slow) < 1e-12

    def test_symmetry_exact(self):
        rng = np.random.default_rng(6)
        a = PointCloud(rng.normal(size=(64, 3)))
        b = PointCloud(rng.normal(size=(80, 3)))
        assert chamfer_l1(a, b) == chamfer_l1(b, a)

    def test_zero_iff_mutual_subsets(self):
        rng = np.random.default_rng(7)
        base = rng.normal(size=(30, 3))
        a = PointCloud(base)
        b = PointCloud(base[rng.permutation(30)])
        assert chamfer_l1(a, b) == 0.0
        c = PointCloud(np.vstack([base, [[9.0, 9.0, 9.0]]]))
        assert chamfer_l1(a, c) > 0.0

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            chamfer_l1(PointCloud.empty(), PointCloud(np.zeros((1, 3))))


class TestIou:
    def test_identical(self):
        pts = np.random.default_rng(1).uniform(0, 0.3, size=(200, 3))
        assert volumetric_iou(PointCloud(pts), PointCloud(pts.copy())) == 1.0

    def test_disjoint(self):
        a = PointCloud(np.random.default_rng(2).uniform(0, 0.1, size=(50, 3)))
        b = PointCloud(np.random.default_rng(3).uniform(10, 10.1, size=(50, 3)))
        assert volumetric_iou(a, b) == 0.0

    def test_half_overlap_is_one_third(self):
        vox = 0.01
        # equal-size occupancy sets, half of each overlapping: |A∩B| = k, |A∪B| = 3k
        k = 8
        centers = (np.arange(3 * k)[:, None] + 0.5) * vox * np.array([[1.0, 0.0, 0.0]])
        a = PointCloud(centers[: 2 * k])
        b = PointCloud(centers[k:])
        assert volumetric_iou(a, b, voxel_size=vox) == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_bad_voxel_size(self):
        a = PointCloud(np.zeros((1, 3)))
        with pytest.raises(InputError):
            volumetric_iou(a, a, voxel_size=0.0)

    def test_both_empty_rejected(self):
        with pytest.raises(InputError):
            volumetric_iou(PointCloud.empty(), PointCloud.empty())


def rendered_partial(scene, cam):
    frame = render(scene, cam)
    return back_project(frame, scene.target_index)


class TestOracleCompleter:
    def test_cd_at_noise_floor(self):
        scene = generate_packed_scene(SceneConfig(object_count_range=(1, 1), seed=3))
        gt = completion_ground_truth(scene)
        completed = OracleCompleter()(PointCloud.empty(), scene)
        # independent resample of the same surface: CD ~ sampling noise floor
        floor = chamfer_l1(
            surface_sample(scene.target.mesh, 2048, seed=1).transformed(scene.target.pose),
            surface_sample(scene.target.mesh, 2048, seed=2).transformed(scene.target.pose),
        )
        assert chamfer_l1(completed, gt) < 2.0 * floor

    def test_ignores_partial_input(self):
        scene = generate_packed_scene(SceneConfig(object_count_range=(1, 1), seed=4))
        full = OracleCompleter()(PointCloud.empty(), scene)
        assert len(full) > 0

    def test_iou_against_ground_truth(self):
        scene = generate_packed_scene(SceneConfig(object_count_range=(1, 1), seed=5))
        completed = OracleCompleter()(PointCloud.empty(), scene)
        gt = completion_ground_truth(scene)
        assert volumetric_iou(completed, gt) >= 0.95


class TestMirrorCompleter:
    def test_half_visible_cylinder_recovers_extent(self):
        cyl = make_cylinder(0.035, 0.1)
        from occlugrasp.scenes import ObjectInstance
        from occlugrasp.geometry import Pose, Quaternion

        poly = 0.035 * np.column_stack(
            [np.cos(np.linspace(0, 2 * np.pi, 12, endpoint=False)), np.sin(np.linspace(0, 2 * np.pi, 12, endpoint=False))]
        )
        inst = ObjectInstance("cyl", cyl, Pose(Quaternion.identity(), np.array([0.15, 0.15, 0.0])), (0.07, 0.07, 0.1), poly)
        scene = make_scene([inst])
        cam = default_camera(width=320, height=240, focal=270.0, elevation_deg=30.0)
        partial = rendered_partial(scene, cam)
        completed = MirrorCompleter()(partial, scene, cam)
        # extent along the horizontal view direction within 10% of the diameter
        view = np.array([0.15, 0.15, 0.05]) - cam.pose.translation
        horiz = view - view[2] * np.array([0.0, 0.0, 1.0])
        horiz /= np.linalg.norm(horiz)
        span = (completed.points @ horiz).max() - (completed.points @ horiz).min()
        partial_span = (partial.points @ horiz).max() - (partial.points @ horiz).min()
        assert abs(span - 0.07) < 0.1 * 0.07
        assert span > partial_span

    def test_symmetric_complete_cloud_unchanged(self):
        scene = generate_packed_scene(SceneConfig(object_count_range=(1, 1), seed=6))
        cam = default_camera(width=160, height=120, focal=135.0)
        full = completion_ground_truth(scene)
        out = MirrorCompleter()(full, scene, cam)
        # reflections of a complete symmetric cloud add (almost) nothing
        assert chamfer_l1(out, full) < 2.0 * 0.002

    def test_three_points_passthrough(self):
        cam = default_camera()
        cloud = PointCloud(np.random.default_rng(0).uniform(0.1, 0.2, size=(3, 3)))
        out = MirrorCompleter()(cloud, None, cam)
        assert out is cloud


class TestOrdering:
    def test_completer_cd_ordering(self):
        # oracle <= mirror <= passthrough, averaged over many single scenes
        cam = default_camera(width=160, height=120, focal=135.0)
        sums = {"oracle": 0.0, "mirror": 0.0, "none": 0.0}
        n = 0
        for seed in range(40):
            scene = generate_packed_scene(SceneConfig(object_count_range=(1, 1), seed=700 + seed))
            partial = rendered_partial(scene, cam)
            if len(partial) < 4:
                continue
            gt = completion_ground_truth(scene)
            for name in sums:
                completed = make_completer(name)(partial, scene, cam)
                sums[name] += chamfer_l1(completed, gt)
            n += 1
        assert n >= 30
        assert sums["oracle"] < sums["mirror"] < sums["none"]


class TestRegistry:
    def test_known_names(self):
        assert isinstance(make_completer("none"), PassthroughCompleter)
        with pytest.raises(InputError):
            make_completer("adaptive")
