import json
import os

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from src.camera import CameraIntrinsics, render_depth
from src.errors import NoVisibleObjectError, ScenarioParseError, SceneGenerationError
from src.geometry import Pose, Primitive, primitives_intersect
from src.nbv import candidate_voxels
from src.scene import (NO_TARGET, Scene, bundled_scenarios, default_workspace, generate_packed_scene,
                       initial_camera_pose, load_scenario, load_scene, perturb_scene, resolve_scenario,
                       save_scene, select_target, target_bbox, visible_pixel_counts)
from src.tsdf import TsdfGrid, integrate
from tests.fusion import box_on_table, single_object_scene


class TestPackedScenes:
    """Procedural packed scene generation."""

    def test_deterministic_per_seed(self):
        first = generate_packed_scene(7, 5)
        second = generate_packed_scene(7, 5)
        assert json.dumps(first.to_dict()) == json.dumps(second.to_dict())
        assert len(first.objects) == 5
        assert first.target_id == NO_TARGET

    def test_seeds_differ(self):
        assert generate_packed_scene(7, 5).to_dict() != generate_packed_scene(8, 5).to_dict()

    def test_objects_are_placed_validly(self):
        scene = generate_packed_scene(21, 6)
        for obj in scene.objects:
            assert obj.aabb().min_corner[2] >= scene.table_height - 1e-9
            assert scene.workspace.contains(obj.center)
            assert np.allclose(obj.pose.axis(2), [0.0, 0.0, 1.0])
        for i, a in enumerate(scene.objects):
            for b in scene.objects[i + 1:]:
                assert not primitives_intersect(a, b)

    def test_too_few_objects(self):
        with pytest.raises(ValueError, match="at least 2 objects"):
            generate_packed_scene(0, 1)

    def test_placement_failure_names_seed(self, mocker):
        mocker.patch("src.scene.primitives_intersect", return_value=True)
        with pytest.raises(SceneGenerationError, match="seed 3"):
            generate_packed_scene(3, 4)


class TestSceneValidation:
    def test_duplicate_ids(self):
        a = box_on_table(object_id=1)
        b = box_on_table(x=0.05, object_id=1)
        with pytest.raises(ValueError, match="unique"):
            Scene((a, b), 0.05, default_workspace())

    def test_unknown_target(self):
        with pytest.raises(ValueError, match="does not refer"):
            Scene((box_on_table(),), 0.05, default_workspace(), target_id=5)

    def test_below_table(self):
        sunk = box_on_table().with_pose(Pose.from_quat_pos([0, 0, 0, 1], [0.15, 0.15, 0.06]))
        with pytest.raises(ValueError, match="below the table"):
            Scene((sunk,), 0.05, default_workspace())

    def test_target_required(self):
        scene = Scene((box_on_table(),), 0.05, default_workspace())
        with pytest.raises(ValueError, match="no target"):
            target_bbox(scene)


class TestTargetSelection:
    """Fewest visible pixels from the initial view."""

    def setup_method(self):
        self.intr = CameraIntrinsics.sensor_default()
        self.workspace = default_workspace()
        self.camera = initial_camera_pose(self.workspace, 0.05)

    def test_initial_camera(self):
        center = np.array([0.15, 0.15, 0.05])
        offset = self.camera.translation - center
        assert np.linalg.norm(offset) == pytest.approx(0.35)
        assert offset[2] == pytest.approx(0.35 * np.sin(np.radians(45.0)))
        assert offset[1] < 0

    def test_occluded_object_is_selected(self):
        front = box_on_table((0.04, 0.02, 0.05), y=0.12, object_id=0)
        back = box_on_table((0.03, 0.03, 0.03), y=0.20, object_id=1)
        scene = Scene((front, back), 0.05, self.workspace)
        counts = visible_pixel_counts(scene, self.camera, self.intr)
        assert 0 < counts[1] < counts[0]
        assert select_target(scene, self.camera, self.intr) == 1

    def test_single_object(self):
        scene = Scene((box_on_table(object_id=4),), 0.05, self.workspace)
        assert select_target(scene, self.camera, self.intr) == 4

    def test_ties_go_to_lowest_id(self, mocker):
        mocker.patch("src.scene.visible_pixel_counts", return_value={3: 10, 1: 10, 2: 50})
        scene = Scene((box_on_table(object_id=1),), 0.05, self.workspace)
        assert select_target(scene, self.camera, self.intr) == 1

    def test_nothing_visible(self):
        scene = Scene((box_on_table(),), 0.05, self.workspace, seed=9)
        sky = Pose.look_at([0.15, 0.15, 0.5], [0.15, 0.15, 1.0])
        with pytest.raises(NoVisibleObjectError, match="seed 9"):
            select_target(scene, sky, self.intr)

    def test_selection_matches_pixel_recount(self):
        rays = self.intr.pixel_rays()
        directions = self.camera.apply_vector(rays / np.linalg.norm(rays, axis=1, keepdims=True))
        origins = np.broadcast_to(self.camera.translation, directions.shape)
        for seed in range(5):
            scene = generate_packed_scene(seed, 5)
            t_table = (scene.table_height - origins[:, 2]) / directions[:, 2]
            t_table = np.where(t_table > 0, t_table, np.inf)
            hits = np.stack([obj.ray_hits(origins, directions) for obj in scene.objects])
            nearest = np.argmin(hits, axis=0)
            seen = hits[nearest, np.arange(len(directions))] < t_table
            recount = {scene.objects[i].id: int(np.count_nonzero(seen & (nearest == i)))
                       for i in range(len(scene.objects))}
            recount = {object_id: count for object_id, count in recount.items() if count > 0}

            assert visible_pixel_counts(scene, self.camera, self.intr) == recount
            target = select_target(scene, self.camera, self.intr)
            assert all(recount[target] <= count for count in recount.values())

    def test_target_bbox(self):
        scene = single_object_scene(box_on_table())
        bbox = target_bbox(scene)
        assert np.allclose(bbox.min_corner, [0.13, 0.13, 0.05])
        assert np.allclose(bbox.max_corner, [0.17, 0.17, 0.13])

    def test_target_bbox_of_rotated_box(self):
        yaw_45 = Rotation.from_euler("z", 45.0, degrees=True).as_quat()
        box = Primitive.box((0.02, 0.03, 0.04), Pose.from_quat_pos(yaw_45, [0.15, 0.15, 0.09]), 0)
        bbox = target_bbox(single_object_scene(box))
        half = (0.02 + 0.03) / np.sqrt(2.0)
        assert np.allclose(bbox.min_corner, [0.15 - half, 0.15 - half, 0.05])
        assert np.allclose(bbox.max_corner, [0.15 + half, 0.15 + half, 0.13])


class TestSceneFiles:
    """Scene and scenario JSON files."""

    def test_save_load_is_exact(self, tmp_path):
        scene = generate_packed_scene(5, 5).with_target(2)
        path = os.path.join(tmp_path, "scene.json")
        save_scene(scene, path)
        assert load_scene(path).to_dict() == scene.to_dict()

    def test_bundled_scenarios(self):
        scenarios = bundled_scenarios()
        assert list(scenarios) == ["scene_a", "scene_b", "scene_c", "scene_d"]
        for name, path in scenarios.items():
            scenario = load_scenario(path)
            assert scenario.name == name
            assert scenario.scene.has_target
            assert scenario.description

    def test_initial_view_leaves_hidden_target_band(self):
        sensor = CameraIntrinsics.sensor_default()
        for name, path in bundled_scenarios().items():
            scenario = load_scenario(path)
            grid = integrate(TsdfGrid(), render_depth(scenario.scene, scenario.initial_camera, sensor),
                             scenario.initial_camera)
            assert len(candidate_voxels(grid, target_bbox(scenario.scene))) >= 10, name

    def test_missing_initial_camera_defaults(self):
        scenario = load_scenario(resolve_scenario("scene_a"))
        assert scenario.initial_camera.isclose(initial_camera_pose(scenario.scene.workspace, 0.05))

    def test_parse_error_reports_line(self, tmp_path):
        path = os.path.join(tmp_path, "broken.json")
        with open(path, "w", encoding="utf-8") as f:
            f.write('{\n  "seed": 0,\n  oops\n}\n')
        with pytest.raises(ScenarioParseError) as excinfo:
            load_scenario(path)
        assert excinfo.value.line == 3
        assert f"{path}:3:" in str(excinfo.value)

    def test_scenario_needs_target(self, tmp_path):
        path = os.path.join(tmp_path, "untargeted.json")
        save_scene(Scene((box_on_table(),), 0.05, default_workspace()), path)
        with pytest.raises(ScenarioParseError, match="target_id"):
            load_scenario(path)

    def test_unknown_scenario(self):
        with pytest.raises(FileNotFoundError, match="Scenario not found"):
            resolve_scenario("scene_z")


class TestPerturbation:
    def setup_method(self):
        self.scene = load_scenario(resolve_scenario("scene_d")).scene

    def test_deterministic(self):
        assert perturb_scene(self.scene, 4).to_dict() == perturb_scene(self.scene, 4).to_dict()
        assert perturb_scene(self.scene, 4).to_dict() != perturb_scene(self.scene, 5).to_dict()

    def test_jitter_stays_in_table_plane(self):
        moved = perturb_scene(self.scene, 1)
        for before, after in zip(self.scene.objects, moved.objects):
            assert after.id == before.id
            assert after.center[2] == pytest.approx(before.center[2])
            assert np.linalg.norm(after.center[:2] - before.center[:2]) < 0.05
            assert np.allclose(after.pose.axis(2), [0.0, 0.0, 1.0])
        assert moved.target_id == self.scene.target_id
