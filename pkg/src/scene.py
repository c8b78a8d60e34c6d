"""
Simulated world for nbv-grasp-sim

Ground-truth scenes of primitive solids on a table: packed scene generation, target
selection, scene files and the bundled hand-authored scenarios.
"""

import json
import logging
import os
from dataclasses import dataclass, replace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from . import config
from .camera import CameraIntrinsics, render_labels
from .errors import NoVisibleObjectError, SceneGenerationError, ScenarioParseError
from .geometry import Aabb, Pose, Primitive, Shape, primitives_intersect
from .utils.file_io import read_json_file, write_text_file

logger = logging.getLogger(__name__)

NO_TARGET = -1

# Packed-scene sampling ranges (meters)
PLACEMENT_MARGIN = 0.06
MIN_CLEARANCE = 0.004
HALF_EXTENT_RANGE = (0.015, 0.03)
CYLINDER_RADIUS_RANGE = (0.015, 0.03)
CYLINDER_HEIGHT_RANGE = (0.04, 0.10)
SPHERE_RADIUS_RANGE = (0.02, 0.03)
MAX_PLACEMENT_ATTEMPTS = 200

SCENARIO_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "scenarios")


@dataclass(frozen=True, eq=False)
class Scene:
    """Primitive solids resting on the table plane z = table_height."""

    objects: Tuple[Primitive, ...]
    table_height: float
    workspace: Aabb
    target_id: int = NO_TARGET
    seed: int = 0

    def __post_init__(self):
        objects = tuple(self.objects)
        ids = [obj.id for obj in objects]
        if len(set(ids)) != len(ids):
            raise ValueError(f"Object ids must be unique, got {ids}")
        if self.target_id != NO_TARGET and self.target_id not in ids:
            raise ValueError(f"Target id {self.target_id} does not refer to an object")
        for obj in objects:
            if obj.aabb().min_corner[2] < self.table_height - 1e-9:
                raise ValueError(f"Object {obj.id} reaches below the table")
            if not self.workspace.contains(obj.center):
                raise ValueError(f"Object {obj.id} centroid lies outside the workspace")
        object.__setattr__(self, "objects", objects)

    def object_by_id(self, object_id: int) -> Primitive:
        for obj in self.objects:
            if obj.id == object_id:
                return obj
        raise KeyError(f"No object with id {object_id}")

    @property
    def has_target(self) -> bool:
        return self.target_id != NO_TARGET

    @property
    def target(self) -> Primitive:
        if not self.has_target:
            raise ValueError("Scene has no target selected")
        return self.object_by_id(self.target_id)

    def with_target(self, target_id: int) -> "Scene":
        return replace(self, target_id=int(target_id))

    def distractors(self) -> List[Primitive]:
        return [obj for obj in self.objects if obj.id != self.target_id]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": int(self.seed),
            "table_height": float(self.table_height),
            "workspace": self.workspace.to_dict(),
            "objects": [obj.to_dict() for obj in self.objects],
            "target_id": int(self.target_id),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Scene":
        return cls(
            objects=tuple(Primitive.from_dict(obj) for obj in data["objects"]),
            table_height=float(data["table_height"]),
            workspace=Aabb.from_dict(data["workspace"]),
            target_id=int(data.get("target_id", NO_TARGET)),
            seed=int(data.get("seed", 0)),
        )


@dataclass(frozen=True, eq=False)
class Scenario:
    """A hand-authored scene with its fixed initial camera."""

    name: str
    scene: Scene
    initial_camera: Pose
    description: str = ""


def default_workspace(side_length: float = config.TSDF_SIDE_LENGTH) -> Aabb:
    return Aabb(np.zeros(3), np.full(3, side_length))


def initial_camera_pose(workspace: Aabb, table_height: float, radius: float = config.VIEW_RADIUS,
                        elevation_deg: float = 45.0, azimuth_deg: float = -90.0) -> Pose:
    """Fixed oblique start pose looking at the workspace centre on the table."""
    center = np.array([workspace.center[0], workspace.center[1], table_height])
    elevation = np.radians(elevation_deg)
    azimuth = np.radians(azimuth_deg)
    offset = radius * np.array([np.cos(elevation) * np.cos(azimuth),
                                np.cos(elevation) * np.sin(azimuth),
                                np.sin(elevation)])
    return Pose.look_at(center + offset, center)


def _upright_pose(x: float, y: float, z: float, yaw: float) -> Pose:
    return Pose(Rotation.from_euler("z", yaw), np.array([x, y, z]))


def _sample_primitive(rng: np.random.Generator, object_id: int, lower: np.ndarray,
                      upper: np.ndarray, table_height: float) -> Primitive:
    kind = [Shape.BOX, Shape.CYLINDER, Shape.SPHERE][int(rng.integers(3))]
    yaw = float(rng.uniform(0.0, 2.0 * np.pi))
    x, y = rng.uniform(lower, upper)
    if kind is Shape.BOX:
        half = rng.uniform(*HALF_EXTENT_RANGE, size=3)
        return Primitive.box(half, _upright_pose(x, y, table_height + half[2], yaw), object_id)
    if kind is Shape.CYLINDER:
        radius = float(rng.uniform(*CYLINDER_RADIUS_RANGE))
        height = float(rng.uniform(*CYLINDER_HEIGHT_RANGE))
        return Primitive.cylinder(radius, height, _upright_pose(x, y, table_height + 0.5 * height, yaw), object_id)
    radius = float(rng.uniform(*SPHERE_RADIUS_RANGE))
    return Primitive.sphere(radius, _upright_pose(x, y, table_height + radius, yaw), object_id)


def generate_packed_scene(seed: int, n_objects: int = config.PACKED_OBJECT_COUNT,
                          workspace: Optional[Aabb] = None,
                          table_height: float = config.TABLE_HEIGHT) -> Scene:
    """
    Place `n_objects` upright primitives at non-overlapping poses on the table.

    Deterministic for a seed. The target is left unset until select_target.

    Raises:
        ValueError: If fewer than two objects are requested
        SceneGenerationError: If an object cannot be placed within the attempt budget
    """
    if n_objects < 2:
        raise ValueError(f"Packed scenes need at least 2 objects, got {n_objects}")
    workspace = workspace or default_workspace()
    rng = np.random.default_rng(seed)
    lower = workspace.min_corner[:2] + PLACEMENT_MARGIN
    upper = workspace.max_corner[:2] - PLACEMENT_MARGIN

    objects: List[Primitive] = []
    for object_id in range(n_objects):
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            candidate = _sample_primitive(rng, object_id, lower, upper, table_height)
            if not any(primitives_intersect(candidate, other, margin=MIN_CLEARANCE) for other in objects):
                objects.append(candidate)
                break
        else:
            raise SceneGenerationError(seed, f"could not place object {object_id} "
                                             f"after {MAX_PLACEMENT_ATTEMPTS} attempts")

    logger.debug(f"Generated packed scene seed={seed} with {len(objects)} objects")
    return Scene(tuple(objects), table_height, workspace, NO_TARGET, seed)


def visible_pixel_counts(scene: Scene, view: Pose, intr: CameraIntrinsics) -> Dict[int, int]:
    labels = render_labels(scene, view, intr)
    ids, counts = np.unique(labels[labels >= 0], return_counts=True)
    return {int(i): int(c) for i, c in zip(ids, counts)}


def select_target(scene: Scene, initial_view: Pose, intr: CameraIntrinsics) -> int:
    """
    Id of the visible object with the fewest pixels from `initial_view`; ties go to the lowest id.

    Raises:
        NoVisibleObjectError: If no object covers a single pixel
    """
    if not scene.objects:
        raise ValueError("Scene has no objects")
    counts = visible_pixel_counts(scene, initial_view, intr)
    if not counts:
        raise NoVisibleObjectError(f"No object visible from the initial view (seed {scene.seed})")
    return min(counts, key=lambda object_id: (counts[object_id], object_id))


def target_bbox(scene: Scene) -> Aabb:
    return scene.target.aabb()


def perturb_scene(scene: Scene, seed: int, position_sigma: float = 0.005,
                  yaw_sigma_deg: float = 5.0) -> Scene:
    """Jitter every object in the table plane and about the vertical, deterministically per seed."""
    rng = np.random.default_rng([int(scene.seed), int(seed)])
    objects = []
    for obj in scene.objects:
        dx, dy = rng.normal(0.0, position_sigma, size=2)
        yaw = np.radians(rng.normal(0.0, yaw_sigma_deg))
        pose = Pose(Rotation.from_euler("z", yaw) * obj.pose.rotation,
                    obj.pose.translation + np.array([dx, dy, 0.0]))
        objects.append(obj.with_pose(pose))
    return replace(scene, objects=tuple(objects))


def save_scene(scene: Scene, file_path: str, extra: Optional[Dict[str, Any]] = None) -> None:
    """Write the scene as JSON; floats keep full precision so loading is exact."""
    data = scene.to_dict()
    if extra:
        data.update(extra)
    write_text_file(file_path, json.dumps(data, indent=2) + "\n")


def _parse_scene_data(file_path: str) -> Dict[str, Any]:
    try:
        return read_json_file(file_path)
    except json.JSONDecodeError as e:
        raise ScenarioParseError(file_path, e.msg, e.lineno, e.colno) from e


def load_scene(file_path: str) -> Scene:
    """
    Read a scene file.

    Raises:
        FileNotFoundError: If the file doesn't exist
        ScenarioParseError: If the JSON or its content is malformed
    """
    data = _parse_scene_data(file_path)
    try:
        return Scene.from_dict(data)
    except (KeyError, TypeError, ValueError) as e:
        raise ScenarioParseError(file_path, f"invalid scene content: {e}") from e


def load_scenario(file_path: str) -> Scenario:
    """Read a scenario file: a scene file with a fixed target and optional initial camera."""
    data = _parse_scene_data(file_path)
    try:
        scene = Scene.from_dict(data)
        if not scene.has_target:
            raise ValueError("scenario must fix target_id")
        if "initial_camera" in data:
            camera = Pose.from_dict(data["initial_camera"])
        else:
            camera = initial_camera_pose(scene.workspace, scene.table_height)
    except (KeyError, TypeError, ValueError) as e:
        raise ScenarioParseError(file_path, f"invalid scenario content: {e}") from e
    name = data.get("name", os.path.splitext(os.path.basename(file_path))[0])
    return Scenario(name, scene, camera, data.get("description", ""))


def bundled_scenarios() -> Dict[str, str]:
    """Name to path of the scenario files shipped with the package."""
    names = sorted(f for f in os.listdir(SCENARIO_DIR) if f.endswith(".json"))
    return {os.path.splitext(f)[0]: os.path.join(SCENARIO_DIR, f) for f in names}


def resolve_scenario(name_or_path: str) -> str:
    if os.path.exists(name_or_path):
        return name_or_path
    scenarios = bundled_scenarios()
    if name_or_path in scenarios:
        return scenarios[name_or_path]
    raise FileNotFoundError(f"Scenario not found: {name_or_path} (bundled: {', '.join(scenarios)})")
