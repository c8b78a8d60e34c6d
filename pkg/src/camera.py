"""
Virtual depth camera for nbv-grasp-sim

Pinhole intrinsics, exact analytic ray casting against the scene and depth/label rendering.
"""

import hashlib
import logging
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import TYPE_CHECKING, Tuple

import numpy as np

from . import config
from .geometry import Pose

if TYPE_CHECKING:
    from .scene import Scene

logger = logging.getLogger(__name__)

# Label for pixels that see the table; pixels that see nothing are BACKGROUND_LABEL
TABLE_LABEL = -1
BACKGROUND_LABEL = -2


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole model; pixel (u, v) looks along ((u - cx) / fx, (v - cy) / fy, 1)."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    depth_min: float
    depth_max: float

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"Image size must be positive, got {self.width}x{self.height}")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"Focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not 0 < self.depth_min < self.depth_max:
            raise ValueError(f"Depth range must satisfy 0 < min < max, got [{self.depth_min}, {self.depth_max}]")

    @classmethod
    def centered(cls, width: int, height: int, focal: float,
                 depth_min: float = config.SENSOR_DEPTH_MIN,
                 depth_max: float = config.SENSOR_DEPTH_MAX) -> "CameraIntrinsics":
        return cls(width, height, focal, focal, (width - 1) / 2.0, (height - 1) / 2.0, depth_min, depth_max)

    @classmethod
    def sensor_default(cls) -> "CameraIntrinsics":
        return cls.centered(config.SENSOR_WIDTH, config.SENSOR_HEIGHT, config.SENSOR_FOCAL)

    @classmethod
    def ig_default(cls) -> "CameraIntrinsics":
        """Downsampled copy of the sensor with the same field of view."""
        sensor = cls.sensor_default()
        return sensor.resized(config.IG_WIDTH, config.IG_HEIGHT)

    def resized(self, width: int, height: int) -> "CameraIntrinsics":
        sx = width / self.width
        sy = height / self.height
        return replace(self, width=width, height=height, fx=self.fx * sx, fy=self.fy * sy,
                       cx=(self.cx + 0.5) * sx - 0.5, cy=(self.cy + 0.5) * sy - 0.5)

    def pixel_rays(self) -> np.ndarray:
        """Row-major (H*W, 3) camera-frame rays with unit z component."""
        return _pixel_rays(self)

    def project(self, points_camera: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Nearest pixel (u, v) of camera-frame points with z > 0."""
        z = points_camera[:, 2]
        u = np.floor(self.fx * points_camera[:, 0] / z + self.cx + 0.5).astype(np.int64)
        v = np.floor(self.fy * points_camera[:, 1] / z + self.cy + 0.5).astype(np.int64)
        return u, v


@lru_cache(maxsize=16)
def _pixel_rays(intr: CameraIntrinsics) -> np.ndarray:
    v, u = np.mgrid[0:intr.height, 0:intr.width]
    rays = np.column_stack([(u.ravel() - intr.cx) / intr.fx,
                            (v.ravel() - intr.cy) / intr.fy,
                            np.ones(intr.width * intr.height)])
    rays.setflags(write=False)
    return rays


@dataclass(frozen=True, eq=False)
class DepthImage:
    """Row-major z-depth image in meters; invalid pixels hold 0."""

    intrinsics: CameraIntrinsics
    depths: np.ndarray

    @property
    def valid_mask(self) -> np.ndarray:
        return self.depths > 0

    def back_project(self, camera: Pose) -> np.ndarray:
        """World coordinates of every valid pixel."""
        flat = self.depths.ravel()
        valid = flat > 0
        points_camera = self.intrinsics.pixel_rays()[valid] * flat[valid, None]
        return camera.apply(points_camera)


def cast_rays(scene: "Scene", origins: np.ndarray, directions: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Nearest hit distance and label along unit rays.

    The table is the infinite plane z = table_height. Ties keep the earlier object in scene
    order, so the lowest id wins.
    """
    count = len(directions)
    best = np.full(count, np.inf)
    labels = np.full(count, BACKGROUND_LABEL, dtype=np.int64)

    dz = directions[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_table = (scene.table_height - origins[:, 2]) / dz
    t_table = np.where((np.abs(dz) > 1e-15) & (t_table > 0), t_table, np.inf)
    table_hit = t_table < best
    best[table_hit] = t_table[table_hit]
    labels[table_hit] = TABLE_LABEL

    for primitive in scene.objects:
        t_hit = primitive.ray_hits(origins, directions)
        closer = t_hit < best
        best[closer] = t_hit[closer]
        labels[closer] = primitive.id
    return best, labels


def _render(scene: "Scene", camera: Pose, intr: CameraIntrinsics) -> Tuple[np.ndarray, np.ndarray]:
    rays = intr.pixel_rays()
    lengths = np.linalg.norm(rays, axis=1)
    directions = camera.apply_vector(rays / lengths[:, None])
    origins = np.broadcast_to(camera.translation, directions.shape)
    distance, labels = cast_rays(scene, origins, directions)
    return distance / lengths, labels


def _noise_seed(scene_seed: int, camera: Pose) -> int:
    digest = hashlib.sha256(np.concatenate([camera.quat, camera.translation]).tobytes()).digest()
    return int.from_bytes(digest[:8], "little") ^ (int(scene_seed) & 0xFFFFFFFFFFFFFFFF)


def render_depth(scene: "Scene", camera: Pose, intr: CameraIntrinsics, noise_sigma: float = 0.0) -> DepthImage:
    """
    Render a z-depth image of the scene.

    Hits outside [depth_min, depth_max] are invalid (0). With noise_sigma > 0, additive
    Gaussian noise seeded from (scene.seed, camera) is applied and clamped to the valid range.
    """
    z_depth, _ = _render(scene, camera, intr)
    valid = np.isfinite(z_depth) & (z_depth >= intr.depth_min) & (z_depth <= intr.depth_max)
    depths = np.where(valid, z_depth, 0.0)

    if noise_sigma > 0:
        rng = np.random.default_rng(_noise_seed(scene.seed, camera))
        noisy = depths + rng.normal(0.0, noise_sigma, size=depths.shape)
        depths = np.where(valid, np.clip(noisy, intr.depth_min, intr.depth_max), 0.0)

    return DepthImage(intr, depths.reshape(intr.height, intr.width))


def render_labels(scene: "Scene", camera: Pose, intr: CameraIntrinsics) -> np.ndarray:
    """Per-pixel object id (H, W); TABLE_LABEL for the table, BACKGROUND_LABEL for nothing."""
    _, labels = _render(scene, camera, intr)
    return labels.reshape(intr.height, intr.width)
