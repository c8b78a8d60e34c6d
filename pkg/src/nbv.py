"""
View planning for nbv-grasp-sim

Candidate views on a hemisphere above the target, a reachability shell standing in for
inverse kinematics, and the rear-side voxel information gain used to pick the next view.
"""

import logging
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import config
from .camera import CameraIntrinsics
from .errors import UnreachableViewsError
from .geometry import Aabb, Pose
from .tsdf import RayWalk, TsdfGrid, VoxelState, traverse_rays

logger = logging.getLogger(__name__)

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


@dataclass(frozen=True)
class ReachabilityModel:
    """Closed shell around the robot base: radial distance and height bands, meters."""

    base: Tuple[float, float, float] = (0.15, -0.35, 0.0)
    r_min: float = 0.2
    r_max: float = 1.0
    z_min: float = config.TABLE_HEIGHT
    z_max: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "base", tuple(float(b) for b in self.base))
        if not self.r_min < self.r_max:
            raise ValueError(f"Radial range must satisfy r_min < r_max, got [{self.r_min}, {self.r_max}]")
        if not self.z_min < self.z_max:
            raise ValueError(f"Height range must satisfy z_min < z_max, got [{self.z_min}, {self.z_max}]")


def is_reachable(reach: ReachabilityModel, pose: Pose) -> bool:
    position = pose.translation
    distance = float(np.linalg.norm(position - np.asarray(reach.base)))
    return reach.r_min <= distance <= reach.r_max and reach.z_min <= position[2] <= reach.z_max


@dataclass(frozen=True, eq=False)
class ViewCandidate:
    pose: Pose
    index: int
    gain: Optional[int] = None

    def with_gain(self, gain: int) -> "ViewCandidate":
        return replace(self, gain=int(gain))

    @property
    def position(self) -> np.ndarray:
        return self.pose.translation


def view_radius(bbox: Aabb, intr: CameraIntrinsics, default: float = config.VIEW_RADIUS) -> float:
    """Hemisphere radius keeping every bbox point at least depth_min from the camera."""
    reach_to_corner = float(np.max(np.linalg.norm(bbox.corners() - bbox.top_center, axis=1)))
    return max(intr.depth_min + max(bbox.half_diagonal, reach_to_corner), default)


def hemisphere_points(n_views: int) -> np.ndarray:
    """Unit Fibonacci-spiral directions on the upper hemisphere; index 0 is the zenith."""
    i = np.arange(n_views)
    z = 1.0 - i / n_views
    ring = np.sqrt(np.clip(1.0 - z * z, 0.0, 1.0))
    azimuth = i * GOLDEN_ANGLE
    return np.column_stack([ring * np.cos(azimuth), ring * np.sin(azimuth), z])


def generate_views(bbox: Aabb, reach: ReachabilityModel, intr: CameraIntrinsics,
                   n_views: int = config.VIEW_COUNT, default_radius: float = config.VIEW_RADIUS) -> List[ViewCandidate]:
    """
    Reachable views on a hemisphere over the bbox top face, each looking at the bbox centre.

    Indices refer to the full layout, so they are stable whichever views are filtered out.

    Raises:
        ValueError: If n_views < 1
        UnreachableViewsError: If no candidate is reachable
    """
    if n_views < 1:
        raise ValueError(f"n_views must be at least 1, got {n_views}")
    radius = view_radius(bbox, intr, default_radius)
    positions = bbox.top_center + radius * hemisphere_points(n_views)

    views = []
    for index, position in enumerate(positions):
        pose = Pose.look_at(position, bbox.center)
        if is_reachable(reach, pose):
            views.append(ViewCandidate(pose, index))
    if not views:
        raise UnreachableViewsError(f"None of the {n_views} views at radius {radius:.3f} m is reachable")
    logger.debug(f"Generated {len(views)}/{n_views} reachable views at radius {radius:.3f} m")
    return views


def _front_hits(grid: TsdfGrid, states: np.ndarray, walk: RayWalk) -> Tuple[np.ndarray, np.ndarray]:
    """
    Voxel indices along each walk and a mask of front-surface hits.

    A front-surface hit is a NegativeObserved voxel entered from an observed voxel with a
    positive value.
    """
    idx = np.clip(walk.indices, 0, grid.resolution - 1)
    walked = np.where(walk.mask, states[idx[..., 0], idx[..., 1], idx[..., 2]], -1)
    values = grid.values[idx[..., 0], idx[..., 1], idx[..., 2]]

    hit = np.zeros(walked.shape, dtype=bool)
    hit[:, 1:] = ((walked[:, 1:] == VoxelState.NEGATIVE_OBSERVED)
                  & (walked[:, :-1] == VoxelState.FREE_OBSERVED) & (values[:, :-1] > 0))
    return idx, hit


def in_frustum(view: ViewCandidate, ig_intr: CameraIntrinsics, points: np.ndarray) -> np.ndarray:
    """Points that land on a pixel of the virtual camera within its depth range."""
    local = view.pose.inverse().apply(points)
    z = local[:, 2]
    ahead = (z >= ig_intr.depth_min) & (z <= ig_intr.depth_max)
    safe = np.where(ahead[:, None], local, np.array([0.0, 0.0, 1.0]))
    u, v = ig_intr.project(safe)
    return ahead & (u >= 0) & (u < ig_intr.width) & (v >= 0) & (v < ig_intr.height)


def candidate_voxels(grid: TsdfGrid, bbox: Aabb, states: Optional[np.ndarray] = None) -> np.ndarray:
    """(K, 3) indices of the NegativeObserved voxels whose centres lie in the bbox."""
    states = grid.states() if states is None else states
    indices = np.argwhere(states == VoxelState.NEGATIVE_OBSERVED)
    if len(indices) == 0:
        return indices
    return indices[bbox.contains(grid.index_to_world(indices))]


def visible_voxels(grid: TsdfGrid, view: ViewCandidate, ig_intr: CameraIntrinsics,
                   voxels: np.ndarray, states: np.ndarray) -> np.ndarray:
    """
    Mask of the voxels a view would reach: inside its frustum, with the segment from the
    camera to the voxel centre free of front-surface hits, the voxel itself included.
    """
    visible = np.zeros(len(voxels), dtype=bool)
    if len(voxels) == 0:
        return visible
    centers = grid.index_to_world(voxels)
    framed = np.flatnonzero(in_frustum(view, ig_intr, centers))
    if len(framed) == 0:
        return visible

    offsets = centers[framed] - view.position
    distances = np.linalg.norm(offsets, axis=1)
    walk = traverse_rays(grid, np.broadcast_to(view.position, offsets.shape), offsets / distances[:, None],
                         distances)
    idx, hit = _front_hits(grid, states, walk)

    last = walk.mask.sum(axis=1) - 1
    rows = np.arange(len(framed))
    reached = (last >= 0) & np.all(idx[rows, np.maximum(last, 0)] == voxels[framed], axis=1)
    blocked = (hit & walk.mask).any(axis=1)
    visible[framed] = reached & ~blocked
    return visible


def compute_gains(grid: TsdfGrid, bbox: Aabb, views: Sequence[ViewCandidate],
                  ig_intr: CameraIntrinsics) -> np.ndarray:
    """
    Information gain of every view: the number of NegativeObserved bbox voxels its virtual
    camera sees without crossing a front surface.

    The virtual camera's image only bounds the frustum; each candidate voxel is tested along
    the sight line to its centre.
    """
    states = grid.states()
    voxels = candidate_voxels(grid, bbox, states)
    gains = np.zeros(len(views), dtype=np.int64)
    if len(voxels) == 0:
        return gains
    for position, view in enumerate(views):
        gains[position] = int(np.count_nonzero(visible_voxels(grid, view, ig_intr, voxels, states)))
    return gains


def information_gain(grid: TsdfGrid, bbox: Aabb, view: ViewCandidate, ig_intr: CameraIntrinsics) -> int:
    return int(compute_gains(grid, bbox, [view], ig_intr)[0])


def best_view_position(views: Sequence[ViewCandidate], gains: np.ndarray) -> int:
    """Position in `views` of the highest gain, lowest view index first on ties."""
    return min(range(len(views)), key=lambda i: (-int(gains[i]), views[i].index))


def next_best_view(grid: TsdfGrid, bbox: Aabb, views: Sequence[ViewCandidate],
                   ig_intr: CameraIntrinsics) -> Tuple[ViewCandidate, int]:
    """
    View with the highest information gain; ties go to the lowest view index.

    Raises:
        ValueError: If views is empty
    """
    if not views:
        raise ValueError("next_best_view requires at least one view")
    gains = compute_gains(grid, bbox, views, ig_intr)
    best = best_view_position(views, gains)
    return views[best].with_gain(int(gains[best])), int(gains[best])


def score_views(grid: TsdfGrid, bbox: Aabb, views: Sequence[ViewCandidate],
                ig_intr: CameraIntrinsics) -> List[ViewCandidate]:
    """All views with their gains filled in, in input order."""
    gains = compute_gains(grid, bbox, views, ig_intr)
    return [view.with_gain(int(gain)) for view, gain in zip(views, gains)]


def zenith_view(bbox: Aabb, intr: CameraIntrinsics, default_radius: float = config.VIEW_RADIUS) -> ViewCandidate:
    """Index-0 view of the hemisphere layout, regardless of reachability."""
    position = bbox.top_center + np.array([0.0, 0.0, view_radius(bbox, intr, default_radius)])
    return ViewCandidate(Pose.look_at(position, bbox.center), 0)
