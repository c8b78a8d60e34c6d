"""
Volumetric map for nbv-grasp-sim

Truncated signed distance fusion of depth images on a cubic voxel grid, and the voxel ray
walk shared by grasp detection and information gain.
"""

import io
import json
import logging
from dataclasses import dataclass, field
from enum import IntEnum
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy import ndimage

from . import config
from .camera import DepthImage
from .geometry import Pose
from .utils.file_io import read_text_file, write_text_file

logger = logging.getLogger(__name__)

GRID_DUMP_HEADER = "# tsdf "


class VoxelState(IntEnum):
    UNKNOWN = 0
    FREE_OBSERVED = 1
    NEGATIVE_OBSERVED = 2


@dataclass(frozen=True)
class TsdfConfig:
    side_length: float = config.TSDF_SIDE_LENGTH
    resolution: int = config.TSDF_RESOLUTION
    truncation_voxels: float = config.TSDF_TRUNCATION_VOXELS
    max_weight: float = config.TSDF_MAX_WEIGHT

    def __post_init__(self):
        if self.side_length <= 0 or self.resolution <= 0:
            raise ValueError(f"Grid side length and resolution must be positive, "
                             f"got {self.side_length}, {self.resolution}")
        if self.truncation_voxels <= 0 or self.max_weight < 1:
            raise ValueError(f"Invalid truncation {self.truncation_voxels} or weight cap {self.max_weight}")

    @property
    def voxel_size(self) -> float:
        return self.side_length / self.resolution

    @property
    def truncation(self) -> float:
        return self.truncation_voxels * self.voxel_size


@dataclass(eq=False)
class TsdfGrid:
    """
    N³ voxels of normalized truncated distance and integration weight.

    Index (i, j, k) covers [i, i+1)·voxel_size along the grid x axis (likewise y, z), in the
    frame `origin` placed at the workspace cube corner.
    """

    config: TsdfConfig = field(default_factory=TsdfConfig)
    origin: Pose = field(default_factory=Pose.identity)
    values: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        shape = (self.config.resolution,) * 3
        if self.values is None:
            self.values = np.zeros(shape)
        if self.weights is None:
            self.weights = np.zeros(shape)
        if self.values.shape != shape or self.weights.shape != shape:
            raise ValueError(f"Grid arrays must have shape {shape}")

    @property
    def resolution(self) -> int:
        return self.config.resolution

    @property
    def voxel_size(self) -> float:
        return self.config.voxel_size

    @property
    def truncation(self) -> float:
        return self.config.truncation

    def copy(self) -> "TsdfGrid":
        return TsdfGrid(self.config, self.origin, self.values.copy(), self.weights.copy())

    def states(self) -> np.ndarray:
        states = np.full(self.values.shape, VoxelState.UNKNOWN, dtype=np.int8)
        observed = self.weights > 0
        states[observed & (self.values >= 0)] = VoxelState.FREE_OBSERVED
        states[observed & (self.values < 0)] = VoxelState.NEGATIVE_OBSERVED
        return states

    def observed_count(self) -> int:
        return int(np.count_nonzero(self.weights > 0))

    def voxel_centers(self) -> np.ndarray:
        """World centres of all voxels, C order, shape (N³, 3)."""
        n = self.resolution
        idx = np.indices((n, n, n)).reshape(3, -1).T
        return self.index_to_world(idx)

    def index_to_world(self, indices: np.ndarray) -> np.ndarray:
        return self.origin.apply((np.asarray(indices, dtype=float) + 0.5) * self.voxel_size)

    def world_to_grid(self, points: np.ndarray) -> np.ndarray:
        return self.origin.inverse().apply(np.asarray(points, dtype=float))

    def world_to_index(self, points: np.ndarray) -> np.ndarray:
        """Floored voxel indices; points on the max face fall outside the grid."""
        return np.floor(self.world_to_grid(points) / self.voxel_size).astype(np.int64)

    def in_bounds(self, indices: np.ndarray) -> np.ndarray:
        indices = np.asarray(indices)
        return np.all((indices >= 0) & (indices < self.resolution), axis=-1)

    def state_at(self, indices: np.ndarray) -> np.ndarray:
        """States of the given voxel indices; out-of-bounds indices read as Unknown."""
        indices = np.asarray(indices, dtype=np.int64)
        inside = self.in_bounds(indices)
        clipped = np.clip(indices, 0, self.resolution - 1)
        states = self.states()[clipped[..., 0], clipped[..., 1], clipped[..., 2]]
        return np.where(inside, states, VoxelState.UNKNOWN).astype(np.int8)

    def gradients(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        Sobel-smoothed central-difference gradient of values in the world frame, shape (N, N, N, 3).

        Returns the gradients and a mask of voxels whose full 3x3x3 neighbourhood is observed.
        """
        observed = self.weights > 0
        grad = np.zeros(self.values.shape + (3,))
        for axis in range(3):
            # [-1, 0, 1] across two voxels, [1, 2, 1] weights summing to 16 on the other axes
            grad[..., axis] = ndimage.sobel(self.values, axis=axis, mode="nearest") / (32.0 * self.voxel_size)
        valid = ndimage.binary_erosion(observed, structure=np.ones((3, 3, 3), dtype=bool), border_value=0)
        world_grad = self.origin.apply_vector(grad.reshape(-1, 3)).reshape(grad.shape)
        return world_grad, valid


def integrate(grid: TsdfGrid, depth: DepthImage, camera: Pose) -> TsdfGrid:
    """
    Fuse one depth image into the grid in place.

    Each voxel centre is projected to its nearest pixel. Where that pixel is valid and
    sdf = depth − z > −δ, the clamped sdf/δ is averaged into the voxel with weight increment
    1 capped at max_weight. Voxels further than δ behind the surface are untouched.

    Returns:
        TsdfGrid: The same grid, for chaining
    """
    if not np.all(np.isfinite(camera.translation)):
        raise ValueError("Camera pose must be finite")
    intr = depth.intrinsics
    if depth.depths.shape != (intr.height, intr.width):
        raise ValueError(f"Depth image shape {depth.depths.shape} does not match "
                         f"intrinsics {intr.height}x{intr.width}")

    points_camera = camera.inverse().apply(grid.voxel_centers())
    z = points_camera[:, 2]
    in_front = z > 1e-9
    safe = np.where(in_front[:, None], points_camera, np.array([0.0, 0.0, 1.0]))
    u, v = intr.project(safe)
    in_image = in_front & (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)

    flat = np.flatnonzero(in_image)
    measured = depth.depths[v[flat], u[flat]]
    sdf = measured - z[flat]
    update = (measured > 0) & (sdf > -grid.truncation)
    flat = flat[update]
    tsdf = np.clip(sdf[update] / grid.truncation, -1.0, 1.0)

    values = grid.values.reshape(-1)
    weights = grid.weights.reshape(-1)
    old_weight = weights[flat]
    values[flat] = (old_weight * values[flat] + tsdf) / (old_weight + 1.0)
    weights[flat] = np.minimum(old_weight + 1.0, grid.config.max_weight)

    logger.debug(f"Integrated image: {len(flat)} voxels updated, {grid.observed_count()} observed")
    return grid


@dataclass(frozen=True, eq=False)
class RayWalk:
    """
    Batched voxel walk.

    indices (R, S, 3) in entry order, entry distances (R, S) from each origin, and a mask
    (R, S) of steps that lie inside the grid and before the range limit. Valid steps of a
    ray always form a prefix.
    """

    indices: np.ndarray
    entry: np.ndarray
    mask: np.ndarray


def traverse_rays(grid: TsdfGrid, origins: np.ndarray, directions: np.ndarray,
                  max_range: Union[float, np.ndarray] = np.inf) -> RayWalk:
    """
    Step every ray through the voxels its segment pierces (incremental grid traversal).

    Ties between axes step the lowest axis first. max_range is a distance in meters, either
    shared or one per ray.
    """
    origins = np.atleast_2d(np.asarray(origins, dtype=float))
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    n = grid.resolution
    size = grid.voxel_size
    count = len(directions)
    steps = 3 * n + 3

    o = grid.world_to_grid(origins) / size
    d = grid.origin.rotation.inv().apply(directions).reshape(-1, 3) / size

    moving = np.abs(d) > 1e-15
    safe_d = np.where(moving, d, 1.0)
    t_low = np.where(moving, np.minimum(-o / safe_d, (n - o) / safe_d),
                     np.where((o >= 0) & (o <= n), -np.inf, np.inf))
    t_high = np.where(moving, np.maximum(-o / safe_d, (n - o) / safe_d),
                      np.where((o >= 0) & (o <= n), np.inf, -np.inf))
    t_enter = np.maximum(t_low.max(axis=1), 0.0)
    t_exit = np.minimum(t_high.min(axis=1), max_range)
    active = t_enter < t_exit

    start = o + (t_enter + 1e-9 * size)[:, None] * d
    current = np.clip(np.floor(np.where(active[:, None], start, 0.0)), 0, n - 1).astype(np.int64)
    step = np.sign(d).astype(np.int64) * moving
    boundary = current + (step > 0)
    t_next = np.where(moving, (boundary - o) / safe_d, np.inf)
    t_delta = np.where(moving, 1.0 / np.abs(safe_d), np.inf)

    indices = np.zeros((count, steps, 3), dtype=np.int64)
    entry = np.zeros((count, steps))
    mask = np.zeros((count, steps), dtype=bool)
    t_current = t_enter.copy()
    rows = np.arange(count)

    for s in range(steps):
        active &= (t_current < t_exit) & np.all((current >= 0) & (current < n), axis=1)
        if not active.any():
            break
        indices[:, s] = current
        entry[:, s] = t_current
        mask[:, s] = active
        axis = np.argmin(t_next, axis=1)
        t_current = t_next[rows, axis].copy()
        current[rows, axis] += step[rows, axis]
        t_next[rows, axis] += t_delta[rows, axis]

    return RayWalk(indices, entry, mask)


def traverse_ray(grid: TsdfGrid, origin: np.ndarray, direction: np.ndarray,
                 max_range: float = np.inf) -> List[Tuple[Tuple[int, int, int], VoxelState]]:
    """
    Ordered voxels pierced by one ray, with their states.

    Raises:
        ValueError: If direction is not a unit vector
    """
    direction = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
        raise ValueError(f"Ray direction must be normalized, got norm {np.linalg.norm(direction)}")
    walk = traverse_rays(grid, origin, direction, max_range)
    visited = walk.indices[0][walk.mask[0]]
    states = grid.state_at(visited)
    return [(tuple(int(i) for i in index), VoxelState(int(state))) for index, state in zip(visited, states)]


def surface_points(grid: TsdfGrid) -> Tuple[np.ndarray, np.ndarray]:
    """
    Zero crossings between axis-adjacent observed voxels of opposite sign.

    Points are linearly interpolated between the two voxel centres; normals are the smoothed
    gradients interpolated to the crossing, kept only where both neighbourhoods are observed.

    Returns:
        Tuple of world points (M, 3) and unit outward normals (M, 3)
    """
    observed = grid.weights > 0
    gradient, gradient_valid = grid.gradients()
    n = grid.resolution
    all_points = []
    all_normals = []

    for axis in range(3):
        head = [slice(None)] * 3
        tail = [slice(None)] * 3
        head[axis] = slice(0, n - 1)
        tail[axis] = slice(1, n)
        head, tail = tuple(head), tuple(tail)

        v0, v1 = grid.values[head], grid.values[tail]
        crossing = observed[head] & observed[tail] & ((v0 >= 0) != (v1 >= 0))
        crossing &= gradient_valid[head] & gradient_valid[tail]
        idx = np.argwhere(crossing)
        if len(idx) == 0:
            continue

        a = v0[crossing]
        b = v1[crossing]
        fraction = a / (a - b)
        offset = np.zeros((len(idx), 3))
        offset[:, axis] = fraction
        points = grid.origin.apply((idx + 0.5 + offset) * grid.voxel_size)

        other = idx.copy()
        other[:, axis] += 1
        g0 = gradient[idx[:, 0], idx[:, 1], idx[:, 2]]
        g1 = gradient[other[:, 0], other[:, 1], other[:, 2]]
        normals = (1.0 - fraction)[:, None] * g0 + fraction[:, None] * g1
        norms = np.linalg.norm(normals, axis=1)
        keep = norms > 1e-12
        all_points.append(points[keep])
        all_normals.append(normals[keep] / norms[keep, None])

    if not all_points:
        return np.zeros((0, 3)), np.zeros((0, 3))
    return np.vstack(all_points), np.vstack(all_normals)


def save_grid(grid: TsdfGrid, file_path: str) -> None:
    """
    Write a text dump: a `# tsdf {metadata}` header, then `i j k value weight` per observed voxel.
    """
    header = {
        "side_length": grid.config.side_length,
        "resolution": grid.config.resolution,
        "truncation_voxels": grid.config.truncation_voxels,
        "max_weight": grid.config.max_weight,
        "origin": grid.origin.to_dict(),
    }
    write_text_file(file_path, GRID_DUMP_HEADER + json.dumps(header) + "\n" + _voxel_rows(grid, grid.values))


def _voxel_rows(grid: TsdfGrid, values: np.ndarray) -> str:
    observed = np.argwhere(grid.weights > 0)
    table = np.column_stack([observed, values[tuple(observed.T)], grid.weights[tuple(observed.T)]])
    buffer = io.StringIO()
    np.savetxt(buffer, table, fmt=["%d", "%d", "%d", "%.17g", "%.17g"])
    return buffer.getvalue()


def load_grid(file_path: str) -> TsdfGrid:
    """
    Read a grid written by save_grid.

    Raises:
        FileNotFoundError: If the file doesn't exist
        ValueError: If the header or a voxel row is malformed
    """
    text = read_text_file(file_path)
    first = text.split("\n", 1)[0]
    if not first.startswith(GRID_DUMP_HEADER):
        raise ValueError(f"{file_path}:1: missing '{GRID_DUMP_HEADER.strip()}' header")
    try:
        header = json.loads(first[len(GRID_DUMP_HEADER):])
        grid = TsdfGrid(TsdfConfig(float(header["side_length"]), int(header["resolution"]),
                                   float(header["truncation_voxels"]), float(header["max_weight"])),
                        Pose.from_dict(header["origin"]))
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise ValueError(f"{file_path}:1: invalid header: {e}") from e

    rows = np.loadtxt(io.StringIO(text), comments="#", ndmin=2)
    if rows.size == 0:
        return grid
    if rows.shape[1] != 5:
        raise ValueError(f"{file_path}: expected 5 columns per voxel row, got {rows.shape[1]}")
    idx = rows[:, :3].astype(np.int64)
    if not np.all(grid.in_bounds(idx)):
        raise ValueError(f"{file_path}: voxel index out of bounds")
    grid.values[tuple(idx.T)] = rows[:, 3]
    grid.weights[tuple(idx.T)] = rows[:, 4]
    return grid
