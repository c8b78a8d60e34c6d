"""
Grasp detection for nbv-grasp-sim

A geometric antipodal detector that fills voxel-wise quality / orientation / width fields
from a TSDF map, plus the bounding-box and reachability filters and best-grasp selection.
"""

import io
import json
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from . import config
from .geometry import Aabb, Pose, normalize
from .nbv import ReachabilityModel, is_reachable
from .tsdf import TsdfGrid, VoxelState, surface_points, traverse_rays
from .utils.file_io import write_text_file

logger = logging.getLogger(__name__)

FIELD_DUMP_HEADER = "# grasp_field "


@dataclass(frozen=True)
class GripperModel:
    """Parallel-jaw gripper; finger_dims is (width, thickness, length) in meters."""

    max_width: float = config.GRIPPER_MAX_WIDTH
    finger_dims: Tuple[float, float, float] = (config.FINGER_WIDTH, config.FINGER_THICKNESS, config.FINGER_LENGTH)
    approach_clearance: float = config.APPROACH_CLEARANCE

    def __post_init__(self):
        object.__setattr__(self, "finger_dims", tuple(float(d) for d in self.finger_dims))
        if self.max_width <= 0 or self.approach_clearance <= 0 or len(self.finger_dims) != 3 \
                or any(d <= 0 for d in self.finger_dims):
            raise ValueError(f"Gripper dimensions must be positive, got max_width={self.max_width}, "
                             f"finger_dims={self.finger_dims}, approach_clearance={self.approach_clearance}")

    @property
    def jaw_limit(self) -> float:
        """Outer face of a fully opened finger along the closing axis."""
        return 0.5 * self.max_width + self.finger_dims[1]

    def finger_boxes(self, inner_left: float, inner_right: float) -> List[Tuple[np.ndarray, np.ndarray]]:
        """
        Finger volumes in the grasp frame, swept from fully open to the inner faces.

        The left finger spans y in [-jaw_limit, inner_left] and the right finger
        [inner_right, jaw_limit]. Along the approach axis a finger reaches half its width past
        the fingertip and its length plus the approach clearance behind it.
        """
        width, _, length = self.finger_dims
        z_low = -(length - 0.5 * width + self.approach_clearance)
        z_high = 0.5 * width
        return [
            (np.array([-0.5 * width, -self.jaw_limit, z_low]), np.array([0.5 * width, inner_left, z_high])),
            (np.array([-0.5 * width, inner_right, z_low]), np.array([0.5 * width, self.jaw_limit, z_high])),
        ]


@dataclass(frozen=True)
class DetectorConfig:
    q_floor: float = config.GRASP_QUALITY_FLOOR
    nms_radius: float = config.GRASP_NMS_RADIUS
    max_closing_tilt_deg: float = config.MAX_CLOSING_TILT_DEG
    approach_angles_deg: Tuple[float, ...] = (0.0, 30.0, -30.0, 60.0, -60.0, 90.0, -90.0)
    free_threshold: float = 0.125

    def __post_init__(self):
        object.__setattr__(self, "approach_angles_deg", tuple(float(a) for a in self.approach_angles_deg))
        if not 0 <= self.q_floor <= 1:
            raise ValueError(f"q_floor must lie in [0, 1], got {self.q_floor}")
        if self.nms_radius < 0:
            raise ValueError(f"nms_radius must be non-negative, got {self.nms_radius}")
        if not self.approach_angles_deg:
            raise ValueError("At least one approach angle is required")


@dataclass(eq=False)
class GraspField:
    """Per-voxel grasp outputs; `center` holds the exact grasp centre of each valid voxel."""

    quality: np.ndarray
    orientation: np.ndarray
    width: np.ndarray
    valid: np.ndarray
    center: np.ndarray

    @classmethod
    def empty(cls, resolution: int) -> "GraspField":
        shape = (resolution,) * 3
        orientation = np.zeros(shape + (4,))
        orientation[..., 3] = 1.0
        return cls(np.zeros(shape), orientation, np.zeros(shape), np.zeros(shape, dtype=bool), np.zeros(shape + (3,)))

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.quality.shape

    def valid_count(self) -> int:
        return int(np.count_nonzero(self.valid))


@dataclass(frozen=True, eq=False)
class GraspCandidate:
    """
    Parallel-jaw grasp: origin midway between the fingertips, closing axis local y,
    approach axis local z. `voxel` is the linear (C-order) index into the field.
    """

    pose: Pose
    width: float
    quality: float
    voxel: int

    def fingertips(self) -> np.ndarray:
        return self.pose.apply(np.array([[0.0, -0.5 * self.width, 0.0], [0.0, 0.5 * self.width, 0.0]]))

    def to_dict(self) -> dict:
        return {"pose": self.pose.to_dict(), "width": float(self.width),
                "quality": float(self.quality), "voxel": int(self.voxel)}


def _approach_directions(closing: np.ndarray, angles_deg: Sequence[float]) -> np.ndarray:
    """(A, M, 3) approach axes: the most downward direction orthogonal to each closing axis,
    rotated about that axis by each angle in turn."""
    down = np.array([0.0, 0.0, -1.0])
    base = normalize(down - (closing @ down)[:, None] * closing)
    directions = []
    for angle in angles_deg:
        rotation = Rotation.from_rotvec(np.radians(angle) * closing)
        directions.append(rotation.apply(base))
    return np.stack(directions)


def _finger_samples(gripper: GripperModel, widths: np.ndarray, voxel_size: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Lattice of finger-volume sample points in each grasp frame.

    The inner finger faces start 1.5 voxels outside the contacts so the object's own
    surface band is not sampled.

    Returns:
        Local points (M, S, 3) and a mask (M, S) of samples inside a non-empty finger box
    """
    width = gripper.finger_dims[0]
    (lower, upper), _ = gripper.finger_boxes(0.0, 0.0)
    xs = np.linspace(lower[0], upper[0], max(2, int(np.ceil(width / voxel_size)) + 1))
    zs = np.linspace(lower[2], upper[2], max(2, int(np.ceil((upper[2] - lower[2]) / voxel_size)) + 1))
    y_count = max(2, int(np.ceil(gripper.jaw_limit / voxel_size)) + 1)

    inner = 0.5 * widths + 1.5 * voxel_size
    fraction = np.linspace(0.0, 1.0, y_count)
    ys = inner[:, None] + fraction[None, :] * (gripper.jaw_limit - inner)[:, None]
    nonempty = inner < gripper.jaw_limit

    x_grid, k_grid, z_grid = np.meshgrid(xs, np.arange(y_count), zs, indexing="ij")
    x_flat, k_flat, z_flat = x_grid.ravel(), k_grid.ravel(), z_grid.ravel()
    half = ys[:, k_flat]
    right = np.stack([np.broadcast_to(x_flat, half.shape), half, np.broadcast_to(z_flat, half.shape)], axis=-1)
    left = right * np.array([1.0, -1.0, 1.0])
    points = np.concatenate([left, right], axis=1)
    mask = np.repeat(nonempty[:, None], points.shape[1], axis=1)
    return points, mask


def _blocked(grid: TsdfGrid, points: np.ndarray, threshold: float) -> np.ndarray:
    """Samples in occupied voxels or observed free voxels within the near-surface band."""
    idx = grid.world_to_index(points.reshape(-1, 3))
    inside = grid.in_bounds(idx)
    clipped = np.clip(idx, 0, grid.resolution - 1)
    states = grid.states()[clipped[:, 0], clipped[:, 1], clipped[:, 2]]
    values = grid.values[clipped[:, 0], clipped[:, 1], clipped[:, 2]]
    blocked = (states == VoxelState.NEGATIVE_OBSERVED) | ((states == VoxelState.FREE_OBSERVED) & (values < threshold))
    return (blocked & inside).reshape(points.shape[:-1])


def _opposing_contacts(grid: TsdfGrid, points: np.ndarray, normals: np.ndarray, max_width: float,
                       gradient: np.ndarray, gradient_valid: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Walk inwards from each surface point to the far side of the object.

    The walk skips the leading non-negative voxels, crosses the NegativeObserved run and
    stops at the next voxel. An observed free voxel gives a measured contact at the
    interpolated crossing with its own normal; an Unknown voxel gives a hypothesised
    contact at its entry with the mirrored normal.

    Returns:
        widths (M,), far-side normals (M, 3) and a validity mask (M,)
    """
    count = len(points)
    inward = -normals
    walk = traverse_rays(grid, points, inward, max_width + 2.0 * grid.voxel_size)
    states = grid.state_at(walk.indices)
    states = np.where(walk.mask, states, -1)
    steps = np.arange(states.shape[1])

    negative = states == VoxelState.NEGATIVE_OBSERVED
    has_negative = negative.any(axis=1)
    first_negative = np.argmax(negative, axis=1)
    after_run = (~negative) & (steps[None, :] > first_negative[:, None])
    has_end = after_run.any(axis=1)
    end = np.argmax(after_run, axis=1)

    rows = np.arange(count)
    end_state = states[rows, end]
    valid = has_negative & has_end & (end_state != -1)

    last_negative = np.maximum(end - 1, 0)
    neg_idx = walk.indices[rows, last_negative]
    end_idx = walk.indices[rows, end]
    neg_center = grid.index_to_world(neg_idx)
    end_center = grid.index_to_world(end_idx)
    t_neg = np.einsum("ij,ij->i", neg_center - points, inward)
    t_end = np.einsum("ij,ij->i", end_center - points, inward)
    v_neg = grid.values[tuple(np.clip(neg_idx, 0, grid.resolution - 1).T)]
    v_end = grid.values[tuple(np.clip(end_idx, 0, grid.resolution - 1).T)]

    measured = valid & (end_state == VoxelState.FREE_OBSERVED)
    denominator = v_neg - v_end
    ratio = np.divide(v_neg, denominator, out=np.zeros(count), where=measured & (np.abs(denominator) > 1e-12))
    crossing = t_neg + (t_end - t_neg) * ratio
    widths = np.where(measured, crossing, walk.entry[rows, end])

    neg_c = tuple(np.clip(neg_idx, 0, grid.resolution - 1).T)
    end_c = tuple(np.clip(end_idx, 0, grid.resolution - 1).T)
    fraction = np.clip(ratio, 0.0, 1.0)[:, None]
    far_gradient = (1.0 - fraction) * gradient[neg_c] + fraction * gradient[end_c]
    gradient_ok = measured & gradient_valid[neg_c] & gradient_valid[end_c] & \
        (np.linalg.norm(far_gradient, axis=1) > 1e-12)
    far_normals = np.where(gradient_ok[:, None], normalize(far_gradient), normals * -1.0)

    valid &= (widths > 0) & (widths <= max_width)
    return widths, far_normals, valid


def _contact_flatness(grid: TsdfGrid, points: np.ndarray, normals: np.ndarray,
                      gradient: np.ndarray, gradient_valid: np.ndarray) -> np.ndarray:
    """
    Smallest cosine between each contact normal and the map gradient one voxel away along
    both tangent directions. Unobserved neighbours do not lower the score.
    """
    helper = np.where(np.abs(normals[:, 2:3]) < 0.9, np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]))
    first = normalize(np.cross(normals, helper))
    second = np.cross(normals, first)
    flatness = np.ones(len(points))
    for tangent in (first, -first, second, -second):
        idx = grid.world_to_index(points + grid.voxel_size * tangent)
        usable = grid.in_bounds(idx)
        clipped = tuple(np.clip(idx, 0, grid.resolution - 1).T)
        neighbour = gradient[clipped]
        usable &= gradient_valid[clipped] & (np.linalg.norm(neighbour, axis=1) > 1e-12)
        cosine = np.einsum("ij,ij->i", normals, normalize(neighbour))
        flatness = np.where(usable, np.minimum(flatness, np.maximum(cosine, 0.0)), flatness)
    return flatness


def closing_visibility(grid: TsdfGrid, points: np.ndarray, normals: np.ndarray, span: float) -> np.ndarray:
    """
    Observed fraction of the voxels on the segment of length `span` running inward from each
    contact along its closing axis; 0 where the segment misses the grid.
    """
    walk = traverse_rays(grid, points, -normals, span)
    observed = (grid.state_at(walk.indices) != VoxelState.UNKNOWN) & walk.mask
    visited = walk.mask.sum(axis=1)
    return np.where(visited > 0, observed.sum(axis=1) / np.maximum(visited, 1), 0.0)


def predict_grasp_field(grid: TsdfGrid, gripper: GripperModel, detector: Optional[DetectorConfig] = None,
                        roi: Optional[Aabb] = None) -> GraspField:
    """
    Fill the grasp field from the surface of the map.

    Every surface point (inside `roi` when given) whose normal is within the closing-axis
    tilt limit proposes a grasp closing along that normal. The proposal lands in the voxel
    containing its grasp centre; each voxel keeps its best proposal.

    Args:
        grid: Map snapshot
        gripper: Gripper geometry
        detector: Detector thresholds, defaults to DetectorConfig()
        roi: Optional region; surface points outside it are ignored

    Returns:
        GraspField: quality = q_antipodal · q_clearance · q_visibility, with q_antipodal
        discounted by the flatness of the map around the first contact
    """
    detector = detector or DetectorConfig()
    result = GraspField.empty(grid.resolution)
    points, normals = surface_points(grid)
    if roi is not None and len(points):
        inside = roi.contains(points)
        points, normals = points[inside], normals[inside]
    if len(points):
        horizontal = np.abs(normals[:, 2]) <= np.sin(np.radians(detector.max_closing_tilt_deg)) + 1e-12
        points, normals = points[horizontal], normals[horizontal]
    if len(points) == 0:
        return result

    gradient, gradient_valid = grid.gradients()
    widths, far_normals, valid = _opposing_contacts(grid, points, normals, gripper.max_width,
                                                    gradient, gradient_valid)
    points, normals, widths, far_normals = points[valid], normals[valid], widths[valid], far_normals[valid]
    centers = points - 0.5 * widths[:, None] * normals
    voxels = grid.world_to_index(centers)
    inside = grid.in_bounds(voxels)
    points, normals, widths, far_normals = points[inside], normals[inside], widths[inside], far_normals[inside]
    centers, voxels = centers[inside], voxels[inside]
    count = len(points)
    if count == 0:
        return result

    q_antipodal = np.maximum(0.0, -np.einsum("ij,ij->i", normals, far_normals))
    q_antipodal *= _contact_flatness(grid, points, normals, gradient, gradient_valid)

    local, sample_mask = _finger_samples(gripper, widths, grid.voxel_size)
    approaches = _approach_directions(normals, detector.approach_angles_deg)
    chosen = np.full(count, -1)
    for a, approach in enumerate(approaches):
        pending = chosen < 0
        if not pending.any():
            break
        x_axis = np.cross(normals, approach)
        world = (centers[:, None, :] + local[..., 0:1] * x_axis[:, None, :]
                 + local[..., 1:2] * normals[:, None, :] + local[..., 2:3] * approach[:, None, :])
        clear = ~np.any(_blocked(grid, world, detector.free_threshold) & sample_mask, axis=1)
        chosen[pending & clear] = a
    q_clearance = (chosen >= 0).astype(float)
    approach = approaches[np.maximum(chosen, 0), np.arange(count)]

    q_visibility = closing_visibility(grid, points, normals, gripper.max_width)

    quality = q_antipodal * q_clearance * q_visibility
    linear = np.ravel_multi_index(tuple(voxels.T), grid.values.shape)
    order = np.lexsort((np.arange(count), -quality))
    _, first = np.unique(linear[order], return_index=True)
    best = order[first]

    x_axis = np.cross(normals[best], approach[best])
    rotations = Rotation.from_matrix(np.stack([x_axis, normals[best], approach[best]], axis=-1))
    target = tuple(voxels[best].T)
    result.quality[target] = quality[best]
    result.orientation[target] = rotations.as_quat()
    result.width[target] = widths[best]
    result.valid[target] = True
    result.center[target] = centers[best]

    logger.debug(f"Grasp field: {count} proposals, {len(best)} valid voxels, "
                 f"max Q {float(quality.max()):.3f}")
    return result


def filter_candidates(grasp_field: GraspField, bbox: Aabb, reach: ReachabilityModel, gripper: GripperModel,
                      q_floor: float = config.GRASP_QUALITY_FLOOR,
                      nms_radius: float = config.GRASP_NMS_RADIUS) -> List[GraspCandidate]:
    """
    Grasps on the target, best first.

    Keeps voxels with Q ≥ q_floor whose two fingertips lie inside `bbox` (closed) and whose
    pose is reachable, then suppresses any grasp within `nms_radius` voxels of a better one.
    Ties in Q are broken by the lower linear voxel index.
    """
    candidates_idx = np.argwhere(grasp_field.valid & (grasp_field.quality >= q_floor))
    if len(candidates_idx) == 0:
        return []
    target = tuple(candidates_idx.T)
    quality = grasp_field.quality[target]
    width = grasp_field.width[target]
    center = grasp_field.center[target]
    rotations = Rotation.from_quat(grasp_field.orientation[target])
    closing = rotations.apply(np.array([0.0, 1.0, 0.0]))
    tips_low = center - 0.5 * width[:, None] * closing
    tips_high = center + 0.5 * width[:, None] * closing
    keep = bbox.contains(tips_low) & bbox.contains(tips_high)

    linear = np.ravel_multi_index(target, grasp_field.shape)
    order = [i for i in np.lexsort((linear, -quality)) if keep[i]]

    kept: List[int] = []
    for i in order:
        pose = Pose(rotations[int(i)], center[i])
        if not is_reachable(reach, pose):
            continue
        if kept and np.min(np.linalg.norm(candidates_idx[kept] - candidates_idx[i], axis=1)) <= nms_radius:
            continue
        kept.append(int(i))

    return [GraspCandidate(Pose(rotations[i], center[i]), float(width[i]), float(quality[i]), int(linear[i]))
            for i in kept]


def best_grasp(candidates: List[GraspCandidate]) -> Optional[GraspCandidate]:
    return candidates[0] if candidates else None


def save_field(grasp_field: GraspField, file_path: str) -> None:
    """
    Debug dump: a `# grasp_field {metadata}` header, then
    `i j k quality width qx qy qz qw cx cy cz` per valid voxel.
    """
    idx = np.argwhere(grasp_field.valid)
    target = tuple(idx.T)
    table = np.column_stack([idx, grasp_field.quality[target], grasp_field.width[target],
                             grasp_field.orientation[target], grasp_field.center[target]])
    buffer = io.StringIO()
    np.savetxt(buffer, table, fmt=["%d"] * 3 + ["%.17g"] * 9)
    header = FIELD_DUMP_HEADER + json.dumps({"resolution": int(grasp_field.shape[0]), "valid": len(idx)}) + "\n"
    write_text_file(file_path, header + buffer.getvalue())
