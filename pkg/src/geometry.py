"""
Geometry primitives for nbv-grasp-sim

Rigid poses, axis-aligned boxes and the analytic solids (box, cylinder, sphere) that make up
the simulated world, with exact ray intersection and overlap tests.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

# Sides of the prism that stands in for a cylinder in separating-axis tests
PRISM_SIDES = 32


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform; quaternions are scalar-last [x, y, z, w] everywhere."""

    rotation: Rotation
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        translation = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(translation)):
            raise ValueError(f"Pose translation must be finite, got {translation}")
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(Rotation.identity(), np.zeros(3))

    @classmethod
    def from_quat_pos(cls, quat: Sequence[float], pos: Sequence[float]) -> "Pose":
        return cls(Rotation.from_quat(np.asarray(quat, dtype=float)), np.asarray(pos, dtype=float))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "Pose":
        matrix = np.asarray(matrix, dtype=float)
        return cls(Rotation.from_matrix(matrix[:3, :3]), matrix[:3, 3])

    @classmethod
    def look_at(cls, eye: Sequence[float], target: Sequence[float],
                up: Sequence[float] = (0.0, 0.0, 1.0)) -> "Pose":
        """
        Camera pose at `eye` whose optical axis (local +z) points at `target`.

        Image x points right and image y points down. When the optical axis is parallel to
        `up`, world +y is used as the up hint instead.
        """
        eye = np.asarray(eye, dtype=float)
        forward = np.asarray(target, dtype=float) - eye
        distance = np.linalg.norm(forward)
        if distance < 1e-12:
            raise ValueError("look_at requires distinct eye and target")
        forward /= distance
        right = np.cross(forward, np.asarray(up, dtype=float))
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        return cls(Rotation.from_matrix(np.column_stack([right, down, forward])), eye)

    @property
    def quat(self) -> np.ndarray:
        return self.rotation.as_quat()

    def as_matrix(self) -> np.ndarray:
        matrix = np.eye(4)
        matrix[:3, :3] = self.rotation.as_matrix()
        matrix[:3, 3] = self.translation
        return matrix

    def __mul__(self, other: "Pose") -> "Pose":
        return Pose(self.rotation * other.rotation,
                    self.rotation.apply(other.translation) + self.translation)

    def inverse(self) -> "Pose":
        inverse_rotation = self.rotation.inv()
        return Pose(inverse_rotation, -inverse_rotation.apply(self.translation))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform points (N, 3) or a single 3-vector."""
        return self.rotation.apply(np.asarray(points, dtype=float)) + self.translation

    def apply_vector(self, vectors: np.ndarray) -> np.ndarray:
        return self.rotation.apply(np.asarray(vectors, dtype=float))

    def axis(self, index: int) -> np.ndarray:
        return self.rotation.as_matrix()[:, index]

    def to_dict(self) -> Dict[str, Any]:
        return {"quat": [float(q) for q in self.quat], "pos": [float(p) for p in self.translation]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Pose":
        return cls.from_quat_pos(data["quat"], data["pos"])

    def isclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.as_matrix(), other.as_matrix(), atol=atol))


@dataclass(frozen=True, eq=False)
class Aabb:
    """Axis-aligned box, closed on all faces."""

    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.min_corner, dtype=float).reshape(3)
        upper = np.asarray(self.max_corner, dtype=float).reshape(3)
        if np.any(lower > upper):
            raise ValueError(f"Aabb min corner {lower} exceeds max corner {upper}")
        object.__setattr__(self, "min_corner", lower)
        object.__setattr__(self, "max_corner", upper)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min_corner + self.max_corner)

    @property
    def size(self) -> np.ndarray:
        return self.max_corner - self.min_corner

    @property
    def half_diagonal(self) -> float:
        return float(0.5 * np.linalg.norm(self.size))

    @property
    def top_center(self) -> np.ndarray:
        center = self.center
        return np.array([center[0], center[1], self.max_corner[2]])

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return np.all((points >= self.min_corner) & (points <= self.max_corner), axis=-1)

    def padded(self, margin: float) -> "Aabb":
        return Aabb(self.min_corner - margin, self.max_corner + margin)

    def corners(self) -> np.ndarray:
        return np.array([[x, y, z]
                         for x in (self.min_corner[0], self.max_corner[0])
                         for y in (self.min_corner[1], self.max_corner[1])
                         for z in (self.min_corner[2], self.max_corner[2])])

    def to_dict(self) -> Dict[str, Any]:
        return {"min": [float(v) for v in self.min_corner], "max": [float(v) for v in self.max_corner]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Aabb":
        return cls(np.asarray(data["min"], dtype=float), np.asarray(data["max"], dtype=float))

    @classmethod
    def from_points(cls, points: np.ndarray) -> "Aabb":
        points = np.asarray(points, dtype=float)
        return cls(points.min(axis=0), points.max(axis=0))


class Shape(str, Enum):
    BOX = "box"
    CYLINDER = "cylinder"
    SPHERE = "sphere"


# Number of dimensions each shape carries: box half-extents, cylinder (radius, height), sphere radius
SHAPE_DIMS = {Shape.BOX: 3, Shape.CYLINDER: 2, Shape.SPHERE: 1}


@dataclass(frozen=True, eq=False)
class Primitive:
    """
    An analytic solid placed by `pose`.

    dims: box half-extents (x, y, z); cylinder (radius, height) with its axis on local z;
    sphere (radius,). The local origin is the centroid.
    """

    shape: Shape
    dims: Tuple[float, ...]
    pose: Pose
    id: int = -1

    def __post_init__(self):
        shape = Shape(self.shape)
        dims = tuple(float(d) for d in self.dims)
        if len(dims) != SHAPE_DIMS[shape]:
            raise ValueError(f"{shape.value} expects {SHAPE_DIMS[shape]} dimensions, got {len(dims)}")
        if any(d <= 0 for d in dims):
            raise ValueError(f"Primitive dimensions must be positive, got {dims}")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "dims", dims)

    @classmethod
    def box(cls, half_extents: Sequence[float], pose: Pose, id: int = -1) -> "Primitive":
        return cls(Shape.BOX, tuple(half_extents), pose, id)

    @classmethod
    def cylinder(cls, radius: float, height: float, pose: Pose, id: int = -1) -> "Primitive":
        return cls(Shape.CYLINDER, (radius, height), pose, id)

    @classmethod
    def sphere(cls, radius: float, pose: Pose, id: int = -1) -> "Primitive":
        return cls(Shape.SPHERE, (radius,), pose, id)

    @property
    def center(self) -> np.ndarray:
        return self.pose.translation

    def with_pose(self, pose: Pose) -> "Primitive":
        return Primitive(self.shape, self.dims, pose, self.id)

    def _to_local(self, points: np.ndarray) -> np.ndarray:
        return self.pose.rotation.inv().apply(np.asarray(points, dtype=float) - self.pose.translation)

    def line_interval(self, origins: np.ndarray, directions: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Parameter interval [t_in, t_out] where each line o + t·d lies inside the solid.

        `directions` must be unit vectors so that t is a distance. Misses are NaN.
        """
        origins = np.atleast_2d(np.asarray(origins, dtype=float))
        directions = np.atleast_2d(np.asarray(directions, dtype=float))
        local_o = self._to_local(origins)
        local_d = self.pose.rotation.inv().apply(directions)
        if local_d.ndim == 1:
            local_d = local_d[None, :]

        if self.shape is Shape.SPHERE:
            radius = self.dims[0]
            b = np.einsum("ij,ij->i", local_o, local_d)
            c = np.einsum("ij,ij->i", local_o, local_o) - radius * radius
            disc = b * b - c
            root = np.sqrt(np.where(disc >= 0, disc, np.nan))
            return -b - root, -b + root

        if self.shape is Shape.BOX:
            lower, upper = _slab_interval(local_o, local_d, np.asarray(self.dims))
            t_in = lower.max(axis=1)
            t_out = upper.min(axis=1)
        else:
            radius, height = self.dims
            lower, upper = _slab_interval(local_o[:, 2:], local_d[:, 2:], np.array([0.5 * height]))
            a = local_d[:, 0] ** 2 + local_d[:, 1] ** 2
            b = local_o[:, 0] * local_d[:, 0] + local_o[:, 1] * local_d[:, 1]
            c = local_o[:, 0] ** 2 + local_o[:, 1] ** 2 - radius * radius
            parallel = a < 1e-15
            safe_a = np.where(parallel, 1.0, a)
            disc = b * b - a * c
            root = np.sqrt(np.where(disc >= 0, disc, 0.0))
            side_in = np.where(parallel, np.where(c <= 0, -np.inf, np.inf), (-b - root) / safe_a)
            side_out = np.where(parallel, np.where(c <= 0, np.inf, -np.inf), (-b + root) / safe_a)
            missed = ~parallel & (disc < 0)
            side_in = np.where(missed, np.inf, side_in)
            side_out = np.where(missed, -np.inf, side_out)
            t_in = np.maximum(side_in, lower[:, 0])
            t_out = np.minimum(side_out, upper[:, 0])

        hit = t_in <= t_out
        return np.where(hit, t_in, np.nan), np.where(hit, t_out, np.nan)

    def ray_hits(self, origins: np.ndarray, directions: np.ndarray) -> np.ndarray:
        """Distance to the first surface hit in front of each ray origin, +inf on a miss."""
        t_in, t_out = self.line_interval(origins, directions)
        hits = np.where(t_in > 0, t_in, np.where(t_out > 0, t_out, np.inf))
        return np.where(np.isnan(hits), np.inf, hits)

    def normals(self, points: np.ndarray) -> np.ndarray:
        """Outward unit normals at surface points (nearest-face rule for boxes and cylinders)."""
        local = np.atleast_2d(self._to_local(points))
        if self.shape is Shape.SPHERE:
            normals = local / np.linalg.norm(local, axis=1, keepdims=True)
        elif self.shape is Shape.BOX:
            ratio = np.abs(local) / np.asarray(self.dims)
            axis = np.argmax(ratio, axis=1)
            normals = np.zeros_like(local)
            rows = np.arange(len(local))
            normals[rows, axis] = np.sign(local[rows, axis])
        else:
            radius, height = self.dims
            rho = np.hypot(local[:, 0], local[:, 1])
            on_cap = np.abs(local[:, 2]) / (0.5 * height) >= rho / radius
            safe_rho = np.where(rho > 0, rho, 1.0)
            normals = np.column_stack([local[:, 0] / safe_rho, local[:, 1] / safe_rho, np.zeros(len(local))])
            normals[on_cap] = np.column_stack([np.zeros(on_cap.sum()), np.zeros(on_cap.sum()),
                                               np.sign(local[on_cap, 2])])
        return self.pose.apply_vector(normals)

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        local = np.atleast_2d(self._to_local(points))
        if self.shape is Shape.SPHERE:
            return np.linalg.norm(local, axis=1) - self.dims[0]
        if self.shape is Shape.BOX:
            q = np.abs(local) - np.asarray(self.dims)
        else:
            radius, height = self.dims
            q = np.column_stack([np.hypot(local[:, 0], local[:, 1]) - radius, np.abs(local[:, 2]) - 0.5 * height])
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return outside + inside

    def aabb(self) -> Aabb:
        """Tight axis-aligned bound under the current pose."""
        center = self.pose.translation
        if self.shape is Shape.SPHERE:
            return Aabb(center - self.dims[0], center + self.dims[0])
        if self.shape is Shape.BOX:
            return Aabb.from_points(self.pose.apply(_box_corners(np.asarray(self.dims))))
        radius, height = self.dims
        axis = self.pose.axis(2)
        extent = np.abs(axis) * 0.5 * height + radius * np.sqrt(np.clip(1.0 - axis * axis, 0.0, 1.0))
        return Aabb(center - extent, center + extent)

    def vertices(self) -> np.ndarray:
        """World vertices of the convex polyhedron used in separating-axis tests."""
        if self.shape is Shape.BOX:
            return self.pose.apply(_box_corners(np.asarray(self.dims)))
        if self.shape is Shape.CYLINDER:
            radius, height = self.dims
            angles = (np.arange(PRISM_SIDES) + 0.5) * 2.0 * np.pi / PRISM_SIDES
            ring = radius / np.cos(np.pi / PRISM_SIDES) * np.column_stack([np.cos(angles), np.sin(angles)])
            bottom = np.column_stack([ring, np.full(PRISM_SIDES, -0.5 * height)])
            top = np.column_stack([ring, np.full(PRISM_SIDES, 0.5 * height)])
            return self.pose.apply(np.vstack([bottom, top]))
        raise ValueError("Spheres have no polyhedral vertices")

    def _face_normals_and_edges(self) -> Tuple[np.ndarray, np.ndarray]:
        if self.shape is Shape.BOX:
            axes = np.eye(3)
            return self.pose.apply_vector(axes), self.pose.apply_vector(axes)
        angles = np.arange(PRISM_SIDES // 2) * 2.0 * np.pi / PRISM_SIDES
        side_normals = np.column_stack([np.cos(angles), np.sin(angles), np.zeros(len(angles))])
        side_edges = np.column_stack([-np.sin(angles), np.cos(angles), np.zeros(len(angles))])
        vertical = np.array([[0.0, 0.0, 1.0]])
        return (self.pose.apply_vector(np.vstack([side_normals, vertical])),
                self.pose.apply_vector(np.vstack([side_edges, vertical])))

    def to_dict(self) -> Dict[str, Any]:
        return {"id": int(self.id), "shape": self.shape.value,
                "dims": [float(d) for d in self.dims], "pose": self.pose.to_dict()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Primitive":
        return cls(Shape(data["shape"]), tuple(data["dims"]), Pose.from_dict(data["pose"]), int(data["id"]))


def _box_corners(half_extents: np.ndarray) -> np.ndarray:
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
    return signs * half_extents


def _slab_interval(origins: np.ndarray, directions: np.ndarray,
                   half_extents: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-axis entry/exit parameters of lines against the slabs |x_i| <= h_i."""
    parallel = np.abs(directions) < 1e-15
    inside = np.abs(origins) <= half_extents
    safe = np.where(parallel, 1.0, directions)
    t1 = (-half_extents - origins) / safe
    t2 = (half_extents - origins) / safe
    lower = np.where(parallel, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
    upper = np.where(parallel, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
    return lower, upper


def _closest_point_distance(primitive: Primitive, point: np.ndarray) -> float:
    """Distance from a point to a solid box or cylinder (0 inside)."""
    local = primitive._to_local(point[None, :])[0]
    if primitive.shape is Shape.BOX:
        clamped = np.clip(local, -np.asarray(primitive.dims), np.asarray(primitive.dims))
    else:
        radius, height = primitive.dims
        rho = np.hypot(local[0], local[1])
        scale = min(1.0, radius / rho) if rho > 0 else 1.0
        clamped = np.array([local[0] * scale, local[1] * scale, np.clip(local[2], -0.5 * height, 0.5 * height)])
    return float(np.linalg.norm(local - clamped))


def primitives_intersect(a: Primitive, b: Primitive, margin: float = 0.0) -> bool:
    """
    True when the solids overlap or come closer than `margin`.

    Sphere pairs are exact via closest points; boxes and cylinders use separating axes,
    cylinders as a circumscribed prism.
    """
    if a.shape is Shape.SPHERE and b.shape is Shape.SPHERE:
        return bool(np.linalg.norm(a.center - b.center) <= a.dims[0] + b.dims[0] + margin)
    if a.shape is Shape.SPHERE or b.shape is Shape.SPHERE:
        sphere, other = (a, b) if a.shape is Shape.SPHERE else (b, a)
        return _closest_point_distance(other, sphere.center) <= sphere.dims[0] + margin

    normals_a, edges_a = a._face_normals_and_edges()
    normals_b, edges_b = b._face_normals_and_edges()
    crosses = np.cross(edges_a[:, None, :], edges_b[None, :, :]).reshape(-1, 3)
    axes = np.vstack([normals_a, normals_b, crosses])
    lengths = np.linalg.norm(axes, axis=1)
    axes = axes[lengths > 1e-9] / lengths[lengths > 1e-9, None]

    proj_a = a.vertices() @ axes.T
    proj_b = b.vertices() @ axes.T
    separated = (proj_a.max(axis=0) + margin < proj_b.min(axis=0)) | \
                (proj_b.max(axis=0) + margin < proj_a.min(axis=0))
    return not bool(np.any(separated))


def box_in_frame(frame: Pose, lower: Sequence[float], upper: Sequence[float]) -> Primitive:
    """Box primitive spanning [lower, upper] in the coordinates of `frame`."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    center_local = 0.5 * (lower + upper)
    return Primitive.box(0.5 * (upper - lower), Pose(frame.rotation, frame.apply(center_local)))


def angle_between(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    cosine = np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v))
    return float(np.arccos(np.clip(cosine, -1.0, 1.0)))


def rotation_from_axes(closing: np.ndarray, approach: np.ndarray) -> Rotation:
    """Gripper rotation with local y along `closing` and local z along `approach`."""
    y_axis = np.asarray(closing, dtype=float)
    z_axis = np.asarray(approach, dtype=float)
    x_axis = np.cross(y_axis, z_axis)
    return Rotation.from_matrix(np.column_stack([x_axis, y_axis, z_axis]))


def normalize(vectors: np.ndarray) -> np.ndarray:
    vectors = np.asarray(vectors, dtype=float)
    norms = np.linalg.norm(vectors, axis=-1, keepdims=True)
    return vectors / np.where(norms > 0, norms, 1.0)
