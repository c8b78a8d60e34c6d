import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from src.geometry import (Aabb, Pose, Primitive, Shape, angle_between, box_in_frame, primitives_intersect,
                          rotation_from_axes)


class TestPose:
    """Rigid transforms with scalar-last quaternions."""

    def setup_method(self):
        self.rng = np.random.default_rng(3)
        self.poses = [Pose(Rotation.from_quat(self.rng.normal(size=4)), self.rng.normal(size=3)) for _ in range(5)]

    def test_quaternion_is_unit(self):
        for pose in self.poses:
            assert abs(np.linalg.norm(pose.quat) - 1.0) < 1e-9

    def test_group_axioms(self):
        a, b, c = self.poses[:3]
        assert ((a * b) * c).isclose(a * (b * c))
        assert (a * a.inverse()).isclose(Pose.identity())
        assert (a.inverse() * a).isclose(Pose.identity())
        assert (a * Pose.identity()).isclose(a)

    def test_apply_matches_matrix(self):
        pose = self.poses[0]
        points = self.rng.normal(size=(4, 3))
        homogeneous = np.column_stack([points, np.ones(4)]) @ pose.as_matrix().T
        assert np.allclose(pose.apply(points), homogeneous[:, :3])
        assert Pose.from_matrix(pose.as_matrix()).isclose(pose)

    def test_dict_round_trip(self):
        pose = self.poses[1]
        assert Pose.from_dict(pose.to_dict()).isclose(pose, atol=1e-12)

    def test_look_at_points_optical_axis_at_target(self):
        pose = Pose.look_at([0.3, -0.2, 0.5], [0.0, 0.1, 0.0])
        expected = np.array([-0.3, 0.3, -0.5]) / np.linalg.norm([-0.3, 0.3, -0.5])
        assert np.allclose(pose.axis(2), expected)
        assert np.isclose(np.linalg.det(pose.rotation.as_matrix()), 1.0)

    def test_look_at_straight_down_uses_fallback_up(self):
        pose = Pose.look_at([0.0, 0.0, 1.0], [0.0, 0.0, 0.0])
        assert np.allclose(pose.axis(0), [1.0, 0.0, 0.0])
        assert np.allclose(pose.axis(1), [0.0, -1.0, 0.0])
        assert np.allclose(pose.axis(2), [0.0, 0.0, -1.0])

    def test_look_at_rejects_coincident_points(self):
        with pytest.raises(ValueError, match="distinct eye and target"):
            Pose.look_at([1.0, 1.0, 1.0], [1.0, 1.0, 1.0])

    def test_non_finite_translation_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            Pose(Rotation.identity(), [np.nan, 0.0, 0.0])


class TestAabb:
    def test_invalid_corners(self):
        with pytest.raises(ValueError, match="exceeds max corner"):
            Aabb([0.0, 1.0, 0.0], [1.0, 0.0, 1.0])

    def test_closed_containment(self):
        box = Aabb(np.zeros(3), np.ones(3))
        inside = box.contains(np.array([[1.0, 0.5, 0.0], [0.5, 0.5, 0.5], [1.0 + 1e-12, 0.5, 0.5]]))
        assert inside.tolist() == [True, True, False]

    def test_derived_quantities(self):
        box = Aabb([0.0, 0.0, 0.0], [1.0, 1.0, 1.0])
        assert box.half_diagonal == pytest.approx(np.sqrt(3) / 2)
        assert np.allclose(box.top_center, [0.5, 0.5, 1.0])
        assert np.allclose(box.padded(0.1).min_corner, [-0.1, -0.1, -0.1])
        assert len(box.corners()) == 8


class TestPrimitive:
    """Analytic ray intersection, normals and distances."""

    def setup_method(self):
        self.origin = Pose.identity()

    def test_invalid_dimensions(self):
        with pytest.raises(ValueError, match="must be positive"):
            Primitive.box([0.1, -0.1, 0.1], self.origin)
        with pytest.raises(ValueError, match="expects 2 dimensions"):
            Primitive(Shape.CYLINDER, (0.1,), self.origin)

    def test_sphere_interval(self):
        sphere = Primitive.sphere(1.0, self.origin)
        t_in, t_out = sphere.line_interval([[0.0, 0.0, 2.0]], [[0.0, 0.0, -1.0]])
        assert t_in[0] == pytest.approx(1.0)
        assert t_out[0] == pytest.approx(3.0)

    def test_box_interval(self):
        box = Primitive.box([0.5, 0.5, 0.5], self.origin)
        t_in, t_out = box.line_interval([[-2.0, 0.0, 0.0]], [[1.0, 0.0, 0.0]])
        assert (t_in[0], t_out[0]) == pytest.approx((1.5, 2.5))

    def test_rotated_box_hit(self):
        yawed = Pose(Rotation.from_euler("z", 45, degrees=True), np.zeros(3))
        box = Primitive.box([0.5, 0.5, 0.5], yawed)
        hits = box.ray_hits(np.array([[-2.0, 0.0, 0.0]]), np.array([[1.0, 0.0, 0.0]]))
        assert hits[0] == pytest.approx(2.0 - 0.5 * np.sqrt(2.0))

    def test_cylinder_cap_and_side(self):
        cylinder = Primitive.cylinder(0.5, 1.0, self.origin)
        t_in, t_out = cylinder.line_interval(np.array([[0.0, 0.0, 3.0], [-2.0, 0.0, 0.0], [-2.0, 0.0, 0.6]]),
                                             np.array([[0.0, 0.0, -1.0], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]))
        assert (t_in[0], t_out[0]) == pytest.approx((2.5, 3.5))
        assert (t_in[1], t_out[1]) == pytest.approx((1.5, 2.5))
        assert np.isnan(t_in[2]) and np.isnan(t_out[2])

    def test_miss_is_infinite(self):
        sphere = Primitive.sphere(0.1, self.origin)
        assert np.isinf(sphere.ray_hits(np.array([[0.0, 1.0, 2.0]]), np.array([[0.0, 0.0, -1.0]]))[0])

    def test_ray_hits_from_inside_uses_exit(self):
        sphere = Primitive.sphere(1.0, self.origin)
        assert sphere.ray_hits(np.zeros((1, 3)), np.array([[1.0, 0.0, 0.0]]))[0] == pytest.approx(1.0)

    def test_normals(self):
        box = Primitive.box([0.5, 0.5, 0.5], self.origin)
        cylinder = Primitive.cylinder(0.5, 1.0, self.origin)
        sphere = Primitive.sphere(1.0, self.origin)
        assert np.allclose(box.normals([[0.5, 0.1, -0.2]]), [[1.0, 0.0, 0.0]])
        assert np.allclose(cylinder.normals([[0.5, 0.0, 0.0]]), [[1.0, 0.0, 0.0]])
        assert np.allclose(cylinder.normals([[0.1, 0.0, 0.5]]), [[0.0, 0.0, 1.0]])
        assert np.allclose(sphere.normals([[0.0, 0.0, 1.0]]), [[0.0, 0.0, 1.0]])

    def test_signed_distance(self):
        box = Primitive.box([0.5, 0.5, 0.5], self.origin)
        sphere = Primitive.sphere(1.0, self.origin)
        assert box.signed_distance([[0.0, 0.0, 0.0]])[0] == pytest.approx(-0.5)
        assert box.signed_distance([[1.5, 0.0, 0.0]])[0] == pytest.approx(1.0)
        assert sphere.signed_distance([[0.0, 0.0, 3.0]])[0] == pytest.approx(2.0)

    def test_cylinder_aabb(self):
        cylinder = Primitive.cylinder(0.5, 1.0, Pose.from_quat_pos([0, 0, 0, 1], [1.0, 2.0, 3.0]))
        bounds = cylinder.aabb()
        assert np.allclose(bounds.min_corner, [0.5, 1.5, 2.5])
        assert np.allclose(bounds.max_corner, [1.5, 2.5, 3.5])

    def test_dict_round_trip(self):
        box = Primitive.box([0.01, 0.02, 0.03], Pose.from_quat_pos([0, 0, 0, 1], [0.1, 0.2, 0.3]), 4)
        restored = Primitive.from_dict(box.to_dict())
        assert restored.shape is Shape.BOX and restored.id == 4
        assert restored.dims == box.dims
        assert restored.pose.isclose(box.pose, atol=0.0)


class TestIntersection:
    """Overlap tests between primitives."""

    def at(self, x: float, yaw_deg: float = 0.0) -> Pose:
        return Pose(Rotation.from_euler("z", yaw_deg, degrees=True), np.array([x, 0.0, 0.0]))

    def test_sphere_pair_with_margin(self):
        a = Primitive.sphere(1.0, self.at(0.0))
        b = Primitive.sphere(1.0, self.at(2.5))
        assert not primitives_intersect(a, b)
        assert primitives_intersect(a, b, margin=0.6)

    def test_sphere_against_box(self):
        box = Primitive.box([0.5, 0.5, 0.5], self.at(0.0))
        assert primitives_intersect(Primitive.sphere(0.2, self.at(0.65)), box)
        assert not primitives_intersect(Primitive.sphere(0.2, self.at(0.75)), box)

    def test_boxes_separating_axis(self):
        a = Primitive.box([0.5, 0.5, 0.5], self.at(0.0))
        assert not primitives_intersect(a, Primitive.box([0.5, 0.5, 0.5], self.at(1.1)))
        assert primitives_intersect(a, Primitive.box([0.5, 0.5, 0.5], self.at(0.9)))
        assert primitives_intersect(a, Primitive.box([0.5, 0.5, 0.5], self.at(1.1, 45.0)))
        assert not primitives_intersect(a, Primitive.box([0.5, 0.5, 0.5], self.at(1.3, 45.0)))

    def test_cylinder_against_box(self):
        box = Primitive.box([0.5, 0.5, 0.5], self.at(0.0))
        assert not primitives_intersect(Primitive.cylinder(0.5, 1.0, self.at(1.05)), box)
        assert primitives_intersect(Primitive.cylinder(0.5, 1.0, self.at(0.95)), box)


class TestHelpers:
    def test_box_in_frame(self):
        box = box_in_frame(Pose.identity(), [0.0, 0.0, 0.0], [1.0, 2.0, 3.0])
        assert np.allclose(box.center, [0.5, 1.0, 1.5])
        assert box.dims == pytest.approx((0.5, 1.0, 1.5))

    def test_angle_between(self):
        assert angle_between([1, 0, 0], [0, 1, 0]) == pytest.approx(np.pi / 2)
        assert angle_between([1, 0, 0], [-2, 0, 0]) == pytest.approx(np.pi)

    def test_rotation_from_axes(self):
        rotation = rotation_from_axes(np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, -1.0]))
        matrix = rotation.as_matrix()
        assert np.allclose(matrix[:, 1], [1.0, 0.0, 0.0])
        assert np.allclose(matrix[:, 2], [0.0, 0.0, -1.0])
        assert np.isclose(np.linalg.det(matrix), 1.0)
