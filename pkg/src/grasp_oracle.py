"""
Grasp outcome oracle for nbv-grasp-sim

Decides on ground-truth geometry whether a parallel-jaw grasp would lift the target:
antipodal contact within the jaw, contact normals inside the friction cone, and finger
volumes free of the table and of every other object.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from . import config
from .geometry import angle_between, box_in_frame, primitives_intersect
from .grasp_detection import GraspCandidate, GripperModel
from .scene import Scene

logger = logging.getLogger(__name__)


class FailureReason(str, Enum):
    SLIP = "slip"
    COLLISION = "collision"
    WIDTH_EXCEEDED = "width_exceeded"


@dataclass(frozen=True)
class GraspOutcome:
    success: bool
    reason: Optional[FailureReason] = None

    def __post_init__(self):
        if self.success and self.reason is not None:
            raise ValueError("A successful grasp carries no failure reason")
        if not self.success and self.reason is None:
            raise ValueError("A failed grasp must carry a reason")

    @classmethod
    def succeeded(cls) -> "GraspOutcome":
        return cls(True)

    @classmethod
    def failed(cls, reason: FailureReason) -> "GraspOutcome":
        return cls(False, FailureReason(reason))

    @property
    def status(self) -> str:
        return "success" if self.success else "failure"


def execute_grasp(scene: Scene, grasp: GraspCandidate, gripper: GripperModel,
                  friction_cone_deg: float = config.FRICTION_CONE_DEG) -> GraspOutcome:
    """
    Simulate closing the gripper at `grasp` on the scene target.

    Checks run in order and the first violation is reported: the closing line must meet the
    target (slip) within the maximum width (width_exceeded) and inside the opened jaw
    (collision); both contact normals must lie within the friction cone about the closing
    axis (slip); neither finger volume may reach below the table or overlap another object
    (collision).

    Raises:
        ValueError: If the grasp pose is not finite or the scene has no target
    """
    center = grasp.pose.translation
    closing = grasp.pose.axis(1)
    if not np.all(np.isfinite(grasp.pose.quat)):
        raise ValueError("Grasp pose must be finite")
    target = scene.target

    t_in, t_out = target.line_interval(center[None, :], closing[None, :])
    t_in, t_out = float(t_in[0]), float(t_out[0])
    if np.isnan(t_in):
        return GraspOutcome.failed(FailureReason.SLIP)
    if t_out - t_in > gripper.max_width:
        return GraspOutcome.failed(FailureReason.WIDTH_EXCEEDED)
    half_jaw = 0.5 * gripper.max_width
    if t_in < -half_jaw or t_out > half_jaw:
        return GraspOutcome.failed(FailureReason.COLLISION)

    contacts = center + np.outer([t_in, t_out], closing)
    normals = target.normals(contacts)
    cone = np.radians(friction_cone_deg)
    if angle_between(normals[0], -closing) > cone or angle_between(normals[1], closing) > cone:
        return GraspOutcome.failed(FailureReason.SLIP)

    for lower, upper in gripper.finger_boxes(t_in, t_out):
        finger = box_in_frame(grasp.pose, lower, upper)
        if np.any(finger.vertices()[:, 2] < scene.table_height):
            return GraspOutcome.failed(FailureReason.COLLISION)
        if any(primitives_intersect(finger, other) for other in scene.distractors()):
            return GraspOutcome.failed(FailureReason.COLLISION)

    return GraspOutcome.succeeded()
