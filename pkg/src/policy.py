"""
Closed-loop grasp policy for nbv-grasp-sim

Runs the per-tick loop on a simulated clock: fuse the current depth image, predict grasps
on the target, pick the next best view and decide whether to keep exploring, execute the
best grasp or give up. The fixed-camera baselines share the same machinery.
"""

import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Deque, Dict, Iterable, List, Optional, Tuple

import numpy as np

from . import config
from .camera import CameraIntrinsics, render_depth
from .errors import UnreachableViewsError
from .geometry import Aabb, Pose
from .grasp_detection import (DetectorConfig, GraspCandidate, GripperModel, best_grasp, filter_candidates,
                              predict_grasp_field)
from .grasp_oracle import execute_grasp
from .nbv import (ReachabilityModel, ViewCandidate, best_view_position, compute_gains, generate_views,
                  zenith_view)
from .scene import Scene, target_bbox
from .tsdf import TsdfConfig, TsdfGrid, integrate

logger = logging.getLogger(__name__)

TIMING_STAGES = ("integrate", "grasp", "ig", "other")


class PolicyKind(str, Enum):
    NBV_GRASP = "nbv_grasp"
    INITIAL_VIEW = "initial_view"
    TOP_VIEW = "top_view"
    TOP_TRAJECTORY = "top_trajectory"


class TrialStatus(str, Enum):
    SUCCEEDED = "succeeded"
    FAILED_EXECUTION = "failed_execution"
    ABORTED = "aborted"


class AbortReason(str, Enum):
    BUDGET_EXHAUSTED = "budget_exhausted"
    GAIN_BELOW_MIN_NO_GRASP = "gain_below_min_no_grasp"
    UNREACHABLE_VIEWS = "unreachable_views"


@dataclass(frozen=True)
class PolicyConfig:
    policy_kind: PolicyKind = PolicyKind.NBV_GRASP
    tick_rate: float = config.POLICY_RATE
    max_views: int = config.MAX_VIEWS
    gain_min: float = config.GAIN_MIN
    window: int = config.WINDOW_SIZE
    epsilon_mu: float = config.EPSILON_MU
    linear_velocity: float = config.LINEAR_VELOCITY
    min_target_distance: float = config.MIN_TARGET_DISTANCE
    execution_time: float = config.EXECUTION_TIME
    n_views: int = config.VIEW_COUNT
    view_radius: float = config.VIEW_RADIUS
    noise_sigma: float = config.NOISE_SIGMA
    friction_cone_deg: float = config.FRICTION_CONE_DEG
    bbox_margin_voxels: float = 1.0
    sensor: CameraIntrinsics = field(default_factory=CameraIntrinsics.sensor_default)
    ig_camera: CameraIntrinsics = field(default_factory=CameraIntrinsics.ig_default)
    gripper: GripperModel = field(default_factory=GripperModel)
    reach: ReachabilityModel = field(default_factory=ReachabilityModel)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    tsdf: TsdfConfig = field(default_factory=TsdfConfig)

    def __post_init__(self):
        object.__setattr__(self, "policy_kind", PolicyKind(self.policy_kind))
        positive = {"tick_rate": self.tick_rate, "max_views": self.max_views, "window": self.window,
                    "linear_velocity": self.linear_velocity, "min_target_distance": self.min_target_distance,
                    "n_views": self.n_views}
        for name, value in positive.items():
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.gain_min < 0 or self.execution_time < 0 or self.noise_sigma < 0:
            raise ValueError("gain_min, execution_time and noise_sigma must be non-negative")
        if not 0 < self.epsilon_mu <= 1:
            raise ValueError(f"epsilon_mu must lie in (0, 1], got {self.epsilon_mu}")
        if self.window > self.max_views:
            raise ValueError(f"window ({self.window}) must not exceed max_views ({self.max_views})")

    @property
    def dt(self) -> float:
        return 1.0 / self.tick_rate


@dataclass(frozen=True)
class Decision:
    """MoveToward(view), ExecuteGrasp(grasp) or Abort(reason)."""

    kind: str
    view: Optional[ViewCandidate] = None
    grasp: Optional[GraspCandidate] = None
    reason: Optional[AbortReason] = None

    MOVE = "move_toward"
    EXECUTE = "execute_grasp"
    ABORT = "abort"

    def __post_init__(self):
        if self.kind == self.EXECUTE and self.grasp is None:
            raise ValueError("ExecuteGrasp requires a grasp")
        if self.kind == self.MOVE and self.view is None:
            raise ValueError("MoveToward requires a view")
        if self.kind == self.ABORT and self.reason is None:
            raise ValueError("Abort requires a reason")

    @classmethod
    def move_toward(cls, view: ViewCandidate) -> "Decision":
        return cls(cls.MOVE, view=view)

    @classmethod
    def execute(cls, grasp: GraspCandidate) -> "Decision":
        return cls(cls.EXECUTE, grasp=grasp)

    @classmethod
    def abort(cls, reason: AbortReason) -> "Decision":
        return cls(cls.ABORT, reason=AbortReason(reason))

    @property
    def is_terminal(self) -> bool:
        return self.kind != self.MOVE

    def describe(self) -> str:
        if self.kind == self.MOVE:
            return f"{self.kind}({self.view.index})"
        if self.kind == self.ABORT:
            return f"{self.kind}({self.reason.value})"
        return self.kind


@dataclass(eq=False)
class PolicyState:
    """
    Loop state between ticks. `tick` counts completed ticks, so the simulated clock reads
    tick / tick_rate.
    """

    tick: int
    camera: Pose
    grid: TsdfGrid
    bbox: Aabb
    views: List[ViewCandidate]
    tick_rate: float
    quality_history: Deque[float]
    current_best: Optional[GraspCandidate] = None
    best_voxel: Optional[Tuple[int, int, int]] = None
    images: int = 0

    @property
    def sim_clock(self) -> float:
        return self.tick / self.tick_rate

    def snapshot(self) -> "PolicyState":
        return replace(self, grid=self.grid.copy(), views=list(self.views),
                       quality_history=deque(self.quality_history, maxlen=self.quality_history.maxlen))


@dataclass(frozen=True, eq=False)
class TickRecord:
    tick: int
    camera: Pose
    gains: Dict[int, int]
    best_grasp: Optional[GraspCandidate]
    decision: Decision
    timings_ms: Dict[str, float]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tick": self.tick,
            "camera": self.camera.to_dict(),
            "gains": {str(index): int(gain) for index, gain in self.gains.items()},
            "best_grasp": self.best_grasp.to_dict() if self.best_grasp is not None else None,
            "decision": self.decision.describe(),
            "timings_ms": {stage: round(ms, 6) for stage, ms in self.timings_ms.items()},
        }


@dataclass(frozen=True, eq=False)
class TrialResult:
    status: TrialStatus
    views: int
    search_time: float
    total_time: float
    seed: int
    policy_kind: PolicyKind
    images: int = 0
    reason: Optional[str] = None
    quality: float = float("nan")
    ticks: Tuple[TickRecord, ...] = ()

    def to_row(self) -> Dict[str, Any]:
        return {"seed": self.seed, "policy": self.policy_kind.value, "status": self.status.value,
                "reason": self.reason or "", "views": self.views, "images": self.images,
                "search_s": self.search_time, "total_s": self.total_time}


def stable_grasp(history: Iterable[float], window: int, epsilon_mu: float) -> bool:
    """True iff the history holds exactly `window` samples whose mean strictly exceeds epsilon_mu."""
    samples = list(history)
    if len(samples) != window:
        return False
    return math.fsum(samples) / window > epsilon_mu


def advance_camera(camera: Pose, target: ViewCandidate, dt: float, v: float, bbox: Aabb, min_dist: float) -> Pose:
    """
    One velocity-limited step toward the target view, kept at least min_dist from the bbox
    centre and re-aimed at it.

    Raises:
        ValueError: If dt or v is not positive
    """
    if dt <= 0 or v <= 0:
        raise ValueError(f"dt and v must be positive, got dt={dt}, v={v}")
    position = camera.translation
    goal = target.position
    remaining = float(np.linalg.norm(goal - position))
    step = v * dt
    if remaining <= step:
        moved = goal.copy()
    else:
        moved = position + (goal - position) * (step / remaining)

    center = bbox.center
    offset = moved - center
    distance = float(np.linalg.norm(offset))
    if distance < min_dist:
        direction = offset / distance if distance > 1e-12 else np.array([0.0, 0.0, 1.0])
        moved = center + min_dist * direction
    return Pose.look_at(moved, center)


def initial_state(scene: Scene, policy_config: PolicyConfig, initial_camera: Pose) -> Tuple[PolicyState, bool]:
    """
    Fresh state for a trial.

    Returns:
        The state and whether candidate views could be generated
    """
    bbox = target_bbox(scene)
    views: List[ViewCandidate] = []
    reachable = True
    if policy_config.policy_kind is PolicyKind.NBV_GRASP:
        try:
            views = generate_views(bbox, policy_config.reach, policy_config.sensor,
                                   policy_config.n_views, policy_config.view_radius)
        except UnreachableViewsError as e:
            logger.warning(f"Seed {scene.seed}: {e}")
            reachable = False
    elif policy_config.policy_kind in (PolicyKind.TOP_VIEW, PolicyKind.TOP_TRAJECTORY):
        views = [zenith_view(bbox, policy_config.sensor, policy_config.view_radius)]
    state = PolicyState(0, initial_camera, TsdfGrid(policy_config.tsdf), bbox, views, policy_config.tick_rate,
                        deque(maxlen=policy_config.window))
    return state, reachable


def _detect(state: PolicyState, policy_config: PolicyConfig) -> Optional[GraspCandidate]:
    region = state.bbox.padded(policy_config.bbox_margin_voxels * state.grid.voxel_size)
    grasp_field = predict_grasp_field(state.grid, policy_config.gripper, policy_config.detector, roi=region)
    candidates = filter_candidates(grasp_field, region, policy_config.reach, policy_config.gripper,
                                   policy_config.detector.q_floor, policy_config.detector.nms_radius)
    return best_grasp(candidates)


def _update_history(state: PolicyState, grasp: Optional[GraspCandidate], nms_radius: float) -> None:
    if grasp is None:
        state.quality_history.clear()
        state.best_voxel = None
        return
    voxel = tuple(int(i) for i in np.unravel_index(grasp.voxel, state.grid.values.shape))
    if state.best_voxel is not None and np.linalg.norm(np.subtract(voxel, state.best_voxel)) > nms_radius:
        state.quality_history.clear()
    state.quality_history.append(grasp.quality)
    state.best_voxel = voxel


def _arrived(camera: Pose, view: ViewCandidate) -> bool:
    return bool(np.linalg.norm(camera.translation - view.position) < 1e-9)


def _stop_with_best(grasp: Optional[GraspCandidate], reason: AbortReason) -> Decision:
    return Decision.execute(grasp) if grasp is not None else Decision.abort(reason)


def tick(state: PolicyState, scene: Scene, policy_config: PolicyConfig,
         reachable: bool = True) -> Tuple[PolicyState, Decision, TickRecord]:
    """
    One policy update at the current camera pose.

    The nbv_grasp order is: integrate, detect, update the quality history, score views,
    then stop on a stable grasp, on a gain below G_min, or on the view budget; otherwise
    move toward the best view. Baselines skip the gain and stability criteria.
    """
    started = time.perf_counter()
    timings = {stage: 0.0 for stage in TIMING_STAGES}
    state = state.snapshot()
    state.tick += 1
    kind = policy_config.policy_kind
    gains: Dict[int, int] = {}

    integrate_now = kind in (PolicyKind.NBV_GRASP, PolicyKind.INITIAL_VIEW, PolicyKind.TOP_TRAJECTORY) or \
        (kind is PolicyKind.TOP_VIEW and _arrived(state.camera, state.views[0]))
    if integrate_now:
        stage = time.perf_counter()
        depth = render_depth(scene, state.camera, policy_config.sensor, policy_config.noise_sigma)
        integrate(state.grid, depth, state.camera)
        state.images += 1
        timings["integrate"] = (time.perf_counter() - stage) * 1e3

    out_of_budget = state.tick >= policy_config.max_views

    if kind is PolicyKind.NBV_GRASP:
        stage = time.perf_counter()
        grasp = _detect(state, policy_config)
        timings["grasp"] = (time.perf_counter() - stage) * 1e3
        state.current_best = grasp
        _update_history(state, grasp, policy_config.detector.nms_radius)

        if not reachable:
            decision = Decision.abort(AbortReason.UNREACHABLE_VIEWS)
        else:
            stage = time.perf_counter()
            scores = compute_gains(state.grid, state.bbox, state.views, policy_config.ig_camera)
            timings["ig"] = (time.perf_counter() - stage) * 1e3
            gains = {view.index: int(gain) for view, gain in zip(state.views, scores)}
            best = best_view_position(state.views, scores)
            best_gain = int(scores[best])

            if stable_grasp(state.quality_history, policy_config.window, policy_config.epsilon_mu):
                decision = Decision.execute(grasp)
            elif best_gain < policy_config.gain_min:
                decision = _stop_with_best(grasp, AbortReason.GAIN_BELOW_MIN_NO_GRASP)
            elif out_of_budget:
                decision = _stop_with_best(grasp, AbortReason.BUDGET_EXHAUSTED)
            else:
                decision = Decision.move_toward(state.views[best].with_gain(best_gain))
    else:
        at_goal = kind is PolicyKind.INITIAL_VIEW or _arrived(state.camera, state.views[0])
        if at_goal or out_of_budget:
            stage = time.perf_counter()
            grasp = _detect(state, policy_config) if state.images else None
            timings["grasp"] = (time.perf_counter() - stage) * 1e3
            state.current_best = grasp
            decision = _stop_with_best(grasp, AbortReason.BUDGET_EXHAUSTED)
        else:
            decision = Decision.move_toward(state.views[0])

    timings["other"] = max(0.0, (time.perf_counter() - started) * 1e3 - sum(timings.values()))
    record = TickRecord(state.tick, state.camera, gains, state.current_best, decision, timings)
    logger.debug(f"tick {state.tick}: {decision.describe()}, best Q "
                 f"{state.current_best.quality if state.current_best else 0.0:.3f}")
    return state, decision, record


def run_policy(scene: Scene, policy_config: PolicyConfig, initial_camera: Pose,
               record_ticks: bool = False) -> TrialResult:
    """
    Run one trial on the simulated clock and execute or abort at the end.

    Returns:
        TrialResult: views = ticks, search_time = views / tick_rate and
        total_time = search_time + execution_time
    """
    state, reachable = initial_state(scene, policy_config, initial_camera)
    records: List[TickRecord] = []

    while True:
        state, decision, record = tick(state, scene, policy_config, reachable)
        if record_ticks:
            records.append(record)
        if decision.is_terminal:
            break
        state.camera = advance_camera(state.camera, decision.view, policy_config.dt, policy_config.linear_velocity,
                                      state.bbox, policy_config.min_target_distance)

    views = state.tick
    search_time = views / policy_config.tick_rate
    quality = float("nan")
    reason = None
    if decision.kind == Decision.EXECUTE:
        quality = decision.grasp.quality
        outcome = execute_grasp(scene, decision.grasp, policy_config.gripper, policy_config.friction_cone_deg)
        status = TrialStatus.SUCCEEDED if outcome.success else TrialStatus.FAILED_EXECUTION
        reason = outcome.reason.value if outcome.reason else None
    else:
        status = TrialStatus.ABORTED
        reason = decision.reason.value

    logger.debug(f"Seed {scene.seed} {policy_config.policy_kind.value}: {status.value} after {views} views")
    return TrialResult(status, views, search_time, search_time + policy_config.execution_time, scene.seed,
                       policy_config.policy_kind, state.images, reason, quality, tuple(records))
