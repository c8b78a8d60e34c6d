"""
Benchmark harness for nbv-grasp-sim

Runs policies over packed scenes and bundled scenarios, aggregates success / failure /
abort rates with view and time statistics, and writes the CSV tables and the report.
"""

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import config
from .camera import CameraIntrinsics
from .errors import NoVisibleObjectError, SceneGenerationError
from .geometry import Pose
from .grasp_detection import DetectorConfig, GripperModel
from .nbv import ReachabilityModel
from .policy import TIMING_STAGES, PolicyConfig, PolicyKind, TrialResult, TrialStatus, run_policy
from .report_generator import write_bench_report
from .scene import (Scene, default_workspace, generate_packed_scene, initial_camera_pose, load_scenario,
                    perturb_scene, resolve_scenario, save_scene, select_target)
from .tsdf import TsdfConfig
from .utils.file_io import check_writable_directory, read_json_file, write_text_file

logger = logging.getLogger(__name__)

POLICY_ORDER = (PolicyKind.NBV_GRASP, PolicyKind.INITIAL_VIEW, PolicyKind.TOP_VIEW, PolicyKind.TOP_TRAJECTORY)
SUMMARY_COLUMNS = ["policy", "sr", "fr", "ar", "views_mean", "views_std", "search_s_mean", "search_s_std",
                   "total_s_mean", "total_s_std", "n"]
TRIAL_COLUMNS = ["seed", "policy", "status", "reason", "views", "images", "search_s", "total_s"]
SWEEP_COLUMNS = ["T", "sr", "search_s_mean"]
PROFILE_COLUMNS = ["stage", "mean_ms", "std_ms"]
FLOAT_FORMAT = "%.6f"

# Nested PolicyConfig sections a --config file may override
NESTED_SECTIONS = {"gripper": GripperModel, "reach": ReachabilityModel, "detector": DetectorConfig,
                   "tsdf": TsdfConfig, "sensor": CameraIntrinsics, "ig_camera": CameraIntrinsics}


@dataclass(frozen=True)
class ExperimentConfig:
    seeds: Tuple[int, ...]
    policies: Tuple[PolicyKind, ...] = POLICY_ORDER
    n_objects: int = config.PACKED_OBJECT_COUNT
    noise_sigma: float = config.NOISE_SIGMA
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    output_dir: str = config.OUTPUT_DIR
    jobs: int = config.JOBS

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "policies", tuple(PolicyKind(p) for p in self.policies))
        if not self.seeds:
            raise ValueError("At least one seed is required")
        if not self.policies:
            raise ValueError("At least one policy is required")
        if self.n_objects < 2:
            raise ValueError(f"n_objects must be at least 2, got {self.n_objects}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be non-negative, got {self.noise_sigma}")
        if self.jobs < 1:
            raise ValueError(f"jobs must be at least 1, got {self.jobs}")

    def policy_config(self, kind: PolicyKind, **overrides: Any) -> PolicyConfig:
        return replace(self.policy, policy_kind=kind, noise_sigma=self.noise_sigma, **overrides)


@dataclass(frozen=True)
class MetricsRow:
    policy: str
    sr: float
    fr: float
    ar: float
    views_mean: float
    views_std: float
    search_s_mean: float
    search_s_std: float
    total_s_mean: float
    total_s_std: float
    n: int


def parse_seeds(text: str) -> Tuple[int, ...]:
    """
    Parse `A..B` (inclusive) or a comma-separated list of seeds.

    Raises:
        ValueError: If the range is empty or malformed
    """
    text = text.strip()
    try:
        if ".." in text:
            start, end = (int(part) for part in text.split("..", 1))
            if end < start:
                raise ValueError(f"Empty seed range: {text}")
            return tuple(range(start, end + 1))
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError as e:
        raise ValueError(f"Invalid seed specification '{text}': {e}") from e


def parse_policies(text: str) -> Tuple[PolicyKind, ...]:
    names = [part.strip() for part in text.split(",") if part.strip()]
    try:
        return tuple(PolicyKind(name) for name in names)
    except ValueError:
        valid = ", ".join(kind.value for kind in PolicyKind)
        raise ValueError(f"Unknown policy in '{text}' (valid: {valid})")


def _apply_overrides(target: Any, overrides: Dict[str, Any], prefix: str = "") -> Any:
    known = {f.name for f in fields(target)}
    updates = {}
    for key, value in overrides.items():
        if key not in known:
            raise ValueError(f"Unknown configuration key: {prefix}{key}")
        current = getattr(target, key)
        if is_dataclass(current) and isinstance(value, dict):
            updates[key] = _apply_overrides(current, value, f"{prefix}{key}.")
        elif isinstance(current, tuple):
            updates[key] = tuple(value)
        else:
            updates[key] = value
    return replace(target, **updates)


def load_config_overrides(file_path: str, base: Optional[PolicyConfig] = None) -> PolicyConfig:
    """
    Apply a JSON document of PolicyConfig overrides.

    Raises:
        FileNotFoundError: If the file doesn't exist
        ValueError: On invalid JSON (with line and column) or unknown keys
    """
    try:
        overrides = read_json_file(file_path)
    except json.JSONDecodeError as e:
        raise ValueError(f"{file_path}:{e.lineno}:{e.colno}: {e.msg}") from e
    if not isinstance(overrides, dict):
        raise ValueError(f"{file_path}: configuration must be a JSON object")
    return _apply_overrides(base or PolicyConfig(), overrides)


def prepare_scene(seed: int, n_objects: int, policy_config: PolicyConfig) -> Tuple[Scene, Pose]:
    """
    Packed scene for a seed with its target selected from the fixed initial camera.

    Raises:
        SceneGenerationError: If the objects cannot be placed
        NoVisibleObjectError: If nothing is visible from the initial camera
    """
    workspace = default_workspace(policy_config.tsdf.side_length)
    scene = generate_packed_scene(seed, n_objects, workspace)
    camera = initial_camera_pose(workspace, scene.table_height, policy_config.view_radius)
    target_id = select_target(scene, camera, policy_config.sensor)
    return scene.with_target(target_id), camera


def run_seed(seed: int, experiment: ExperimentConfig,
             policy_configs: Optional[Sequence[PolicyConfig]] = None) -> List[TrialResult]:
    """All requested policies on one seed's scene; an unusable scene yields no trials."""
    configs = policy_configs or [experiment.policy_config(kind) for kind in experiment.policies]
    try:
        scene, camera = prepare_scene(seed, experiment.n_objects, configs[0])
    except (SceneGenerationError, NoVisibleObjectError) as e:
        logger.warning(f"Skipping seed {seed}: {e}")
        return []
    return [run_policy(scene, policy_config, camera) for policy_config in configs]


def _policy_rank(kind: PolicyKind) -> int:
    return POLICY_ORDER.index(kind)


def run_trials(experiment: ExperimentConfig,
               policy_configs: Optional[Sequence[PolicyConfig]] = None) -> List[TrialResult]:
    """
    Run every seed on a worker pool.

    Results are sorted by (seed, policy) so the output does not depend on scheduling.
    """
    results: List[TrialResult] = []
    with ThreadPoolExecutor(max_workers=experiment.jobs) as executor:
        future_to_seed = {executor.submit(run_seed, seed, experiment, policy_configs): seed
                          for seed in experiment.seeds}
        for future in as_completed(future_to_seed):
            seed = future_to_seed[future]
            try:
                results.extend(future.result())
            except Exception as e:
                logger.error(f"Trials for seed {seed} failed: {e}")
                raise
    results.sort(key=lambda r: (r.seed, _policy_rank(r.policy_kind)))
    return results


def trials_frame(results: Sequence[TrialResult]) -> pd.DataFrame:
    return pd.DataFrame([r.to_row() for r in results], columns=TRIAL_COLUMNS)


def aggregate(trials: pd.DataFrame, policies: Sequence[PolicyKind] = POLICY_ORDER) -> List[MetricsRow]:
    """Per-policy rates and view/time statistics (population std), in `policies` order."""
    rows = []
    for kind in policies:
        group = trials[trials["policy"] == PolicyKind(kind).value]
        n = len(group)
        if n == 0:
            continue
        status = group["status"]
        rows.append(MetricsRow(
            policy=PolicyKind(kind).value,
            sr=float((status == TrialStatus.SUCCEEDED.value).sum() / n),
            fr=float((status == TrialStatus.FAILED_EXECUTION.value).sum() / n),
            ar=float((status == TrialStatus.ABORTED.value).sum() / n),
            views_mean=float(group["views"].mean()),
            views_std=float(group["views"].std(ddof=0)),
            search_s_mean=float(group["search_s"].mean()),
            search_s_std=float(group["search_s"].std(ddof=0)),
            total_s_mean=float(group["total_s"].mean()),
            total_s_std=float(group["total_s"].std(ddof=0)),
            n=n,
        ))
    return rows


def summary_frame(rows: Sequence[MetricsRow]) -> pd.DataFrame:
    return pd.DataFrame([asdict(row) for row in rows], columns=SUMMARY_COLUMNS)


def write_csv(frame: pd.DataFrame, file_path: str) -> None:
    write_text_file(file_path, frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n"))
    logger.info(f"Wrote {file_path}")


def run_bench(experiment: ExperimentConfig) -> List[MetricsRow]:
    """
    Run every policy on every seed and write trials.csv, summary.csv and the report.

    Raises:
        PermissionError: If the output directory is not writable (checked before any trial)
    """
    check_writable_directory(experiment.output_dir)
    logger.info(f"Starting bench: {len(experiment.seeds)} seeds x {len(experiment.policies)} policies")

    trials = trials_frame(run_trials(experiment))
    rows = aggregate(trials, experiment.policies)
    write_csv(trials, os.path.join(experiment.output_dir, "trials.csv"))
    write_csv(summary_frame(rows), os.path.join(experiment.output_dir, "summary.csv"))
    write_bench_report(rows, experiment.policy, experiment.seeds, experiment.output_dir)

    logger.info(f"Bench finished: {len(trials)} trials")
    return rows


def sweep_window(experiment: ExperimentConfig, t_values: Sequence[int]) -> pd.DataFrame:
    """
    nbv_grasp success rate and mean search time for each stability window size.

    Raises:
        ValueError: If a window is not positive or exceeds max_views
    """
    if not t_values:
        raise ValueError("At least one window size is required")
    for window in t_values:
        if window <= 0 or window > experiment.policy.max_views:
            raise ValueError(f"Window sizes must lie in [1, {experiment.policy.max_views}], got {window}")
    check_writable_directory(experiment.output_dir)

    records = []
    for window in t_values:
        policy_config = experiment.policy_config(PolicyKind.NBV_GRASP, window=int(window))
        trials = trials_frame(run_trials(experiment, [policy_config]))
        n = len(trials)
        records.append({
            "T": int(window),
            "sr": float((trials["status"] == TrialStatus.SUCCEEDED.value).sum() / n) if n else float("nan"),
            "search_s_mean": float(trials["search_s"].mean()) if n else float("nan"),
        })
        logger.info(f"Window T={window}: {n} trials")

    frame = pd.DataFrame(records, columns=SWEEP_COLUMNS)
    write_csv(frame, os.path.join(experiment.output_dir, "sweep_window.csv"))
    return frame


def profile_tick(experiment: ExperimentConfig) -> pd.DataFrame:
    """Wall-clock per-stage timings of nbv_grasp ticks; machine dependent."""
    check_writable_directory(experiment.output_dir)
    if len(experiment.seeds) < 40:
        logger.warning(f"Profiling over {len(experiment.seeds)} trials; 40 or more give stable means")
    policy_config = experiment.policy_config(PolicyKind.NBV_GRASP)

    samples: Dict[str, List[float]] = {stage: [] for stage in TIMING_STAGES}
    for seed in experiment.seeds:
        try:
            scene, camera = prepare_scene(seed, experiment.n_objects, policy_config)
        except (SceneGenerationError, NoVisibleObjectError) as e:
            logger.warning(f"Skipping seed {seed}: {e}")
            continue
        result = run_policy(scene, policy_config, camera, record_ticks=True)
        for record in result.ticks:
            for stage in TIMING_STAGES:
                samples[stage].append(record.timings_ms[stage])

    frame = pd.DataFrame([{"stage": stage,
                           "mean_ms": float(np.mean(values)) if values else 0.0,
                           "std_ms": float(np.std(values)) if values else 0.0}
                          for stage, values in samples.items()], columns=PROFILE_COLUMNS)
    write_csv(frame, os.path.join(experiment.output_dir, "profile.csv"))
    return frame


def write_tick_log(result: TrialResult, file_path: str) -> None:
    lines = [json.dumps(record.to_dict(), sort_keys=True) for record in result.ticks]
    write_text_file(file_path, "\n".join(lines) + "\n")
    logger.info(f"Wrote {file_path}")


def run_scenario(scenario: str, policy_kind: PolicyKind, policy_config: Optional[PolicyConfig] = None,
                 output_dir: str = config.OUTPUT_DIR, perturb_seed: Optional[int] = None) -> TrialResult:
    """
    Run one policy on a scenario file (or bundled scenario name) and write its tick log.

    Raises:
        FileNotFoundError: If the scenario cannot be found
        ScenarioParseError: If the scenario file is malformed
    """
    loaded = load_scenario(resolve_scenario(scenario))
    scene = loaded.scene if perturb_seed is None else perturb_scene(loaded.scene, perturb_seed)
    policy_config = replace(policy_config or PolicyConfig(), policy_kind=PolicyKind(policy_kind))
    result = run_policy(scene, policy_config, loaded.initial_camera, record_ticks=True)

    suffix = "" if perturb_seed is None else f"_p{perturb_seed}"
    check_writable_directory(output_dir)
    write_tick_log(result, os.path.join(output_dir, f"{loaded.name}_{policy_config.policy_kind.value}{suffix}.jsonl"))
    logger.info(f"Scenario {loaded.name} with {policy_config.policy_kind.value}: {result.status.value} "
                f"after {result.views} views")
    return result


def run_scenario_batch(scenario: str, policies: Sequence[PolicyKind], n_perturb: int,
                       policy_config: Optional[PolicyConfig] = None,
                       output_dir: str = config.OUTPUT_DIR) -> List[TrialResult]:
    """
    Run each policy on perturbed copies of a scenario (perturbation seeds 0..n_perturb-1).

    The seed column of the written trials CSV holds the perturbation seed.
    """
    if n_perturb < 1:
        raise ValueError(f"n_perturb must be at least 1, got {n_perturb}")
    results = []
    for perturb_seed in range(n_perturb):
        for kind in policies:
            result = run_scenario(scenario, kind, policy_config, output_dir, perturb_seed)
            results.append(replace(result, seed=perturb_seed, ticks=()))
    name = load_scenario(resolve_scenario(scenario)).name
    write_csv(trials_frame(results), os.path.join(output_dir, f"{name}_trials.csv"))
    return results


def generate_scene_file(seed: int, file_path: str, n_objects: int = config.PACKED_OBJECT_COUNT,
                        policy_config: Optional[PolicyConfig] = None) -> Scene:
    """Write a packed scene with its selected target and initial camera."""
    scene, camera = prepare_scene(seed, n_objects, policy_config or PolicyConfig())
    save_scene(scene, file_path, {"initial_camera": camera.to_dict()})
    logger.info(f"Wrote scene for seed {seed} to {file_path}")
    return scene
