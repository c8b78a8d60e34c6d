import json
import math
import os
from types import SimpleNamespace

import pandas as pd
import pytest

from src.benchmark import (POLICY_ORDER, SUMMARY_COLUMNS, TRIAL_COLUMNS, ExperimentConfig, aggregate,
                           generate_scene_file, load_config_overrides, parse_policies, parse_seeds, profile_tick,
                           run_bench, run_scenario, run_scenario_batch, sweep_window)
from src.errors import SceneGenerationError
from src.geometry import Pose
from src.policy import AbortReason, Decision, PolicyConfig, PolicyKind, TickRecord, TrialResult, TrialStatus
from src.scene import load_scenario

STATUS_CYCLE = [TrialStatus.SUCCEEDED, TrialStatus.FAILED_EXECUTION, TrialStatus.ABORTED]


def fake_prepare_scene(seed, n_objects, policy_config):
    return SimpleNamespace(seed=seed), Pose.identity()


def fake_run_policy(scene, policy_config, camera, record_ticks=False):
    """Deterministic stand-in whose outcome depends only on (seed, policy)."""
    rank = POLICY_ORDER.index(policy_config.policy_kind)
    views = 1 + (scene.seed * 7 + rank * 3) % 20
    search = views / policy_config.tick_rate
    ticks = ()
    if record_ticks:
        ticks = tuple(TickRecord(i + 1, camera, {}, None, Decision.abort(AbortReason.BUDGET_EXHAUSTED),
                                 {"integrate": 1.0, "grasp": 2.0, "ig": 3.0, "other": 0.5})
                      for i in range(views))
    return TrialResult(STATUS_CYCLE[(scene.seed + rank) % 3], views, search, search + policy_config.execution_time,
                       scene.seed, policy_config.policy_kind, views, None, 0.5, ticks)


@pytest.fixture
def fake_trials(mocker):
    mocker.patch("src.benchmark.prepare_scene", side_effect=fake_prepare_scene)
    return mocker.patch("src.benchmark.run_policy", side_effect=fake_run_policy)


def read_bytes(path):
    with open(path, "rb") as f:
        return f.read()


class TestParsing:
    def test_seed_range_is_inclusive(self):
        assert parse_seeds("0..3") == (0, 1, 2, 3)
        assert parse_seeds("7..7") == (7,)

    def test_seed_list(self):
        assert parse_seeds("1,5, 7") == (1, 5, 7)

    @pytest.mark.parametrize("text", ["5..2", "a..b", "1,x"])
    def test_invalid_seeds(self, text):
        with pytest.raises(ValueError, match="Invalid seed specification"):
            parse_seeds(text)

    def test_policies(self):
        assert parse_policies("nbv_grasp, top_view") == (PolicyKind.NBV_GRASP, PolicyKind.TOP_VIEW)
        with pytest.raises(ValueError, match="Unknown policy"):
            parse_policies("nbv_grasp,random")

    @pytest.mark.parametrize("overrides, message", [
        ({"seeds": ()}, "At least one seed"),
        ({"policies": ()}, "At least one policy"),
        ({"n_objects": 1}, "n_objects"),
        ({"jobs": 0}, "jobs"),
        ({"noise_sigma": -0.1}, "noise_sigma"),
    ])
    def test_invalid_experiment(self, overrides, message):
        arguments = {"seeds": (0, 1)}
        arguments.update(overrides)
        with pytest.raises(ValueError, match=message):
            ExperimentConfig(**arguments)


class TestConfigOverrides:
    def test_nested_keys(self, tmp_path):
        path = tmp_path / "overrides.json"
        path.write_text(json.dumps({"window": 6, "gripper": {"max_width": 0.07},
                                    "reach": {"base": [0.0, 0.0, 0.0]}}), encoding="utf-8")
        policy_config = load_config_overrides(str(path))
        assert policy_config.window == 6
        assert policy_config.gripper.max_width == pytest.approx(0.07)
        assert policy_config.reach.base == (0.0, 0.0, 0.0)
        assert policy_config.gain_min == PolicyConfig().gain_min

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "overrides.json"
        path.write_text('{"foo": 1}', encoding="utf-8")
        with pytest.raises(ValueError, match="Unknown configuration key: foo"):
            load_config_overrides(str(path))

    def test_unknown_nested_key(self, tmp_path):
        path = tmp_path / "overrides.json"
        path.write_text('{"gripper": {"depth": 1}}', encoding="utf-8")
        with pytest.raises(ValueError, match="Unknown configuration key: gripper.depth"):
            load_config_overrides(str(path))

    def test_invalid_json_reports_line(self, tmp_path):
        path = tmp_path / "overrides.json"
        path.write_text('{\n  "window": 6,\n  "gain_min": \n}\n', encoding="utf-8")
        with pytest.raises(ValueError, match=r"overrides.json:4:"):
            load_config_overrides(str(path))

    def test_values_are_validated(self, tmp_path):
        path = tmp_path / "overrides.json"
        path.write_text('{"epsilon_mu": 2.0}', encoding="utf-8")
        with pytest.raises(ValueError, match="epsilon_mu"):
            load_config_overrides(str(path))


class TestAggregate:
    def test_rates_and_statistics(self):
        trials = pd.DataFrame({
            "seed": [0, 1, 2, 3],
            "policy": ["nbv_grasp"] * 4,
            "status": ["succeeded", "failed_execution", "aborted", "succeeded"],
            "reason": ["", "slip", "budget_exhausted", ""],
            "views": [10, 20, 30, 40],
            "images": [10, 20, 30, 40],
            "search_s": [2.5, 5.0, 7.5, 10.0],
            "total_s": [15.5, 18.0, 20.5, 23.0],
        }, columns=TRIAL_COLUMNS)
        [row] = aggregate(trials)
        assert (row.sr, row.fr, row.ar) == (0.5, 0.25, 0.25)
        assert row.views_mean == pytest.approx(25.0)
        assert row.views_std == pytest.approx(math.sqrt(125.0))
        assert row.search_s_mean == pytest.approx(6.25)
        assert row.total_s_mean == pytest.approx(19.25)
        assert row.n == 4

    def test_missing_policies_are_skipped(self):
        trials = pd.DataFrame(columns=TRIAL_COLUMNS)
        assert aggregate(trials) == []


class TestRunBench:
    def experiment(self, tmp_path, name="out", seeds=tuple(range(6)), jobs=4):
        return ExperimentConfig(seeds=seeds, output_dir=str(tmp_path / name), jobs=jobs)

    def test_writes_outputs(self, tmp_path, fake_trials):
        experiment = self.experiment(tmp_path)
        rows = run_bench(experiment)
        assert [row.policy for row in rows] == [kind.value for kind in POLICY_ORDER]
        for name in ["trials.csv", "summary.csv", "summary.md", "summary.html"]:
            assert os.path.exists(os.path.join(experiment.output_dir, name))
        with open(os.path.join(experiment.output_dir, "summary.csv"), encoding="utf-8") as f:
            assert f.readline().strip() == ",".join(SUMMARY_COLUMNS)
        assert fake_trials.call_count == 6 * len(POLICY_ORDER)

    def test_trials_sorted_by_seed_then_policy(self, tmp_path, fake_trials):
        experiment = self.experiment(tmp_path)
        run_bench(experiment)
        trials = pd.read_csv(os.path.join(experiment.output_dir, "trials.csv"))
        order = [kind.value for kind in POLICY_ORDER]
        keys = list(zip(trials["seed"], [order.index(p) for p in trials["policy"]]))
        assert keys == sorted(keys)
        assert len(trials) == 24

    def test_reruns_are_byte_identical(self, tmp_path, fake_trials):
        first = self.experiment(tmp_path, "first", jobs=4)
        second = self.experiment(tmp_path, "second", jobs=1)
        run_bench(first)
        run_bench(second)
        for name in ["trials.csv", "summary.csv", "summary.md"]:
            assert read_bytes(os.path.join(first.output_dir, name)) == \
                read_bytes(os.path.join(second.output_dir, name))

    def test_summary_recomputes_from_trials(self, tmp_path, fake_trials):
        experiment = self.experiment(tmp_path)
        run_bench(experiment)
        trials = pd.read_csv(os.path.join(experiment.output_dir, "trials.csv"), keep_default_na=False)
        summary = pd.read_csv(os.path.join(experiment.output_dir, "summary.csv"))
        for row, (_, written) in zip(aggregate(trials), summary.iterrows()):
            assert row.policy == written["policy"]
            assert row.sr + row.fr + row.ar == pytest.approx(1.0)
            for column in SUMMARY_COLUMNS[1:]:
                assert getattr(row, column) == pytest.approx(written[column], abs=1e-6)

    def test_seed_results_do_not_depend_on_other_seeds(self, tmp_path, fake_trials):
        alone = self.experiment(tmp_path, "alone", seeds=(3,))
        together = self.experiment(tmp_path, "together")
        run_bench(alone)
        run_bench(together)
        single = pd.read_csv(os.path.join(alone.output_dir, "trials.csv"))
        batch = pd.read_csv(os.path.join(together.output_dir, "trials.csv"))
        batch = batch[batch["seed"] == 3].reset_index(drop=True)
        pd.testing.assert_frame_equal(single, batch)

    def test_unplaceable_seed_is_skipped(self, tmp_path, mocker):
        def prepare(seed, n_objects, policy_config):
            if seed == 1:
                raise SceneGenerationError(seed, "no free spot")
            return fake_prepare_scene(seed, n_objects, policy_config)

        mocker.patch("src.benchmark.prepare_scene", side_effect=prepare)
        mocker.patch("src.benchmark.run_policy", side_effect=fake_run_policy)
        experiment = self.experiment(tmp_path, seeds=(0, 1, 2))
        run_bench(experiment)
        trials = pd.read_csv(os.path.join(experiment.output_dir, "trials.csv"))
        assert sorted(set(trials["seed"])) == [0, 2]

    def test_unwritable_output_fails_before_trials(self, tmp_path, fake_trials, mocker):
        mocker.patch("src.utils.file_io.os.access", return_value=False)
        with pytest.raises(PermissionError, match="No write permission"):
            run_bench(self.experiment(tmp_path))
        assert fake_trials.call_count == 0


class TestSweepAndProfile:
    def test_sweep_rows(self, tmp_path, fake_trials):
        experiment = ExperimentConfig(seeds=(0, 1, 2), output_dir=str(tmp_path))
        frame = sweep_window(experiment, [1, 6, 12])
        assert frame["T"].tolist() == [1, 6, 12]
        assert list(frame.columns) == ["T", "sr", "search_s_mean"]
        assert os.path.exists(tmp_path / "sweep_window.csv")
        windows = {call.args[1].window for call in fake_trials.call_args_list}
        assert windows == {1, 6, 12}

    @pytest.mark.parametrize("t_values", [[], [0], [81]])
    def test_sweep_rejects_windows(self, tmp_path, t_values):
        experiment = ExperimentConfig(seeds=(0,), output_dir=str(tmp_path))
        with pytest.raises(ValueError):
            sweep_window(experiment, t_values)

    def test_profile_stages(self, tmp_path, fake_trials):
        experiment = ExperimentConfig(seeds=(0, 1), output_dir=str(tmp_path))
        frame = profile_tick(experiment)
        assert frame["stage"].tolist() == ["integrate", "grasp", "ig", "other"]
        assert frame["mean_ms"].tolist() == pytest.approx([1.0, 2.0, 3.0, 0.5])
        assert frame["std_ms"].tolist() == pytest.approx([0.0, 0.0, 0.0, 0.0])
        assert os.path.exists(tmp_path / "profile.csv")


class TestScenarios:
    def test_initial_view_tick_log(self, tmp_path):
        result = run_scenario("scene_a", PolicyKind.INITIAL_VIEW, output_dir=str(tmp_path))
        log_path = tmp_path / "scene_a_initial_view.jsonl"
        lines = log_path.read_text(encoding="utf-8").splitlines()
        assert len(lines) == result.views == 1
        record = json.loads(lines[0])
        assert set(record) == {"tick", "camera", "gains", "best_grasp", "decision", "timings_ms"}
        assert record["tick"] == 1

    def test_top_view_cannot_grasp_under_shelf(self, tmp_path):
        result = run_scenario("scene_d", PolicyKind.TOP_VIEW, output_dir=str(tmp_path))
        assert result.status is TrialStatus.ABORTED
        assert (tmp_path / "scene_d_top_view.jsonl").exists()

    def test_nbv_grasps_from_the_side_under_shelf(self, tmp_path):
        result = run_scenario("scene_d", PolicyKind.NBV_GRASP, output_dir=str(tmp_path))
        assert result.status is TrialStatus.SUCCEEDED
        assert result.views > 1

    def test_perturbed_batch(self, tmp_path):
        results = run_scenario_batch("scene_a", [PolicyKind.INITIAL_VIEW], 2, output_dir=str(tmp_path))
        assert [r.seed for r in results] == [0, 1]
        trials = pd.read_csv(tmp_path / "scene_a_trials.csv")
        assert trials["seed"].tolist() == [0, 1]
        assert (tmp_path / "scene_a_initial_view_p1.jsonl").exists()

    def test_batch_needs_instances(self, tmp_path):
        with pytest.raises(ValueError, match="n_perturb"):
            run_scenario_batch("scene_a", [PolicyKind.INITIAL_VIEW], 0, output_dir=str(tmp_path))

    def test_generated_scene_loads_as_scenario(self, tmp_path):
        path = str(tmp_path / "seed7.json")
        scene = generate_scene_file(7, path)
        scenario = load_scenario(path)
        assert scenario.scene.target_id == scene.target_id
        assert scenario.scene.objects[0].pose.isclose(scene.objects[0].pose)
