import json
import os

import pytest

from src import cli
from src.artifacts import (ABSTRACTION_NAME, DEMOS_NAME, MANIFEST_NAME, PLAN_NAME, POOL_NAME, REPORT_NAME,
                           STEPLOG_NAME, read_demos, read_manifest, write_manifest, write_pool)
from src.config_models import RunConfig, SelectionConfig, TaskOutcome, TimingBreakdown
from src.domains import get_domain
from tests.helpers import oracle_candidates

REPLAY = os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "prompts", "replay", "blocks.replay"))


def _write_config(path, **overrides):
    config = {
        "domain": "blocks",
        "seed": 0,
        "num_demos": 4,
        "selection": {"workers": 1},
        "planner": {"samples_per_step": 5, "max_skeletons": 2, "max_replans": 2, "timeout_s": 30.0},
    }
    config.update(overrides)
    path.write_text(json.dumps(config), encoding="utf-8")
    return str(path)


@pytest.fixture
def workspace(tmp_path):
    config = _write_config(tmp_path / "config.json")
    demos = str(tmp_path / "demos")
    assert cli.main(["gen-demos", "--config", config, "--out", demos]) == cli.EXIT_OK
    return tmp_path, config, demos


@pytest.fixture
def oracle_pool(workspace):
    tmp_path, _, demos_dir = workspace
    domain = get_domain("blocks")
    demos = read_demos(demos_dir, domain)
    pool_dir = str(tmp_path / "pool")
    write_pool(pool_dir, domain, oracle_candidates(domain, demos), [], [], 0)
    write_manifest(pool_dir, "invent", timing=TimingBreakdown(tau_predinv=1.5), extra={"fits": 0})
    return pool_dir


def _read(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def test_gen_demos_writes_demos_and_manifest(workspace):
    _, _, demos = workspace
    assert sorted(os.listdir(demos)) == [DEMOS_NAME, MANIFEST_NAME]
    with open(os.path.join(demos, DEMOS_NAME), encoding="utf-8") as f:
        assert len([line for line in f if line.strip()]) == 4
    manifest = read_manifest(demos)
    assert manifest["command"] == "gen-demos" and manifest["num"] == 4 and manifest["split"] == "train"
    assert len(manifest["columns"]["block"]) == 5 and set(manifest["columns"]) == {"robot", "block"}


def test_gen_demos_flags_override_config(tmp_path):
    out = str(tmp_path / "demos")
    assert cli.main(["gen-demos", "--domain", "satellites", "--num", "2", "--seed", "3", "--out", out]) == 0
    manifest = read_manifest(out)
    assert (manifest["domain"], manifest["num"], manifest["seed"]) == ("satellites", 2, 3)


def test_select_plan_and_eval_with_an_oracle_pool(workspace, oracle_pool):
    tmp_path, config, demos = workspace
    abstraction = str(tmp_path / "abstraction")
    assert cli.main(["select", "--config", config, "--demos", demos, "--candidates", oracle_pool,
                     "--out", abstraction]) == cli.EXIT_OK
    assert {ABSTRACTION_NAME, STEPLOG_NAME, MANIFEST_NAME} <= set(os.listdir(abstraction))
    manifest = read_manifest(abstraction)
    assert manifest["derived_mode"] == "aware" and manifest["selected"]
    assert set(manifest["inputs"]) == {"candidates", "demos"}

    plan_dir = str(tmp_path / "plan")
    assert cli.main(["plan", "--config", config, "--abstraction", abstraction, "--task-seed", "0",
                     "--split", "train", "--out", plan_dir]) == cli.EXIT_OK
    plan = _read(os.path.join(plan_dir, PLAN_NAME))
    assert plan["task_seed"] == 0 and plan["domain"] == "blocks"
    assert plan["success"] == (plan["failure_reason"] is None)

    report_dir = str(tmp_path / "report")
    assert cli.main(["eval", "--config", config, "--abstraction", abstraction, "--split", "train",
                     "--num", "3", "--seeds", "5", "--report", report_dir]) == cli.EXIT_OK
    report = _read(os.path.join(report_dir, REPORT_NAME))
    assert [o["task_seed"] for o in report["outcomes"]] == [5, 6, 7]
    assert report["num_tasks"] == 3
    assert report["num_solved"] + sum(report["failure_reasons"].values()) == 3
    assert report["selection_steps"]
    assert report["timing"]["tau_total"] >= report["timing"]["tau_skill"]


def test_eval_reports_are_deterministic(workspace, oracle_pool):
    tmp_path, config, demos = workspace
    abstraction = str(tmp_path / "abstraction")
    assert cli.main(["select", "--config", config, "--demos", demos, "--candidates", oracle_pool,
                     "--out", abstraction]) == 0
    reports = []
    for name, workers in (("serial", "1"), ("parallel", "3")):
        out = str(tmp_path / name)
        assert cli.main(["eval", "--config", config, "--abstraction", abstraction, "--split", "test",
                         "--num", "3", "--workers", workers, "--report", out]) == 0
        reports.append(_read(os.path.join(out, REPORT_NAME)))
    assert reports[0] == reports[1]


def test_select_mode_flag_overrides_config(workspace, oracle_pool):
    tmp_path, config, demos = workspace
    out = str(tmp_path / "abstraction")
    assert cli.main(["select", "--config", config, "--demos", demos, "--candidates", oracle_pool,
                     "--mode", "disabled", "--out", out]) == 0
    manifest = read_manifest(out)
    assert manifest["derived_mode"] == "disabled"
    assert not any("-" in name for name in manifest["selected"])


def test_select_defaults_to_the_config_invent_recorded(workspace, oracle_pool):
    tmp_path, _, demos = workspace
    out = str(tmp_path / "abstraction")
    assert cli.main(["select", "--demos", demos, "--candidates", oracle_pool, "--out", out]) \
        == cli.EXIT_USER_ERROR
    assert not os.path.exists(out)

    recorded = RunConfig(domain="blocks", selection=SelectionConfig(derived_mode="disabled", workers=1))
    write_manifest(oracle_pool, "invent", recorded, timing=TimingBreakdown(tau_predinv=1.5),
                   extra={"fits": 0, "config": recorded.model_dump(mode="json")})
    assert cli.main(["select", "--demos", demos, "--candidates", oracle_pool, "--out", out]) == cli.EXIT_OK
    manifest = read_manifest(out)
    assert manifest["derived_mode"] == "disabled"
    assert manifest["config_hash"] == read_manifest(oracle_pool)["config_hash"]


def test_build_report_counts_failures(blocks_domain):
    outcomes = [TaskOutcome(task_seed=0, split="test", success=True, plan_length=4),
                TaskOutcome(task_seed=1, split="test", success=False, failure_reason="timeout"),
                TaskOutcome(task_seed=2, split="test", success=False, failure_reason="timeout")]
    report = cli.build_report(blocks_domain, "test", outcomes)
    assert report.num_solved == 1 and report.failure_reasons == {"timeout": 2}
    assert report.success_rate == pytest.approx(1 / 3)
    assert cli.build_report(blocks_domain, "test", []).success_rate == 0.0


def test_missing_inputs_are_user_errors(tmp_path, workspace):
    _, config, _ = workspace
    out = str(tmp_path / "pool")
    assert cli.main(["invent", "--config", config, "--demos", str(tmp_path / "nowhere"), "--proposer",
                     "enumerate", "--out", out]) == cli.EXIT_USER_ERROR
    assert not os.path.exists(out)
    assert cli.main(["gen-demos", "--config", str(tmp_path / "missing.json"), "--out", out]) == cli.EXIT_USER_ERROR
    assert cli.main(["eval", "--abstraction", str(tmp_path / "nowhere"), "--report", out]) == cli.EXIT_USER_ERROR


def test_bad_configs_are_user_errors(tmp_path):
    out = str(tmp_path / "demos")
    unknown = _write_config(tmp_path / "unknown.json", planner={"beam_width": 3})
    assert cli.main(["gen-demos", "--config", unknown, "--out", out]) == cli.EXIT_USER_ERROR
    blocks = _write_config(tmp_path / "blocks.json")
    assert cli.main(["gen-demos", "--config", blocks, "--domain", "satellites", "--out", out]) \
        == cli.EXIT_USER_ERROR
    assert cli.main(["gen-demos", "--bogus"]) == cli.EXIT_USER_ERROR
    assert not os.path.exists(out)


def test_invent_without_a_proposer_is_a_user_error(workspace):
    tmp_path, config, demos = workspace
    assert cli.main(["invent", "--config", config, "--demos", demos, "--out", str(tmp_path / "pool")]) \
        == cli.EXIT_USER_ERROR


@pytest.mark.slow
def test_invent_with_replayed_proposals(tmp_path):
    config = _write_config(tmp_path / "config.json",
                           proposer={"backend": "scripted", "replay_file": REPLAY},
                           train={"epochs": 5, "hidden_sizes": [8], "seed": 0},
                           loop={"max_iterations": 0})
    demos = str(tmp_path / "demos")
    pool = str(tmp_path / "pool")
    assert cli.main(["gen-demos", "--config", config, "--out", demos]) == 0
    assert cli.main(["invent", "--config", config, "--demos", demos, "--out", pool]) == 0
    assert {POOL_NAME, MANIFEST_NAME} <= set(os.listdir(pool))
    manifest = read_manifest(pool)
    assert manifest["proposer"] == "scripted" and manifest["fits"] >= 1
    assert manifest["timing"]["tau_predinv"] > 0
    assert manifest["config"]["proposer"]["backend"] == "scripted"
    assert cli.main(["select", "--demos", demos, "--candidates", pool, "--out", str(tmp_path / "abstraction")]) == 0
