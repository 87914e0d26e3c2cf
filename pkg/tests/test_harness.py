import json

import numpy as np
import pytest

from kmergodic.harness import (
    VALID_KEYS,
    ScenarioError,
    TrialError,
    crossover,
    load_scenario,
    loglog_slope,
    parse_override,
    run_scaling_suite,
    run_scenario,
    run_trial,
)
from kmergodic.metrics import TrajectoryLog, emmd_oracle, feature_emmd


@pytest.fixture(scope="module")
def small_box():
    return load_scenario("box2d", ["T=25", "M=60", "seeds=[3]"])


@pytest.fixture(scope="module")
def small_record(small_box):
    return run_trial(small_box, 3)


def test_parse_override_literals():
    assert parse_override("planner.mpc.horizon=60") == ("planner.mpc.horizon", 60)
    assert parse_override('planner.mode="greedy"') == ("planner.mode", "greedy")
    assert parse_override("planner.mode=greedy") == ("planner.mode", "greedy")
    assert parse_override("seeds=[1, 2]") == ("seeds", [1, 2])
    with pytest.raises(ScenarioError):
        parse_override("no-equals-sign")


def test_unknown_override_key_lists_valid_keys():
    with pytest.raises(ScenarioError) as exc:
        load_scenario("box2d", ["planner.mpc.horizn=3"])
    assert exc.value.key == "planner.mpc.horizn"
    assert "planner.mpc.horizon" in str(exc.value)
    assert "planner.mpc.horizon" in VALID_KEYS


def test_missing_scenario_names_path():
    with pytest.raises(ScenarioError, match="nowhere.toml"):
        load_scenario("nowhere.toml")


def test_bundled_scenarios_load():
    for name in ("box2d", "bunny", "descent", "scaling"):
        scn = load_scenario(name)
        assert scn.T >= 1 and scn.seeds


def test_trace_lengths_equal_T(small_record):
    r = small_record
    T = 25
    assert r.T == T
    for arr in (r.metric, r.emmd, r.coverage, r.plan_seconds, r.log.states, r.applied_controls):
        assert len(arr) == T
    assert np.all(np.isfinite(r.metric)) and np.all(r.plan_seconds >= 0)
    assert np.all(np.diff(r.coverage) >= 0)


def test_single_greedy_step_from_rest():
    scn = load_scenario("box2d", ["T=1", 'planner.mode="greedy"'])
    r = run_trial(scn, 0)
    assert np.array_equal(r.applied_controls, [[0.0, 0.0]])
    assert r.T == 1 and r.metric[0] >= 0


def test_live_trace_is_feature_emmd(small_box, small_record):
    r = small_record
    tgt = small_box.target(3)
    for s in np.random.default_rng(0).choice(r.T, 10, replace=False):
        log = TrajectoryLog.from_points(r.log.domain_points[: s + 1], small_box.model.dt)
        assert r.emmd[s] == pytest.approx(feature_emmd(log, tgt, small_box.objective_kernel), abs=1e-10)


def test_live_trace_tracks_oracle_up_to_constant(small_box, small_record):
    # live E/t^2 minus the oracle EMMD at 10 random steps should be one constant
    r = small_record
    tgt = small_box.target(3)
    diffs = []
    for s in np.random.default_rng(0).choice(r.T, 10, replace=False):
        log = TrajectoryLog.from_points(r.log.domain_points[: s + 1], small_box.model.dt)
        diffs.append(r.emmd[s] - emmd_oracle(log, tgt, small_box.objective_kernel))
    assert np.ptp(diffs) <= 1e-6


def test_trial_error_carries_module_and_step(monkeypatch):
    import kmergodic.harness as h

    def boom(*a, **k):
        raise FloatingPointError("bad")

    monkeypatch.setattr(h, "error_step", boom)
    with pytest.raises(TrialError) as exc:
        run_trial(load_scenario("box2d", ["T=3"]), 0)
    assert exc.value.module == "visitation" and exc.value.step_index == 0


def test_run_scenario_writes_layout_and_manifest(small_box, tmp_path):
    scn = small_box.with_overrides(["planner.mpc.horizon=7"])
    records, summary = run_scenario(scn, [3, 4], tmp_path)
    base = tmp_path / "run" / "box2d"
    for seed in (3, 4):
        for f in ("trace.csv", "trajectory.csv", "timing.csv", "summary.json"):
            assert (base / str(seed) / f).is_file()
    header = (base / "3" / "trace.csv").read_text().splitlines()
    assert header[0] == "step,t,emmd,time_augmented_metric,coverage_fraction"
    assert len(header) == 1 + 25
    manifest = json.loads((base / "manifest.json").read_text())
    assert manifest["seeds"] == [3, 4]
    assert manifest["effective_config"]["planner"]["mpc"]["horizon"] == 7
    assert len(manifest["scenario_sha256"]) == 64 and manifest["version"]
    assert [t["seed"] for t in summary["trials"]] == [3, 4]


def test_workers_do_not_change_results(small_box, tmp_path):
    a, _ = run_scenario(small_box, [3, 4], tmp_path / "a", workers=1)
    b, _ = run_scenario(small_box, [3, 4], tmp_path / "b", workers=2)
    for ra, rb in zip(a, b):
        assert np.array_equal(ra.metric, rb.metric) and np.array_equal(ra.log.states, rb.log.states)


def test_short_term_covering_everything_equals_full():
    base = ["T=20", "M=50"]
    full = run_trial(load_scenario("box2d", base + ['baseline="full"']), 1)
    short = run_trial(load_scenario("box2d", base + ["baseline={short_term=20}"]), 1)
    assert np.array_equal(full.applied_controls, short.applied_controls)


def test_full_history_close_to_kme_on_box():
    # same horizon, same objective kernel; small T keeps the closed loops together
    base = ["T=30"]
    scn = load_scenario("box2d", base)
    kme = np.mean([run_trial(scn, s).emmd[-1] for s in scn.seeds])
    full_scn = load_scenario("box2d", base + ['baseline="full"'])
    full = np.mean([run_trial(full_scn, s).emmd[-1] for s in scn.seeds])
    assert abs(full - kme) <= 0.1 * kme


def test_scaling_suite_schema(tmp_path):
    scn = load_scenario("scaling", ["M=20", "planner.mpc.horizon=5", "planner.mpc.iterations=2"])
    res = run_scaling_suite(scn, "T", [10, 40], ["kme", "full"], repeats=2, out_root=tmp_path)
    assert [r["T"] for r in res["table"]] == [10, 40]
    assert all(r["kme"] > 0 and r["full"] > 0 for r in res["table"])
    assert set(res["slopes"]) == {"kme", "full"}
    assert "crossover" in res
    lines = (tmp_path / "scaling" / "scaling" / "scaling_T.csv").read_text().splitlines()
    assert lines[0] == "T,kme_seconds,full_seconds" and len(lines) == 3
    with pytest.raises(ScenarioError):
        run_scaling_suite(scn, "dt", [1], out_root=tmp_path)


def test_scaling_full_capped(tmp_path):
    scn = load_scenario("scaling", ["M=10", "planner.mpc.horizon=3", "planner.mpc.iterations=1",
                                    "suite.scaling.full_cap=50"])
    res = run_scaling_suite(scn, "T", [20, 100], ["kme", "full"], repeats=1, out_root=tmp_path)
    assert res["table"][1]["full"] is None and res["table"][1]["kme"] > 0


def test_loglog_slope_and_crossover():
    xs = np.array([10.0, 100.0, 1000.0])
    assert loglog_slope(xs, 3 * xs**2) == pytest.approx(2.0)
    assert crossover([10, 30, 100], [1.0, 1.0, 1.0], [0.5, 2.0, 9.0]) == 30
    assert crossover([10, 30], [1.0, 1.0], [0.5, 0.9]) is None
    assert crossover([10, 30, 100], [1.0, 1.0, 1.0], [2.0, 3.0, None]) == 10
