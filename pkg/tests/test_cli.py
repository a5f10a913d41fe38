import json
import math

import pytest

from starhop.cli import (
    ExperimentPlan,
    check_assertion,
    main,
    read_results,
    results_csv,
    run_plan,
    summarize,
)

TINY_HYPER = {"episodes": 1, "slots": 4, "hidden": [4], "batch_size": 2, "t_q": 2}
TINY_BASE = {"m_antennas": 2, "n_elements": 2, "v_surfaces": 1, "total_users": 2}


def tiny_plan(**kw):
    data = {"base": TINY_BASE, "axis": "n_elements", "values": [2], "hyper": TINY_HYPER}
    data.update(kw)
    return ExperimentPlan.from_dict(data)


def row(value, seed, ee, **kw):
    r = {"axis_value": value, "algorithm": "MAGAR", "baseline": "ES", "policy": "OPTIMIZED",
         "seed": seed, "ee": ee, "rate": 1.0, "power": 1.0, "ee_first": 0.0, "status": "ok"}
    r.update(kw)
    return r


def test_single_tuple_gives_one_row():
    rows = run_plan(tiny_plan())
    assert len(rows) == 1 and rows[0]["status"] == "ok"


def test_on_off_plan_is_cartesian():
    plan = ExperimentPlan(base={}, axis="n_elements", values=[4, 8, 16, 32, 64],
                          policies=["ALL_ON", "HALF_ON", "OPTIMIZED"], seeds=[0, 1])
    assert len(plan.tuples()) == 30


def test_plan_validation():
    with pytest.raises(ValueError):
        ExperimentPlan(base={}, axis="colour", values=[1])
    with pytest.raises(ValueError):
        ExperimentPlan(base={}, axis="n_elements", values=[1], algorithms=["PPO"])
    with pytest.raises(ValueError):
        ExperimentPlan(base={}, axis="n_elements", values=[1], baselines=["NONE"],
                       policies=["ALL_ON", "HALF_ON"])
    with pytest.raises(KeyError):
        ExperimentPlan.from_dict({"base": {}, "axis": "n_elements", "values": [1], "sedes": [1]})


def test_v_axis_rebuilds_regions():
    plan = ExperimentPlan(base={"total_users": 10}, axis="v_surfaces", values=[2, 3])
    assert plan.config_for(3)[0].users_per_region == (2, 2, 2, 4)
    assert plan.config_for(2)[0].i_regions == 3


def test_summary_statistics():
    _, one = summarize([row(1, 0, 5.0)])
    assert one["groups"][0]["ee_std"] == 0.0
    _, two = summarize([row(1, 0, 1.0), row(1, 1, 3.0)])
    g = two["groups"][0]
    assert g["ee_mean"] == 2.0 and g["ee_std"] == pytest.approx(math.sqrt(2))
    with pytest.raises(ValueError):
        summarize([])


def test_failed_rows_are_excluded_and_counted():
    text, s = summarize([row(1, 0, 1.0), row(1, 1, math.nan, status="failed: boom")])
    assert s["failed_runs"] == 1 and s["groups"][0]["seeds"] == 1
    assert "1 run(s) failed" in text


def test_assertions():
    rows = [row(v, s, ee) for s in (0, 1) for v, ee in ((4, 1.0), (8, 3.0), (16, 2.0))]
    assert check_assertion(rows, {"type": "interior_peak"})["pass"]
    assert not check_assertion(rows, {"type": "order", "by": "axis_value", "order": [4, 8]})["pass"]
    assert check_assertion(rows, {"type": "peak_geq", "peak": 8, "others": [4, 16]})["pass"]
    assert check_assertion(rows, {"type": "seedwise_geq", "by": "axis_value", "hi": 16, "lo": 4,
                                  "min_count": 2})["pass"]
    assert check_assertion(rows, {"type": "strict_gap", "by": "axis_value", "hi": 16, "lo": 4})["pass"]
    assert check_assertion(rows, {"type": "improves", "min_count": 6})["pass"]
    with pytest.raises(ValueError):
        check_assertion(rows, {"type": "vibes"})


def test_summary_reports_every_assertion():
    asserts = [{"type": "interior_peak", "name": "a"}, {"type": "improves", "min_count": 1, "name": "b"}]
    text, s = summarize([row(1, 0, 1.0)], asserts)
    assert [a["name"] for a in s["assertions"]] == ["a", "b"]
    assert all(isinstance(a["pass"], bool) for a in s["assertions"])
    assert "[FAIL] a" in text and "[PASS] b" in text
    assert "bits/joule" in s["note"]


def test_results_csv_round_trip(tmp_path):
    rows = [row(4, 0, 1.2345678901234567), row(8, 1, 2.0)]
    path = tmp_path / "r.csv"
    path.write_text(results_csv(rows))
    back = read_results(path)
    assert back[0]["ee"] == 1.2345678901234567 and back[1]["axis_value"] == 8


def test_none_baseline_rows_use_bs_power_only():
    plan = tiny_plan(baselines=["NONE"], policies=["ALL_ON"])
    (r,) = run_plan(plan)
    cfg, _ = plan.config_for(2)
    assert r["power"] == pytest.approx(cfg.p_max_watt, rel=1e-12)


def test_cli_run_and_summarize(tmp_path, capsys):
    plan = tiny_plan(seeds=[0, 1], assertions=[{"type": "improves", "min_count": 0, "name": "trivial"}])
    pfile = tmp_path / "plan.json"
    pfile.write_text(json.dumps(plan.to_dict()))
    out = tmp_path / "out"
    assert main(["run", "--plan", str(pfile), "--out", str(out)]) == 0
    for name in ("results.csv", "summary.json", "manifest.json"):
        assert (out / name).exists()
    assert len(list((out / "runs").glob("*.csv"))) == 2
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["hyper"]["episodes"] == 1 and "2" in manifest["resolved"]
    assert main(["summarize", "--in", str(out)]) == 0
    assert "[PASS] trivial" in capsys.readouterr().out


def test_cli_exit_code_reflects_assertions(tmp_path):
    plan = tiny_plan(assertions=[{"type": "improves", "min_count": 5}])
    pfile = tmp_path / "plan.json"
    pfile.write_text(json.dumps(plan.to_dict()))
    assert main(["run", "--plan", str(pfile), "--out", str(tmp_path / "o"), "--no-records"]) == 1


def test_cli_overrides(tmp_path):
    pfile = tmp_path / "plan.json"
    pfile.write_text(json.dumps(tiny_plan().to_dict()))
    out = tmp_path / "o"
    main(["run", "--plan", str(pfile), "--out", str(out), "--no-records", "--slots=3", "--rician_factor=0.5"])
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["hyper"]["slots"] == 3
    assert manifest["resolved"]["2"]["rician_factor"] == 0.5


def test_results_are_byte_identical(tmp_path):
    plan = tiny_plan(seeds=[3], algorithms=["MAGAR", "QLEARNING"])
    assert results_csv(run_plan(plan)) == results_csv(run_plan(plan))
