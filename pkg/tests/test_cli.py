"""Entry points: flags, exit codes, stdout shapes."""

import json

import pytest

from avcc.cli import main
from avcc.eventlog import read_log


def write_scenario(tmp_path, **over):
    doc = {
        "vehicle_id": "v1",
        "route_length": 200.0,
        "cruise_speed": 5.0,
        "events": [{"kind": "ads_mrm", "at": 2.0, "reason": "blocked_lane"}],
        "maneuver_options": [{"descriptor": "edge stop", "viable": True}],
    }
    doc.update(over)
    path = tmp_path / f"{doc['vehicle_id']}.json"
    path.write_text(json.dumps(doc))
    return path


def test_simulate_prints_summary_and_writes_log(tmp_path, capsys):
    scenario = write_scenario(tmp_path)
    out_dir = tmp_path / "out"
    code = main(
        [
            "simulate",
            "--scenario",
            str(scenario),
            "--duration",
            "12",
            "--out",
            str(out_dir),
        ]
    )
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["vehicles"]["v1"]["final_state"] == "unmonitored_automated_driving"
    assert summary["vehicles"]["v1"]["mrms_resolved"] == 1
    assert (out_dir / "sim.ndjson").exists()


def test_simulate_requires_a_scenario(capsys):
    assert main(["simulate"]) == 2
    assert "scenario" in capsys.readouterr().err


def test_simulate_ignore_policy_fails_under_require_resolution(tmp_path, capsys):
    scenario = write_scenario(tmp_path, initial_state="unmonitored_automated_driving")
    code = main(
        [
            "simulate",
            "--scenario",
            str(scenario),
            "--policy",
            "ignore",
            "--duration",
            "6",
            "--require-resolution",
        ]
    )
    assert code == 1
    summary = json.loads(capsys.readouterr().out)
    assert summary["vehicles"]["v1"]["final_state"] == "activated_mrc"
    assert summary["violations"] == ["unresolved_requests"]


def test_simulate_unknown_profile_exits_with_message(tmp_path, capsys):
    scenario = write_scenario(tmp_path)
    with pytest.raises(SystemExit, match="unknown profile"):
        main(["simulate", "--scenario", str(scenario), "--profile", "klingon"])


def test_simulate_rejects_contradictory_policy(tmp_path):
    scenario = write_scenario(tmp_path)
    with pytest.raises(SystemExit, match="assist_only"):
        main(
            [
                "simulate",
                "--scenario",
                str(scenario),
                "--policy",
                "assist_only",
                "--prefer-mode",
                "remote_driving",
            ]
        )


def test_export_table_row_counts(capsys):
    assert main(["export-table", "--profile", "generic"]) == 0
    generic = capsys.readouterr().out.strip().splitlines()
    assert main(["export-table", "--profile", "german"]) == 0
    german = capsys.readouterr().out.strip().splitlines()
    assert len(generic) == 14
    assert len(german) == 13
    assert set(generic) - set(german) == {
        line for line in generic if "remote_driving" in line
    }


def test_export_table_is_deterministic(capsys):
    main(["export-table"])
    first = capsys.readouterr().out
    main(["export-table"])
    assert capsys.readouterr().out == first


def test_profile_diff_names_the_single_row(capsys):
    assert main(["profile-diff", "generic", "german"]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert out == ["- begin_alternative_maneuver(remote_driving)"]
    assert main(["profile-diff", "german", "generic"]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert out == ["+ begin_alternative_maneuver(remote_driving)"]


def test_walkthrough_and_replay_round_trip(tmp_path, capsys):
    out_dir = tmp_path / "out"
    assert main(["walkthrough", "--out", str(out_dir)]) == 0
    capsys.readouterr()
    log = out_dir / "walkthrough.ndjson"
    assert main(["replay", str(log)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["states"] == {"walker": "initial"}
    assert report["applied"] == 13


def test_replay_reports_divergence(tmp_path, capsys):
    out_dir = tmp_path / "out"
    main(["walkthrough", "--out", str(out_dir)])
    capsys.readouterr()
    log = out_dir / "walkthrough.ndjson"
    lines = log.read_text().splitlines()
    doctored = []
    for line in lines:
        record = json.loads(line)
        if record["kind"] == "transition" and record["payload"]["event"]["kind"] == "start_service":
            record["payload"]["to_state"] = "prepared"  # contradicts the model
        doctored.append(json.dumps(record, sort_keys=True, separators=(",", ":")))
    log.write_text("\n".join(doctored) + "\n")
    assert main(["replay", str(log)]) == 1
    assert "divergence" in capsys.readouterr().err


def test_generate_writes_loadable_scenarios(tmp_path, capsys):
    out_dir = tmp_path / "scenarios"
    assert main(["generate", "--seed", "5", "--count", "3", "--out", str(out_dir)]) == 0
    paths = sorted(out_dir.glob("*.json"))
    assert len(paths) == 3
    from avcc.agent import load_scenario

    for path in paths:
        load_scenario(path)


def test_generate_is_seed_stable(tmp_path):
    a_dir, b_dir = tmp_path / "a", tmp_path / "b"
    main(["generate", "--seed", "5", "--count", "2", "--out", str(a_dir)])
    main(["generate", "--seed", "5", "--count", "2", "--out", str(b_dir)])
    for a, b in zip(sorted(a_dir.glob("*.json")), sorted(b_dir.glob("*.json"))):
        assert a.read_text() == b.read_text()


def test_simulate_log_survives_external_replay(tmp_path, capsys):
    scenario = write_scenario(tmp_path)
    out_dir = tmp_path / "out"
    main(["simulate", "--scenario", str(scenario), "--duration", "12", "--out", str(out_dir)])
    capsys.readouterr()
    entries = read_log(out_dir / "sim.ndjson")
    assert entries[0].payload["profile"] == "generic"
    assert main(["replay", str(out_dir / "sim.ndjson")]) == 0
