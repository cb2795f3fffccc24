import csv
import json
from pathlib import Path

import pytest

from esp_creatures.cli import EXIT_CONFIG, EXIT_OK, EXIT_PAUSED, EXIT_STAGE_FAILED, _workers, main

SYL = """\
name: tiny
skills:
  - {id: loco, task: locomotion}
  - {id: left, task: turn_left}
  - {id: ttl, task: turn_to_light, is_leaf: false, dependencies: [left]}
"""
SMALL = ["--population", "4", "--generations", "2", "--steps", "60", "--quiet"]


def tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def run(tmp_path, name, *extra, syllabus=SYL):
    syl = tmp_path / "syl.yaml"
    syl.write_text(syllabus)
    out = tmp_path / name
    code = main(["run", "--syllabus", str(syl), "--out", str(out), *SMALL, *extra])
    return code, out


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    code, out = run(tmp, "a")
    assert code == EXIT_OK
    return tmp, out


def test_run_writes_the_documented_artifacts(full_run):
    _, out = full_run
    names = set(tree(out))
    for f in ("manifest.json", "state.json", "stage_reports.jsonl"):
        assert f in names
    for stage in ("stage_00_loco", "stage_01_left", "stage_02_ttl"):
        for f in ("history.csv", "fitness_log.csv", "survivors.json", "checkpoint.json", "selection.json",
                  "report.json", "best_creature.json"):
            assert f"{stage}/{f}" in names
    rows = list(csv.DictReader((out / "stage_02_ttl" / "fitness_log.csv").open()))
    assert len(rows) == 4 * 2 and len(rows[0]["components"].split()) == 4


def test_runs_are_byte_identical(full_run):
    tmp, out = full_run
    code, again = run(tmp, "b")
    assert code == EXIT_OK and tree(again) == tree(out)


def test_resume_after_stop_matches_uninterrupted_run(full_run):
    tmp, out = full_run
    code, part = run(tmp, "c", "--stop-after", "1")
    assert code == EXIT_OK
    assert len((part / "stage_reports.jsonl").read_text().splitlines()) == 1
    assert main(["run", "--resume", "--out", str(part), "--quiet"]) == EXIT_OK
    assert tree(part) == tree(out)


def test_pause_for_selection_honours_the_edited_rank(tmp_path):
    code, out = run(tmp_path, "p", "--pause-for-selection")
    assert code == EXIT_PAUSED
    sel_path = out / "stage_00_loco" / "selection.json"
    sel = json.loads(sel_path.read_text())
    assert sel["status"] == "pending" and sel["rank"] == 1
    sel["rank"] = 2
    sel_path.write_text(json.dumps(sel))
    assert main(["run", "--resume", "--out", str(out), "--quiet"]) == EXIT_PAUSED
    report = json.loads((out / "stage_reports.jsonl").read_text().splitlines()[0])
    assert report["selected"] == 2
    state = json.loads((out / "state.json").read_text())
    assert state["creature"]["lineage"] == report["survivors"][1]["lineage"]


def test_bad_selection_rank_is_a_config_error(tmp_path):
    _, out = run(tmp_path, "p", "--pause-for-selection")
    sel_path = out / "stage_00_loco" / "selection.json"
    sel = json.loads(sel_path.read_text())
    sel["rank"] = 99
    sel_path.write_text(json.dumps(sel))
    assert main(["run", "--resume", "--out", str(out), "--quiet"]) == EXIT_CONFIG


def test_replay_reproduces_the_stage_best_exactly(full_run, capsys):
    _, out = full_run
    for stage in ("stage_00_loco", "stage_02_ttl"):
        capsys.readouterr()
        assert main(["replay", str(out / stage / "best_creature.json"), "--steps", "60"]) == EXIT_OK
        printed = capsys.readouterr().out.strip().splitlines()
        fitness = float(printed[-1].split("\t")[1])
        report = json.loads((out / stage / "report.json").read_text())
        assert fitness == report["best_fitness"]


def test_replay_export_writes_one_file_per_scenario(full_run, tmp_path):
    _, out = full_run
    exp = tmp_path / "exp"
    assert main(["replay", str(out / "stage_02_ttl" / "best_creature.json"), "--steps", "20",
                 "--export", str(exp)]) == EXIT_OK
    assert len(list(exp.iterdir())) == 4


def test_forcing_a_controller_off_silences_the_skill(full_run, tmp_path):
    _, out = full_run
    exp = tmp_path / "off"
    assert main(["replay", str(out / "stage_00_loco" / "best_creature.json"), "--steps", "30",
                 "--force-controller", "loco=0", "--export", str(exp)]) == EXIT_OK
    (f,) = list(exp.iterdir())
    for line in f.read_text().splitlines():
        assert all(a == 0.0 for a in json.loads(line)["muscle_activations"])


@pytest.mark.parametrize("args", [
    ["--force-controller", "loco"],
    ["--force-controller", "loco=2"],
    ["--force-controller", "nobody=1"],
    ["--task", "juggle"],
])
def test_bad_replay_arguments_exit_1(full_run, args):
    _, out = full_run
    assert main(["replay", str(out / "stage_00_loco" / "best_creature.json"), "--steps", "5", *args]) \
        == EXIT_CONFIG


def test_report_shows_cost_law_ratio_of_one(full_run, tmp_path):
    _, out = full_run
    rep = tmp_path / "rep"
    assert main(["report", str(out), "--out", str(rep)]) == EXIT_OK
    rows = list(csv.DictReader((rep / "summary.csv").open()))
    assert [float(r["evaluation_ratio"]) for r in rows] == [1.0, 1.0, 1.0]
    assert {p.name for p in rep.iterdir()} == {"summary.csv", "summary.txt", "fitness_history.png",
                                               "evaluation_costs.png"}
    assert (rep / "fitness_history.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_general_single_leaf_report_has_no_retests(tmp_path):
    code, out = run(tmp_path, "g", "--mode", "general", syllabus="skills:\n  - {id: loco, task: locomotion}\n")
    assert code == EXIT_OK
    assert main(["report", str(out)]) == EXIT_OK
    rows = list(csv.DictReader((out / "report" / "summary.csv").open()))
    assert [r["retests_executed"] for r in rows] == ["0"]


def test_report_on_empty_directory_exits_1(tmp_path):
    assert main(["report", str(tmp_path)]) == EXIT_CONFIG


def test_empty_syllabus_exits_1(tmp_path, capsys):
    code, _ = run(tmp_path, "e", syllabus="skills: []\n")
    assert code == EXIT_CONFIG
    assert "syllabus has no skills" in capsys.readouterr().err


def test_general_mode_rejects_non_leaf_before_leaf(tmp_path, capsys):
    syl = SYL + "order: [left, ttl, loco]\n"
    code, _ = run(tmp_path, "o", "--mode", "general", syllabus=syl)
    assert code == EXIT_CONFIG
    assert "LeafOrderingViolation" in capsys.readouterr().err


def test_stage_failure_exits_2_and_keeps_artifacts(tmp_path):
    code, out = run(tmp_path, "f", syllabus="skills:\n  - {id: loco, task: locomotion, floor: 1.5}\n")
    assert code == EXIT_STAGE_FAILED
    report = json.loads((out / "stage_00_loco" / "report.json").read_text())
    assert report["encapsulation"] is None
    assert (out / "stage_00_loco" / "checkpoint.json").exists()


def test_non_empty_output_without_resume_exits_1(full_run):
    tmp, out = full_run
    assert main(["run", "--syllabus", str(tmp / "syl.yaml"), "--out", str(out), "--quiet"]) == EXIT_CONFIG


def test_bundled_syllabus_names_resolve(tmp_path):
    out = tmp_path / "hr"
    assert main(["run", "--syllabus", "high_reach", "--out", str(out), "--population", "2",
                 "--generations", "0", "--steps", "5", "--quiet", "--stop-after", "1"]) == EXIT_OK


def test_worker_count_falls_back_to_environment(monkeypatch):
    monkeypatch.setenv("ESP_WORKERS", "3")
    assert _workers(None) == 3 and _workers(2) == 2
    monkeypatch.delenv("ESP_WORKERS")
    assert _workers(None) == 1
