import json

import pytest

from esp_creatures.esp import ESPConfig, ESPRunner, RunState, syllabus_from_dict
from esp_creatures.storage import (SchemaError, dumps, individual_from_dict, individual_to_dict,
                                   read_creature, run_state_from_dict, run_state_to_dict,
                                   stage_result_from_dict, stage_result_to_dict, write_creature,
                                   write_json_atomic)

SYL = {"skills": [{"id": "loco", "task": "locomotion"}, {"id": "left", "task": "turn_left"}]}


@pytest.fixture(scope="module")
def two_stages():
    runner = ESPRunner(syllabus_from_dict(SYL), ESPConfig(population=4, generations=2, steps=30))
    state, result = runner.run_stage(RunState())
    return runner, state, result


def round_trip(d):
    return json.loads(dumps(d))


def test_individual_round_trips_to_identical_bytes(two_stages):
    _, state, _ = two_stages
    d = individual_to_dict(state.creature)
    again = individual_to_dict(individual_from_dict(round_trip(d)))
    assert dumps(again) == dumps(d)


def test_run_state_round_trip(two_stages):
    _, state, _ = two_stages
    d = run_state_to_dict(state)
    back = run_state_from_dict(round_trip(d))
    assert dumps(run_state_to_dict(back)) == dumps(d)
    assert back.completed == 1 and back.records[0].skill == "loco"


def test_stage_result_round_trip_resumes_identically(two_stages):
    runner, state, result = two_stages
    back = stage_result_from_dict(round_trip(stage_result_to_dict(result)))
    assert dumps(stage_result_to_dict(back)) == dumps(stage_result_to_dict(result))
    # finishing from the reloaded checkpoint gives the same next state
    a = runner.finish(RunState(), result, 1)
    b = runner.finish(RunState(), back, 1)
    assert dumps(run_state_to_dict(a)) == dumps(run_state_to_dict(b))


def test_creature_files_check_their_schema(tmp_path, two_stages):
    _, state, _ = two_stages
    p = tmp_path / "c.json"
    write_creature(p, state.creature, task="locomotion")
    ind, meta = read_creature(p)
    assert meta == {"task": "locomotion"} and ind.lineage == state.creature.lineage
    d = json.loads(p.read_text())
    d["schema"] = "something-else/9"
    p.write_text(json.dumps(d))
    with pytest.raises(SchemaError):
        read_creature(p)


def test_atomic_write_leaves_no_temporary(tmp_path):
    p = tmp_path / "s.json"
    write_json_atomic(p, {"b": 1, "a": [0.1, 2]})
    write_json_atomic(p, {"a": 2})
    assert json.loads(p.read_text()) == {"a": 2}
    assert [x.name for x in tmp_path.iterdir()] == ["s.json"]


def test_non_finite_numbers_are_refused():
    with pytest.raises(ValueError):
        dumps({"x": float("nan")})
