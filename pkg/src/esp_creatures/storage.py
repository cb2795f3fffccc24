"""Deterministic JSON files for creatures, populations and run artifacts.

Floats are written with Python's shortest round-trip repr and keys are
sorted, so identical objects always produce identical bytes.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from .brain import BrainGraph
from .esp import EncapsulationRecord, RunState, StageReport, StageResult
from .evolution import Individual
from .genome import (genome_from_dict, genome_to_dict, muscle_from_dict, muscle_to_dict,
                     receptor_from_dict, receptor_to_dict)

CREATURE_SCHEMA = "esp-creature/1"


class SchemaError(ValueError):
    pass


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj))


def read_json(path):
    return json.loads(Path(path).read_text())


def individual_to_dict(ind: Individual) -> dict:
    return {
        "genome": genome_to_dict(ind.genome),
        "muscles": [muscle_to_dict(m) for m in ind.muscles],
        "receptors": [receptor_to_dict(r) for r in ind.receptors],
        "brain": ind.brain.to_dict(),
        "fitness": ind.fitness,
        "retest": dict(ind.retest),
        "lineage": ind.lineage,
    }


def individual_from_dict(d: dict) -> Individual:
    return Individual(
        genome_from_dict(d["genome"]),
        tuple(muscle_from_dict(m) for m in d["muscles"]),
        tuple(receptor_from_dict(r) for r in d["receptors"]),
        BrainGraph.from_dict(d["brain"]),
        d.get("fitness"),
        dict(d.get("retest", {})),
        d.get("lineage", "0"),
    )


def write_creature(path, ind: Individual, **meta) -> None:
    write_json(path, {"schema": CREATURE_SCHEMA, "individual": individual_to_dict(ind), **meta})


def read_creature(path) -> tuple[Individual, dict]:
    d = read_json(path)
    if d.get("schema") != CREATURE_SCHEMA:
        raise SchemaError(f"{path}: expected schema {CREATURE_SCHEMA!r}, found {d.get('schema')!r}")
    meta = {k: v for k, v in d.items() if k not in ("schema", "individual")}
    return individual_from_dict(d["individual"]), meta


def write_json_atomic(path, obj) -> None:
    """Write through a temporary sibling so a killed process never leaves half a file."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(dumps(obj))
    os.replace(tmp, path)


def run_state_to_dict(state: RunState) -> dict:
    return {
        "completed": state.completed,
        "creature": individual_to_dict(state.creature) if state.creature is not None else None,
        "records": [r.to_dict() for r in state.records],
        "reports": [r.to_dict() for r in state.reports],
    }


def run_state_from_dict(d: dict) -> RunState:
    return RunState(
        int(d["completed"]),
        individual_from_dict(d["creature"]) if d.get("creature") is not None else None,
        [EncapsulationRecord.from_dict(r) for r in d.get("records", [])],
        [StageReport(**r) for r in d.get("reports", [])],
    )


def stage_result_to_dict(result: StageResult) -> dict:
    return {
        "stage": result.stage,
        "history": result.history,
        "evaluations": result.evaluations,
        "counters": dict(result.counters),
        "survivors": [individual_to_dict(i) for i in result.survivors],
        "fitness_log": [[g, s, lin, f, list(c)] for g, s, lin, f, c in result.fitness_log],
        "population": [individual_to_dict(i) for i in result.population],
    }


def stage_result_from_dict(d: dict) -> StageResult:
    return StageResult(
        int(d["stage"]), list(d["history"]), int(d["evaluations"]), dict(d["counters"]),
        [individual_from_dict(i) for i in d["survivors"]],
        [(g, s, lin, f, tuple(c)) for g, s, lin, f, c in d.get("fitness_log", [])],
        [individual_from_dict(i) for i in d.get("population", [])],
    )
