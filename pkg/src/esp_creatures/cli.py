"""Command-line runner: ``run`` a syllabus, ``replay`` a saved creature, ``report`` a run.

Exit codes: 0 success, 1 configuration or input error, 2 a stage ended below
its fitness floor, 3 the run is paused for a survivor selection.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import yaml

from .esp import (ESPConfig, ESPRunner, RunState, SelectionPending, StageFailed, StageResult,
                  SyllabusError, bundled_syllabus, control_force, load_syllabus, syllabus_from_dict,
                  syllabus_to_dict)
from .genome import GenomeError
from .physics import DEFAULT_STEPS
from .storage import (SchemaError, individual_to_dict, read_creature, read_json,
                      run_state_from_dict, run_state_to_dict, stage_result_from_dict,
                      stage_result_to_dict, write_creature, write_json, write_json_atomic)
from .tasks import TASKS, run_task

EXIT_OK, EXIT_CONFIG, EXIT_STAGE_FAILED, EXIT_PAUSED = 0, 1, 2, 3
MANIFEST_SCHEMA = "esp-run/1"


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# run directory layout


def stage_dir(out: Path, stage: int, skill: str) -> Path:
    return out / f"stage_{stage:02d}_{skill}"


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def _write_stage_evolved(out: Path, spec_id: str, result: StageResult, status: str) -> Path:
    d = stage_dir(out, result.stage, spec_id)
    d.mkdir(parents=True, exist_ok=True)
    _write_csv(d / "history.csv", ["generation", "best", "mean", "min", "evaluation_count"],
               [[h["generation"], repr(h["best"]), repr(h["mean"]), repr(h["min"]), h["evaluation_count"]]
                for h in result.history])
    _write_csv(d / "fitness_log.csv", ["stage", "generation", "slot", "lineage", "fitness", "components"],
               [[result.stage, g, s, lin, repr(f), " ".join(repr(c) for c in comps)]
                for g, s, lin, f, comps in result.fitness_log])
    write_json(d / "survivors.json", {"stage": result.stage, "skill": spec_id, "survivors": [
        {"rank": i + 1, "individual": individual_to_dict(ind)} for i, ind in enumerate(result.survivors)]})
    write_json(d / "checkpoint.json", stage_result_to_dict(result))
    write_json(d / "selection.json", {"stage": result.stage, "skill": spec_id, "rank": 1,
                                      "choices": len(result.survivors), "status": status})
    return d


def _write_stage_finished(out: Path, runner: ESPRunner, state: RunState) -> None:
    report = state.reports[-1]
    d = stage_dir(out, report.stage, report.skill)
    sel = read_json(d / "selection.json")
    sel["rank"] = report.selected
    if sel.get("status") == "pending":
        sel["status"] = "chosen"
    write_json(d / "selection.json", sel)
    write_json(d / "report.json", report.to_dict())
    force = _skill_force(runner, state, report.skill)
    write_creature(d / "best_creature.json", state.creature, skill=report.skill, task=report.task,
                   stage=report.stage, fitness=report.best_fitness, controllers=force)


def _skill_force(runner: ESPRunner, state: RunState, skill: str) -> dict:
    """Controller values, by skill name, that reproduce the stage's own evaluation."""
    names = {nid: s for s, nid in state.creature.brain.controllers().items()}
    return {names[nid]: v for nid, v in sorted(control_force(state.creature.brain, runner.syllabus, skill).items())}


def _write_state(out: Path, state: RunState, pending: int | None) -> None:
    with open(out / "stage_reports.jsonl", "w") as fh:
        for r in state.reports:
            fh.write(json.dumps(r.to_dict(), sort_keys=True, allow_nan=False) + "\n")
    write_json_atomic(out / "state.json", {**run_state_to_dict(state), "pending": pending})


# --------------------------------------------------------------------------
# run


def _resolve_syllabus(arg: str) -> Path:
    p = Path(arg)
    if p.exists():
        return p
    b = bundled_syllabus(arg)
    if b.exists():
        return b
    raise ConfigError(f"--syllabus: no file or bundled syllabus named {arg!r}")


def _workers(arg) -> int:
    if arg is not None:
        return arg
    env = os.environ.get("ESP_WORKERS")
    if env is None:
        return 1
    try:
        n = int(env)
    except ValueError:
        raise ConfigError(f"ESP_WORKERS: not an integer: {env!r}") from None
    return n


def _config_from_args(args) -> ESPConfig:
    for name in ("population", "generations", "steps"):
        v = getattr(args, name)
        if v is not None and v < (2 if name == "population" else 0):
            raise ConfigError(f"--{name}: out of range: {v}")
    workers = _workers(args.workers)
    if workers < 1:
        raise ConfigError(f"--workers: must be at least 1, got {workers}")
    return ESPConfig(mode=args.mode, master_seed=args.seed, workers=workers,
                     steps=args.steps if args.steps is not None else DEFAULT_STEPS,
                     selection=args.selection, population=args.population, generations=args.generations)


def _manifest(syllabus, cfg: ESPConfig, pause: bool) -> dict:
    c = asdict(cfg)
    c.pop("workers")   # results do not depend on the worker count
    return {"schema": MANIFEST_SCHEMA, "syllabus": syllabus_to_dict(syllabus), "mode": cfg.mode,
            "seed": cfg.master_seed, "config": c, "pause_for_selection": pause}


def cmd_run(args) -> int:
    out = Path(args.out)
    if args.resume:
        if not (out / "manifest.json").exists():
            raise ConfigError(f"--resume: {out} has no manifest.json")
        manifest = read_json(out / "manifest.json")
        if manifest.get("schema") != MANIFEST_SCHEMA:
            raise ConfigError(f"manifest.schema: expected {MANIFEST_SCHEMA!r}")
        syllabus = syllabus_from_dict(manifest["syllabus"])
        cfg = ESPConfig(**{**manifest["config"], "workers": _workers(args.workers)})
        pause = bool(manifest.get("pause_for_selection")) or args.pause_for_selection
        raw = read_json(out / "state.json") if (out / "state.json").exists() else None
        state = run_state_from_dict(raw) if raw else RunState()
        state.reports = state.reports[: state.completed]   # drop a failed stage's report
        pending = raw.get("pending") if raw else None
    else:
        if args.syllabus is None:
            raise ConfigError("--syllabus: required unless --resume is given")
        syllabus = load_syllabus(_resolve_syllabus(args.syllabus))
        cfg = _config_from_args(args)
        pause = args.pause_for_selection
        if out.exists() and any(out.iterdir()):
            raise ConfigError(f"--out: {out} is not empty; use --resume to continue a run")
        out.mkdir(parents=True, exist_ok=True)
        state, pending = RunState(), None
    runner = ESPRunner(syllabus, cfg)
    if not args.resume:
        write_json(out / "manifest.json", _manifest(syllabus, cfg, pause))
        _write_state(out, state, None)

    def finish(result: StageResult, choice: int) -> RunState:
        nonlocal state
        try:
            state = runner.finish(state, result, choice)
        except StageFailed as exc:
            _write_state(out, exc.state, None)
            write_json(stage_dir(out, result.stage, runner.stages[result.stage].id) / "report.json",
                       exc.state.reports[-1].to_dict())
            raise
        _write_stage_finished(out, runner, state)
        _write_state(out, state, None)
        return state

    if pending is not None:
        spec = runner.stages[pending]
        d = stage_dir(out, pending, spec.id)
        result = stage_result_from_dict(read_json(d / "checkpoint.json"))
        sel = read_json(d / "selection.json")
        rank = sel.get("rank")
        if not isinstance(rank, int) or not 1 <= rank <= len(result.survivors):
            raise ConfigError(f"selection.rank: must be an integer in 1..{len(result.survivors)}, got {rank!r}")
        finish(result, rank)
        _log(args, f"stage {pending} ({spec.id}): survivor {rank} selected")

    while state.completed < len(runner.stages):
        if args.stop_after is not None and state.completed >= args.stop_after:
            _log(args, f"stopped after {state.completed} stages")
            return EXIT_OK
        spec = runner.stages[state.completed]
        result = runner.evolve(state)
        _write_stage_evolved(out, spec.id, result, "pending" if pause else "auto")
        if pause:
            _write_state(out, state, result.stage)
            d = stage_dir(out, result.stage, spec.id)
            print(f"paused after stage {result.stage} ({spec.id}); edit {d / 'selection.json'} "
                  f"and rerun with --resume", file=sys.stderr)
            return EXIT_PAUSED
        finish(result, 1)
        _log(args, f"stage {result.stage} ({spec.id}): best {result.history[-1]['best']:.4f}")
    return EXIT_OK


def _log(args, msg: str) -> None:
    if not getattr(args, "quiet", False):
        print(msg, file=sys.stderr)


# --------------------------------------------------------------------------
# replay


def _parse_force(items) -> dict:
    out = {}
    for item in items or ():
        skill, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--force-controller: expected skill=value, got {item!r}")
        try:
            v = float(value)
        except ValueError:
            raise ConfigError(f"--force-controller: {skill}: not a number: {value!r}") from None
        if not 0.0 <= v <= 1.0:
            raise ConfigError(f"--force-controller: {skill}: value must lie in [0, 1]")
        out[skill] = v
    return out


def cmd_replay(args) -> int:
    ind, meta = read_creature(args.creature)
    task = args.task or meta.get("task")
    if task is None:
        raise ConfigError("--task: the creature file names no task; pass one")
    if task not in TASKS:
        raise ConfigError(f"--task: unknown task {task!r}")
    ctrls = ind.brain.controllers()
    by_skill = dict(meta.get("controllers", {}))
    by_skill.update(_parse_force(args.force_controller))
    force = {}
    for skill, v in by_skill.items():
        if skill not in ctrls:
            raise ConfigError(f"--force-controller: creature has no skill {skill!r}")
        force[ctrls[skill]] = v
    creature = ind.creature()
    res = run_task(task, creature, ind.brain, force=force, steps=args.steps or DEFAULT_STEPS,
                   export_dir=args.export)
    for label, comp in zip(res.labels, res.components):
        print(f"{label}\t{comp!r}")
    print(f"fitness\t{res.fitness!r}")
    return EXIT_OK


# --------------------------------------------------------------------------
# report


def cmd_report(args) -> int:
    from .report import write_report

    run = Path(args.run_dir)
    if not (run / "stage_reports.jsonl").exists() or not (run / "manifest.json").exists():
        raise ConfigError(f"run_dir: {run} is not a run directory (no manifest or stage reports)")
    out = Path(args.out) if args.out else run / "report"
    paths = write_report(run, out)
    for p in paths:
        print(p)
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="esp-creatures", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="evolve a syllabus stage by stage")
    r.add_argument("--syllabus", help="syllabus file (YAML/JSON) or bundled name")
    r.add_argument("--mode", choices=("fast", "general"), default="fast")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True, help="run directory")
    r.add_argument("--workers", type=int, default=None, help="evaluation processes (default: $ESP_WORKERS or 1)")
    r.add_argument("--pause-for-selection", action="store_true",
                   help="stop after each stage until selection.json is edited and --resume given")
    r.add_argument("--resume", action="store_true", help="continue the run in --out")
    r.add_argument("--stop-after", type=int, default=None, help="stop once this many stages are complete")
    r.add_argument("--population", type=int, default=None, help="override every skill's population")
    r.add_argument("--generations", type=int, default=None, help="override every skill's generations")
    r.add_argument("--steps", type=int, default=None, help=f"physics steps per evaluation (default {DEFAULT_STEPS})")
    r.add_argument("--selection", choices=("rank", "fitness_proportionate"), default="rank")
    r.add_argument("--quiet", action="store_true")
    r.set_defaults(func=cmd_run)

    rp = sub.add_parser("replay", help="re-evaluate a saved creature")
    rp.add_argument("creature")
    rp.add_argument("--task", default=None, help="task id (default: the task the creature was saved for)")
    rp.add_argument("--export", default=None, help="directory for one trajectory file per scenario")
    rp.add_argument("--force-controller", action="append", metavar="SKILL=VALUE",
                    help="hold a skill controller at VALUE; repeatable")
    rp.add_argument("--steps", type=int, default=None)
    rp.set_defaults(func=cmd_replay)

    rep = sub.add_parser("report", help="summarise a run directory as CSV, text and PNG figures")
    rep.add_argument("run_dir")
    rep.add_argument("--out", default=None, help="output directory (default: RUN_DIR/report)")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StageFailed as exc:
        print(f"stage failed: {exc}", file=sys.stderr)
        return EXIT_STAGE_FAILED
    except SelectionPending as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_PAUSED
    except (ConfigError, SyllabusError, SchemaError, GenomeError, FileNotFoundError,
            yaml.YAMLError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
