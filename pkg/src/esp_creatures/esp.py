"""Syllabus-driven skill accumulation: encapsulation, pandemonium and the two schedulers.

A syllabus lists skills with their dependencies.  Each skill is evolved in
its own stage, then encapsulated: its brain nodes are locked and every
signal leaving them is multiplied by a single controlling sigma node, so
later skills can switch it on and off as a unit.

Fast mode freezes the skeleton after the first stage, so only the new skill
is ever evaluated.  General mode lets leaf skills (those driving muscles)
keep changing the body, re-testing every earlier skill on each candidate
and afterwards giving each earlier skill a control-only budget to adapt to
the new body.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import yaml

from .brain import BrainGraph, mutate_control, random_skill_network, structural_hash_locked
from .evolution import EAConfig, Evaluation, Individual, StageOutcome, evolve_stage, rank_order, rng_for
from .genome import (MutationPolicy, mutate_morphology,
                     random_body, random_receptor, skeleton_hash)
from .physics import DEFAULT_STEPS
from .tasks import TASKS, get_task, run_task

DEFAULT_RETEST_THRESHOLD = 0.8
RECONCILE_FRACTION = 0.25
SURVIVORS = 5


class SyllabusError(ValueError):
    pass


class CyclicDependency(SyllabusError):
    pass


class LeafOrderingViolation(SyllabusError):
    pass


class AlreadyEncapsulated(ValueError):
    pass


class EmptySkill(ValueError):
    pass


class StageFailed(RuntimeError):
    """A stage ended below its fitness floor; ``state`` holds the run up to and including it."""

    def __init__(self, skill: str, best: float, floor: float, state=None, result=None, survivors=()):
        super().__init__(f"skill {skill!r} reached {best:.4f}, below its floor {floor:.4f}")
        self.skill = skill
        self.best = best
        self.floor = floor
        self.state = state
        self.result = result
        self.survivors = list(survivors)


class SelectionPending(RuntimeError):
    """Raised when a run stops to let the user pick among stage survivors."""

    def __init__(self, stage: int, result=None):
        super().__init__(f"waiting for a survivor selection after stage {stage}")
        self.stage = stage
        self.result = result


# --------------------------------------------------------------------------
# syllabus


@dataclass(frozen=True)
class SkillSpec:
    id: str
    task: str
    dependencies: tuple[str, ...] = ()
    pandemonium_partners: tuple[str, ...] = ()
    is_leaf: bool = True
    generations: int = 30
    population: int = 16
    retest_threshold: float = DEFAULT_RETEST_THRESHOLD
    floor: float = 0.0
    reconcile_generations: int | None = None
    seed_receptors: int | None = None

    def reconcile_budget(self) -> int:
        if self.reconcile_generations is not None:
            return self.reconcile_generations
        return int(round(RECONCILE_FRACTION * self.generations))

    def initial_receptors(self) -> int:
        if self.seed_receptors is not None:
            return self.seed_receptors
        uses_light = any(p.heading_deg is not None for p in get_task(self.task).scenarios.placements)
        return 2 if uses_light else 0


SKILL_FIELDS = {f for f in SkillSpec.__dataclass_fields__}


@dataclass
class Syllabus:
    skills: list[SkillSpec]
    order: list[str] | None = None
    name: str = "syllabus"

    def skill(self, skill_id: str) -> SkillSpec:
        for s in self.skills:
            if s.id == skill_id:
                return s
        raise KeyError(skill_id)

    def index(self, skill_id: str) -> int:
        return [s.id for s in self.skills].index(skill_id)

    def validate(self) -> None:
        if not self.skills:
            raise SyllabusError("syllabus has no skills")
        ids = [s.id for s in self.skills]
        if len(set(ids)) != len(ids):
            raise SyllabusError("skills: duplicate skill id")
        known = set(ids)
        for s in self.skills:
            if s.task not in TASKS:
                raise SyllabusError(f"skills.{s.id}.task: unknown task {s.task!r}")
            for d in s.dependencies:
                if d not in known:
                    raise SyllabusError(f"skills.{s.id}.dependencies: unknown skill {d!r}")
            for p in s.pandemonium_partners:
                if p not in known:
                    raise SyllabusError(f"skills.{s.id}.pandemonium_partners: unknown skill {p!r}")
                if s.id not in self.skill(p).pandemonium_partners:
                    raise SyllabusError(f"skills.{s.id}.pandemonium_partners: {p!r} does not list {s.id!r}")
            if s.is_leaf and s.dependencies:
                raise SyllabusError(f"skills.{s.id}.is_leaf: a leaf drives muscles and cannot depend on skills")
            if not s.is_leaf and not s.dependencies:
                raise SyllabusError(f"skills.{s.id}.is_leaf: a non-leaf needs dependencies to drive")
            if s.generations < 0 or s.population < 2:
                raise SyllabusError(f"skills.{s.id}: generations must be >= 0 and population >= 2")
            if not 0.0 <= s.retest_threshold <= 1.0:
                raise SyllabusError(f"skills.{s.id}.retest_threshold: must lie in [0, 1]")
        if self.order is not None:
            if sorted(self.order) != sorted(ids):
                raise SyllabusError("order: must list every skill exactly once")


def syllabus_from_dict(d: dict) -> Syllabus:
    if not isinstance(d, dict):
        raise SyllabusError("syllabus file must hold a mapping")
    raw = d.get("skills") or []
    skills = []
    for i, s in enumerate(raw):
        if not isinstance(s, dict) or "id" not in s or "task" not in s:
            raise SyllabusError(f"skills[{i}]: needs 'id' and 'task'")
        extra = set(s) - SKILL_FIELDS
        if extra:
            raise SyllabusError(f"skills[{i}].{sorted(extra)[0]}: unknown field")
        kw = dict(s)
        for key in ("dependencies", "pandemonium_partners"):
            kw[key] = tuple(kw.get(key) or ())
        skills.append(SkillSpec(**kw))
    order = d.get("order")
    syl = Syllabus(skills, list(order) if order is not None else None, str(d.get("name", "syllabus")))
    syl.validate()
    return syl


def syllabus_to_dict(syl: Syllabus) -> dict:
    out = {"name": syl.name, "skills": []}
    for s in syl.skills:
        d = asdict(s)
        d["dependencies"] = list(s.dependencies)
        d["pandemonium_partners"] = list(s.pandemonium_partners)
        out["skills"].append(d)
    if syl.order is not None:
        out["order"] = list(syl.order)
    return out


def load_syllabus(path) -> Syllabus:
    text = Path(path).read_text()
    try:
        data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise SyllabusError(f"{path}: cannot parse: {exc}") from None
    return syllabus_from_dict(data or {})


def bundled_syllabus(name: str) -> Path:
    return Path(__file__).with_name("syllabi") / f"{name}.yaml"


# --------------------------------------------------------------------------
# planning


def _topological(skills: Sequence[SkillSpec], ids: Sequence[str]) -> list[str]:
    """Kahn's algorithm; among ready skills the earliest in ``ids`` goes first."""
    deps = {s.id: set(s.dependencies) for s in skills}
    done: list[str] = []
    left = list(ids)
    while left:
        ready = [i for i in left if deps[i] <= set(done)]
        if not ready:
            raise CyclicDependency(f"dependency cycle among {sorted(left)}")
        done.append(ready[0])
        left.remove(ready[0])
    return done


def plan(syllabus: Syllabus, mode: str = "fast") -> list[SkillSpec]:
    """Stage order: the declared order (validated) or a stable topological one.

    General mode puts every leaf skill first; an explicit order that places a
    non-leaf before a leaf is rejected.
    """
    if mode not in ("fast", "general"):
        raise ValueError("mode must be 'fast' or 'general'")
    syllabus.validate()
    ids = [s.id for s in syllabus.skills]
    topo = _topological(syllabus.skills, ids)
    if syllabus.order is not None:
        pos = {sid: i for i, sid in enumerate(syllabus.order)}
        for s in syllabus.skills:
            for d in s.dependencies:
                if pos[d] > pos[s.id]:
                    raise SyllabusError(f"order: {s.id!r} is scheduled before its dependency {d!r}")
        order = list(syllabus.order)
    else:
        order = topo
    if mode == "general":
        leaf = {s.id: s.is_leaf for s in syllabus.skills}
        if syllabus.order is not None:
            seen_nonleaf = None
            for sid in order:
                if not leaf[sid]:
                    seen_nonleaf = seen_nonleaf or sid
                elif seen_nonleaf is not None:
                    raise LeafOrderingViolation(
                        f"order: non-leaf {seen_nonleaf!r} precedes leaf {sid!r}")
        order = [i for i in order if leaf[i]] + [i for i in order if not leaf[i]]
    return [syllabus.skill(i) for i in order]


# --------------------------------------------------------------------------
# encapsulation


@dataclass
class EncapsulationRecord:
    skill: str
    controller: str
    gates: list[str]
    wraps: list[str]
    locked_nodes: list[str]
    locked_wires: list[str]
    baseline_fitness: float
    task: str = ""
    order: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncapsulationRecord":
        return cls(**d)


def _wrap_muscles(b: BrainGraph) -> list[str]:
    """Put a locked sigma in front of every muscle_out that lacks one."""
    wraps = []
    for mo in [n for n in b.nodes.values() if n.kind == "muscle_out"]:
        feed = b.inputs_of(mo.id)
        if feed and b.nodes[feed[0].source].role == "wrap":
            continue
        wid = b.add_node("sigma", {"muscle": mo.params.get("muscle")}, role="wrap", locked=True)
        for w in feed:
            w.target, w.slot = wid, 0
        b.add_wire(wid, mo.id, 0, locked=True)
        mo.locked = True
        muscle = mo.params.get("muscle")
        if muscle is not None and f"pp:{muscle}" in b.nodes:
            b.nodes[f"pp:{muscle}"].locked = True
        wraps.append(wid)
    b._touch()
    return wraps


def encapsulate(brain: BrainGraph, skill_id: str, baseline_fitness: float, *,
                order: int = 0, task: str = "") -> tuple[BrainGraph, EncapsulationRecord]:
    """Lock a skill's subgraph and gate its outputs behind one controller sigma.

    Muscle outputs are first hidden behind sigma nodes (any not yet wrapped),
    then every wire leaving the skill gets a multiply node whose second input
    is the new controller.  ``order`` breaks pandemonium ties (lower wins).
    """
    if skill_id in brain.controllers():
        raise AlreadyEncapsulated(skill_id)
    b = brain.copy()
    own = {n.id for n in b.nodes.values() if n.skill_tag == skill_id and not n.locked and n.role is None}
    if not own:
        raise EmptySkill(skill_id)
    wraps = _wrap_muscles(b)
    ctrl = b.add_node("sigma", {"skill": skill_id, "order": order}, role="controller",
                      skill_tag=skill_id, locked=True)
    gates = []
    for w in list(b.wires):
        if w.source in own and w.target not in own:
            target, slot = w.target, w.slot
            g = b.add_node("multiply", {}, role="gate", skill_tag=skill_id, locked=True)
            w.target, w.slot = g, 0
            b.add_wire(ctrl, g, 1, locked=True)
            b.add_wire(g, target, slot, locked=True)
            gates.append(g)
    locked_wires = []
    for w in b.wires:
        if (w.source in own or w.target in own) and not w.locked:
            w.locked = True
            locked_wires.append(w.id)
        elif w.target in gates and w.source in own:
            w.locked = True
            locked_wires.append(w.id)
    for nid in own:
        b.nodes[nid].locked = True
    # sensors read by the skill become protected actuators
    for w in b.wires:
        if w.target in own and b.nodes[w.source].kind in ("muscle_proprio", "photoreceptor_in"):
            b.nodes[w.source].locked = True
    b._touch()
    b.check_arity()
    rec = EncapsulationRecord(skill_id, ctrl, gates, wraps, sorted(own), sorted(set(locked_wires)),
                              float(baseline_fitness), task, order)
    return b, rec


def add_pandemonium(brain: BrainGraph, skill_id: str, partners: Sequence[str]) -> None:
    """Join a skill's controller with already-encapsulated partners' controllers."""
    ctrls = brain.controllers()
    if skill_id not in ctrls:
        return
    present = [p for p in partners if p in ctrls]
    if not present:
        return
    members = {ctrls[skill_id]} | {ctrls[p] for p in present}
    keep = []
    for g in brain.pandemonium_groups:
        if members & set(g):
            members |= set(g)
        else:
            keep.append(g)
    key = lambda nid: (brain.nodes[nid].params.get("order", 0), nid)
    keep.append(sorted(members, key=key))
    brain.pandemonium_groups = keep
    brain._touch()


# --------------------------------------------------------------------------
# drive targets and mutation


def dependency_closure(syllabus: Syllabus, skill_id: str) -> set[str]:
    out, todo = set(), list(syllabus.skill(skill_id).dependencies)
    while todo:
        d = todo.pop()
        if d not in out:
            out.add(d)
            todo.extend(syllabus.skill(d).dependencies)
    return out


def drive_targets(brain: BrainGraph, spec: SkillSpec) -> list[str]:
    """Nodes a skill may feed: muscle drives for leaves, dependency controllers otherwise."""
    if not spec.is_leaf:
        ctrls = brain.controllers()
        return [ctrls[d] for d in spec.dependencies if d in ctrls]
    out = []
    for mo in sorted(n.id for n in brain.nodes.values() if n.kind == "muscle_out"):
        if mo.removeprefix("mo:") not in brain.muscle_ids:
            continue
        feed = brain.inputs_of(mo)
        if feed and brain.nodes[feed[0].source].role == "wrap":
            out.append(feed[0].source)
        else:
            out.append(mo)
    return out


def control_force(brain: BrainGraph, syllabus: Syllabus, tested: str) -> dict:
    """Controller overrides for testing one encapsulated skill in isolation.

    The tested controller is held at 1; controllers of skills it depends on
    are left to the skill itself; every other controller is held at 0.
    """
    keep = dependency_closure(syllabus, tested)
    force = {}
    for skill, nid in brain.controllers().items():
        if skill == tested:
            force[nid] = 1.0
        elif skill not in keep:
            force[nid] = 0.0
    return force


def unlocked_nodes(brain: BrainGraph, except_skill: str | None = None) -> list[str]:
    return sorted(n.id for n in brain.nodes.values()
                  if not n.locked and n.kind not in ("muscle_out", "muscle_proprio", "photoreceptor_in")
                  and n.skill_tag != except_skill)


@dataclass
class StageMutator:
    """Mutation for one stage: morphology under ``stage_mode``, then the skill's control."""

    spec: SkillSpec
    stage_mode: str
    morphology_rates: dict
    control_rates: dict
    allow_outputs: bool = True

    def __call__(self, ind: Individual, rng: np.random.Generator) -> Individual:
        if self.stage_mode != "control_only":
            policy = MutationPolicy(self.stage_mode, dict(self.morphology_rates),
                                    ind.brain.protected_actuators())
            ind.genome, ind.muscles, ind.receptors = mutate_morphology(
                ind.genome, ind.muscles, ind.receptors, policy, rng)
            ind.brain.sync_io([m.id for m in ind.muscles], [r.id for r in ind.receptors])
        ind.brain = mutate_control(ind.brain, self.spec.id, rng, drive_targets=drive_targets(ind.brain, self.spec),
                                   rates=self.control_rates, allow_outputs=self.allow_outputs)
        return ind


# --------------------------------------------------------------------------
# fitness with retest gate


@dataclass
class Retest:
    skill: str
    task: str
    baseline: float
    threshold: float
    runs: int


@dataclass
class SkillFitness:
    """Scores the stage skill; with ``retests`` applies the regression gate first.

    Retests run cheapest first.  The first skill that falls below
    ``threshold * baseline`` zeroes the individual and skips the rest,
    including the stage skill itself.
    """

    skill: str
    task: str
    syllabus: Syllabus
    retests: list[Retest] = field(default_factory=list)
    force_tested: bool = False
    steps: int = DEFAULT_STEPS

    def _run(self, ind: Individual, skill: str, task: str, isolate: bool):
        creature = ind.creature()
        force, mute = {}, ()
        if isolate:
            force = control_force(ind.brain, self.syllabus, skill)
            mute = unlocked_nodes(ind.brain, except_skill=skill)
        return run_task(task, creature, ind.brain, force=force, mute=mute, steps=self.steps)

    def __call__(self, ind: Individual) -> Evaluation:
        runs = get_task(self.task).runs
        counters = {"retests_executed": 0, "retests_skipped": 0, "skill_runs_skipped": 0}
        scores = {}
        order = sorted(range(len(self.retests)), key=lambda i: (self.retests[i].runs, i))
        for pos, i in enumerate(order):
            r = self.retests[i]
            res = self._run(ind, r.skill, r.task, True)
            counters["retests_executed"] += 1
            scores[r.skill] = res.fitness
            if res.fitness < r.threshold * r.baseline:
                counters["retests_skipped"] += len(order) - pos - 1
                counters["skill_runs_skipped"] += runs
                return Evaluation(0.0, 0, counters, scores)
        res = self._run(ind, self.skill, self.task, self.force_tested)
        return Evaluation(res.fitness, res.evaluations, counters, scores, tuple(res.components))


# --------------------------------------------------------------------------
# run state and stage reports


@dataclass
class StageReport:
    stage: int
    skill: str
    task: str
    mode: str
    phase: str
    history: list[dict]
    evaluation_count: int
    predicted_evaluations: int
    retests_executed: int
    retests_skipped: int
    predicted_retests: int
    skeleton_hash_before: str
    skeleton_hash_after: str
    locked_hash_before: str
    locked_hash_after: str
    best_fitness: float
    encapsulation: dict | None = None
    reconciliation: list[dict] = field(default_factory=list)
    baselines: dict = field(default_factory=dict)
    survivors: list[dict] = field(default_factory=list)
    selected: int = 1

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunState:
    """Everything needed to continue a run at the next stage."""

    completed: int = 0
    creature: Individual | None = None
    records: list[EncapsulationRecord] = field(default_factory=list)
    reports: list[StageReport] = field(default_factory=list)


@dataclass
class StageResult:
    """An evolved stage awaiting the choice of which survivor carries on."""

    stage: int
    history: list[dict]
    evaluations: int
    counters: dict
    survivors: list[Individual]
    fitness_log: list[tuple] = field(default_factory=list)
    population: list[Individual] = field(default_factory=list)


@dataclass
class ESPConfig:
    mode: str = "fast"
    master_seed: int = 0
    workers: int = 1
    steps: int = DEFAULT_STEPS
    selection: str = "rank"
    elite_count: int = 1
    population: int | None = None      # overrides every skill's population
    generations: int | None = None     # overrides every skill's generation budget
    retest_threshold: float | None = None
    reconcile_generations: int | None = None

    def ea(self, spec: SkillSpec, generations: int | None = None) -> EAConfig:
        return EAConfig(
            population_size=self.population or spec.population,
            generations=spec.generations if generations is None else generations,
            elite_count=self.elite_count,
            selection=self.selection,
            master_seed=self.master_seed,
            workers=self.workers,
        )

    def effective(self, spec: SkillSpec) -> SkillSpec:
        kw = {}
        if self.population is not None:
            kw["population"] = self.population
        if self.generations is not None:
            kw["generations"] = self.generations
        if self.retest_threshold is not None:
            kw["retest_threshold"] = self.retest_threshold
        if self.reconcile_generations is not None:
            kw["reconcile_generations"] = self.reconcile_generations
        if not kw:
            return spec
        return SkillSpec(**{**asdict(spec), **kw})


def _history_rows(outcome: StageOutcome) -> list[dict]:
    return [asdict(h) for h in outcome.history]


def _survivors(pop: Sequence[Individual], n: int = SURVIVORS) -> list[Individual]:
    order = rank_order([ind.fitness for ind in pop])
    return [pop[int(i)] for i in order[:n]]


# --------------------------------------------------------------------------
# scheduler


Selector = Callable[[int, list[Individual]], int | None]


class ESPRunner:
    """Runs a syllabus stage by stage.

    ``select`` chooses which of a finished stage's survivors (1-based rank)
    carries on; returning ``None`` pauses the run with ``SelectionPending``.
    ``on_stage`` is called after every stage with the updated state, the
    final population and the survivors, so callers can write artifacts.
    """

    def __init__(self, syllabus: Syllabus, config: ESPConfig):
        self.syllabus = syllabus
        self.config = config
        self.stages = [config.effective(s) for s in plan(syllabus, config.mode)]

    # -- helpers ---------------------------------------------------------

    def _order(self, skill: str) -> int:
        return self.syllabus.index(skill)

    def _initial_population(self, stage: int, spec: SkillSpec, parent: Individual | None) -> list[Individual]:
        n = self.config.population or spec.population
        pop = []
        for slot in range(n):
            rng = rng_for(self.config.master_seed, stage, 0, slot, 1)
            if parent is None:
                genome, muscles, receptors = random_body(rng)
                ind = Individual(genome, muscles, receptors, BrainGraph(), lineage=f"{stage}-0-{slot}")
            else:
                ind = parent.copy().invalidate()
                ind.lineage = f"{stage}-0-{slot}"
            receptors = list(ind.receptors)
            taken = [r.id for r in receptors] + list(ind.brain.protected_actuators())
            k = 0
            for _ in range(spec.initial_receptors()):
                while f"r{k}" in taken:
                    k += 1
                rid = f"r{k}"
                taken.append(rid)
                receptors.append(random_receptor(rng, rid, ind.genome))
            ind.receptors = tuple(receptors)
            ind.brain.sync_io([m.id for m in ind.muscles], [r.id for r in ind.receptors])
            ind.brain = random_skill_network(ind.brain, spec.id, rng, drive_targets(ind.brain, spec))
            pop.append(ind)
        return pop

    def _morph_mode(self, stage: int, spec: SkillSpec) -> str:
        if stage == 0:
            return "free"
        if self.config.mode == "general" and spec.is_leaf:
            return "free"
        return "actuators_only"

    def _retests(self, state: RunState, spec: SkillSpec) -> list[Retest]:
        if self.config.mode != "general" or not spec.is_leaf:
            return []
        out = []
        for rec in state.records:
            s = self.syllabus.skill(rec.skill)
            out.append(Retest(rec.skill, rec.task, rec.baseline_fitness, spec.retest_threshold,
                              get_task(s.task).runs))
        return out

    # -- stages ----------------------------------------------------------

    def evolve(self, state: RunState) -> StageResult:
        """Evolve the next stage's population; nothing is chosen or locked yet."""
        stage = state.completed
        spec = self.stages[stage]
        ea = self.config.ea(spec)
        retests = self._retests(state, spec)
        fitness = SkillFitness(spec.id, spec.task, self.syllabus, retests, False, self.config.steps)
        mutator = StageMutator(spec, self._morph_mode(stage, spec), ea.morphology_rates, ea.control_rates)
        outcome = evolve_stage(self._initial_population(stage, spec, state.creature), fitness, ea, mutator,
                               stage_key=(stage, 0))
        return StageResult(stage, _history_rows(outcome), outcome.evaluations, dict(outcome.counters),
                           _survivors(outcome.population), outcome.fitness_log, outcome.population)

    def finish(self, state: RunState, result: StageResult, choice: int = 1) -> RunState:
        """Carry survivor ``choice`` (1-based rank) forward: reconcile, encapsulate, report."""
        stage = result.stage
        if stage != state.completed:
            raise ValueError(f"stage result {stage} does not follow {state.completed} completed stages")
        spec = self.stages[stage]
        if not 1 <= choice <= len(result.survivors):
            raise ValueError(f"survivor rank {choice} out of range 1..{len(result.survivors)}")
        parent = state.creature
        ea = self.config.ea(spec)
        retests = self._retests(state, spec)
        chosen = result.survivors[choice - 1].copy()
        best = float(result.history[-1]["best"])
        skel_before = skeleton_hash(parent.genome) if parent is not None else ""
        lock_before = structural_hash_locked(parent.brain if parent is not None else BrainGraph())

        runs = get_task(spec.task).runs
        passes = max(ea.generations, 1)
        predicted = ea.population_size * passes * runs
        predicted_retests = ea.population_size * passes * len(retests)
        measured = result.evaluations + result.counters.get("skill_runs_skipped", 0)

        records = list(state.records)
        reconciliation = []
        if retests:
            chosen, records, reconciliation = self.reconcile(chosen, records, spec, stage)
        rec = None
        if best >= spec.floor:
            chosen.brain, rec = encapsulate(chosen.brain, spec.id, chosen.fitness,
                                            order=self._order(spec.id), task=spec.task)
            add_pandemonium(chosen.brain, spec.id, spec.pandemonium_partners)
            records.append(rec)
        report = self._report(stage, spec, result, predicted, predicted_retests, measured,
                              skel_before, lock_before, chosen, rec, reconciliation, records, choice, best)
        if rec is None:
            failed = RunState(state.completed, state.creature, state.records, state.reports + [report])
            raise StageFailed(spec.id, best, spec.floor, failed, result, result.survivors)
        return RunState(stage + 1, chosen, records, state.reports + [report])

    def run_stage(self, state: RunState, select: Selector | None = None) -> tuple[RunState, StageResult]:
        result = self.evolve(state)
        choice = 1 if select is None else select(result.stage, result.survivors)
        if choice is None:
            raise SelectionPending(result.stage, result)
        return self.finish(state, result, choice), result

    def _report(self, stage, spec, result, predicted, predicted_retests, measured, skel_before,
                lock_before, chosen, rec, reconciliation, records, choice, best) -> StageReport:
        return StageReport(
            stage=stage, skill=spec.id, task=spec.task, mode=self.config.mode,
            phase="evolve_with_retest" if self.config.mode == "general" and spec.is_leaf else "evolve",
            history=result.history, evaluation_count=measured,
            predicted_evaluations=predicted,
            retests_executed=int(result.counters.get("retests_executed", 0)),
            retests_skipped=int(result.counters.get("retests_skipped", 0)),
            predicted_retests=predicted_retests,
            skeleton_hash_before=skel_before, skeleton_hash_after=skeleton_hash(chosen.genome),
            locked_hash_before=lock_before, locked_hash_after=structural_hash_locked(chosen.brain),
            best_fitness=best, encapsulation=rec.to_dict() if rec is not None else None,
            reconciliation=reconciliation,
            baselines={r.skill: r.baseline_fitness for r in records},
            survivors=[{"rank": i + 1, "lineage": s.lineage, "fitness": s.fitness}
                       for i, s in enumerate(result.survivors)],
            selected=choice,
        )

    def reconcile(self, creature: Individual, records: list[EncapsulationRecord], spec: SkillSpec,
                  stage: int) -> tuple[Individual, list[EncapsulationRecord], list[dict]]:
        """Control-only re-adaptation of every existing skill to the current body."""
        budget = spec.reconcile_budget()
        reports = []
        new_records = []
        for k, rec in enumerate(records):
            if budget <= 0:
                new_records.append(rec)
                continue
            sspec = self.syllabus.skill(rec.skill)
            before_skel = skeleton_hash(creature.genome)
            creature, sub = reconcile_skill(creature, rec, self.syllabus, sspec,
                                            self.config.ea(sspec, budget),
                                            stage_key=(stage, k + 1), steps=self.config.steps,
                                            population=self.config.population or spec.population)
            assert skeleton_hash(creature.genome) == before_skel
            reports.append(sub)
            new_records.append(EncapsulationRecord(**{**rec.to_dict(), "baseline_fitness": sub["after"]}))
        if budget <= 0:
            # baselines still track the current body
            refreshed = []
            for rec in new_records:
                fit = SkillFitness(rec.skill, rec.task, self.syllabus, [], True, self.config.steps)
                score = fit(creature).fitness
                refreshed.append(EncapsulationRecord(**{**rec.to_dict(), "baseline_fitness": score}))
            new_records = refreshed
        return creature, new_records, reports

    def run(self, state: RunState | None = None, *, select: Selector | None = None,
            on_stage: Callable[[RunState, StageResult], None] | None = None,
            stop_after: int | None = None) -> RunState:
        state = state or RunState()
        while state.completed < len(self.stages):
            if stop_after is not None and state.completed >= stop_after:
                break
            state, result = self.run_stage(state, select)
            if on_stage is not None:
                on_stage(state, result)
        return state


def _unlock_skill(brain: BrainGraph, skill: str) -> tuple[set, set]:
    """Unlock a skill's computing nodes and their internal/input wires."""
    own = {n.id for n in brain.nodes.values() if n.skill_tag == skill and n.role is None}
    nodes, wires = set(), set()
    for nid in own:
        if brain.nodes[nid].locked:
            brain.nodes[nid].locked = False
            nodes.add(nid)
    for w in brain.wires:
        if w.target in own and w.locked:
            w.locked = False
            wires.add(w.id)
    brain._touch()
    return nodes, wires


def _relock_skill(brain: BrainGraph, skill: str) -> None:
    own = {n.id for n in brain.nodes.values() if n.skill_tag == skill and n.role is None}
    for nid in own:
        brain.nodes[nid].locked = True
    for w in brain.wires:
        if w.target in own or w.source in own:
            w.locked = True
            src = brain.nodes[w.source]
            if src.kind in ("muscle_proprio", "photoreceptor_in"):
                src.locked = True
    brain._touch()


def reconcile_skill(creature: Individual, rec: EncapsulationRecord, syllabus: Syllabus,
                    spec: SkillSpec, ea: EAConfig, *, stage_key=(0, 1), steps: int = DEFAULT_STEPS,
                    population: int | None = None) -> tuple[Individual, dict]:
    """Evolve one encapsulated skill's control for ``ea.generations`` with the body locked."""
    base = creature.copy().invalidate()
    _unlock_skill(base.brain, rec.skill)
    ea = EAConfig(**{**asdict(ea), "population_size": population or ea.population_size})
    fitness = SkillFitness(rec.skill, rec.task, syllabus, [], True, steps)
    mutator = StageMutator(spec, "control_only", ea.morphology_rates, ea.control_rates, allow_outputs=False)
    before = fitness(base).fitness
    pop = [base.copy() for _ in range(ea.population_size)]
    outcome = evolve_stage(pop, fitness, ea, mutator, stage_key=stage_key)
    best = outcome.best.copy()
    _relock_skill(best.brain, rec.skill)
    best.fitness = creature.fitness
    sub = {"skill": rec.skill, "generations": ea.generations, "before": before,
           "after": float(outcome.history[-1].best), "history": _history_rows(outcome),
           "evaluation_count": outcome.evaluations}
    return best, sub


def run_fast_esp(syllabus: Syllabus, ea_config: ESPConfig | None = None, seed: int | None = None):
    cfg = ea_config or ESPConfig()
    cfg = ESPConfig(**{**asdict(cfg), "mode": "fast", **({"master_seed": seed} if seed is not None else {})})
    state = ESPRunner(syllabus, cfg).run()
    return state.creature, state.reports


def run_general_esp(syllabus: Syllabus, ea_config: ESPConfig | None = None, seed: int | None = None):
    cfg = ea_config or ESPConfig()
    cfg = ESPConfig(**{**asdict(cfg), "mode": "general", **({"master_seed": seed} if seed is not None else {})})
    state = ESPRunner(syllabus, cfg).run()
    return state.creature, state.reports
