"""Fitness library: scenario layouts and trajectory scores for every skill.

Each task owns a list of placements (light heading, light kind, distance).
Running a task evaluates the creature once per placement and reduces the
trajectories to a scalar in [0, 1].  Headings are measured from the
creature's starting forward axis (the root segment's local +x), counter-
clockwise positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .brain import BrainGraph
from .genome import Creature
from .physics import DEFAULT_STEPS, GRAVITY, Light, Trajectory, evaluate, export_trajectory

SIGMA_STEP = 0.01       # m/s
S_MAX = 2.0             # m/s
WORK_CAP = 500.0        # J per 10 s of evaluation
D_NORM = 5.0            # m, retreat normaliser
DRIFT_NORM = 1.0        # m, turn position-hold normaliser
REACH_HALF = 2.0        # m, peak height that scores 0.5 on high reach
LIGHT_HEIGHT = 0.5      # m
LIGHT_DISTANCE = 3.0    # m, default target distance
MOVE_DISTANCE = 5.0     # m, move-to-light target distance
STRIKE_RATIO = 1.5      # strike event threshold, multiples of weight support
STRIKE_NORM = 3.0       # strike fitness normaliser, multiples of weight support
SETTLE_STEPS = 60       # impacts while the body settles are ignored
WRONG_WAY_PENALTY = 0.25
WRONG_WAY_WINDOW = 1.0  # s
FOF_DIRECTIONS = 4
DANGEROUS_STRENGTH = 2.0

TURN_AWAY_HEADINGS = (0, 15, -15, 30, -30, 45, -45, 60, -60, 90, -90, 135, -135)


def _clamp01(x: float) -> float:
    return min(max(float(x), 0.0), 1.0)


# --------------------------------------------------------------------------
# closed-form scores


@dataclass(frozen=True)
class LocomotionFitnessParams:
    sigma_step: float = SIGMA_STEP
    s_max: float = S_MAX
    work_cap: float = WORK_CAP


def locomotion_score(s: float, eps: float, sigma: float = SIGMA_STEP, s_max: float = S_MAX) -> float:
    """Discretised speed with efficiency interleaved as the fractional part.

    The floor is capped one step below ``s_max / sigma`` so the maximum is
    exactly 1.
    """
    if not 0.0 <= eps <= 1.0:
        raise ValueError("efficiency must lie in [0, 1]")
    s = min(max(s, 0.0), s_max)
    steps = min(math.floor(s / sigma), round(s_max / sigma) - 1)
    return sigma * (steps + eps) / s_max


@dataclass(frozen=True)
class FightOrFlightScore:
    n: int
    f_plus: float
    f_minus: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if self.f_minus > self.f_plus + 1e-12:
            raise ValueError("f_minus cannot exceed f_plus")

    @classmethod
    def from_components(cls, attack: Sequence[float], retreat: Sequence[float]) -> "FightOrFlightScore":
        if len(attack) != len(retreat) or not attack:
            raise ValueError("need one attack and one retreat score per direction")
        hi = [max(a, r) for a, r in zip(attack, retreat)]
        lo = [min(a, r) for a, r in zip(attack, retreat)]
        return cls(len(attack), sum(hi) / len(hi), sum(lo) / len(lo))


def fitness_fight_or_flight(score: FightOrFlightScore) -> float:
    """Weights the weaker component of every direction 2n times the stronger."""
    n = score.n
    return (score.f_plus + 2 * n * score.f_minus) / (2 * n + 1)


# --------------------------------------------------------------------------
# trajectory measurements


def _duration(traj: Trajectory) -> float:
    return traj.steps * traj.dt


def _horizontal(a, b) -> float:
    return float(math.hypot(b[0] - a[0], b[1] - a[1]))


def net_yaw(traj: Trajectory) -> float:
    """Unwrapped change of root heading over the run (radians, ccw positive)."""
    h = np.concatenate([[traj.start_heading], traj.headings])
    return float(np.sum(np.angle(np.exp(1j * np.diff(h)))))


def heading_errors(traj: Trajectory, light: int = 0) -> np.ndarray:
    """Per-step angle between the root's forward axis and the direction to a light."""
    lp = traj.lights[light].position
    rp = traj.root_positions
    bearing = np.arctan2(lp[1] - rp[:, 1], lp[0] - rp[:, 0])
    return np.angle(np.exp(1j * (bearing - traj.headings)))


def light_distances(traj: Trajectory, light: int = 0) -> np.ndarray:
    lp = traj.lights[light].position
    rp = traj.root_positions
    return np.hypot(lp[0] - rp[:, 0], lp[1] - rp[:, 1])


def start_distance(traj: Trajectory, light: int = 0) -> float:
    return _horizontal(traj.start_position, traj.lights[light].position)


def strike_excess(traj: Trajectory) -> np.ndarray:
    """Per-step ground impulse beyond weight support on strike steps, else 0."""
    w = traj.weight_impulse
    j = np.array(traj.ground_impulse, dtype=float)
    j[: min(SETTLE_STEPS, len(j))] = 0.0
    return np.where(j > STRIKE_RATIO * w, j - w, 0.0)


def first_strike(traj: Trajectory) -> int | None:
    hits = np.nonzero(strike_excess(traj) > 0.0)[0]
    return int(hits[0]) if hits.size else None


def _window(traj: Trajectory) -> int:
    return min(traj.steps, int(round(WRONG_WAY_WINDOW / traj.dt)))


def wrong_way_penalty(traj: Trajectory) -> float:
    """Penalty for facing the light during the opening second."""
    n = _window(traj)
    if n == 0:
        return 0.0
    cos = np.cos(heading_errors(traj)[:n])
    return WRONG_WAY_PENALTY * max(0.0, float(np.mean(np.maximum(cos, 0.0))))


def _bad(traj: Trajectory) -> bool:
    return traj.blew_up or traj.steps == 0


# --------------------------------------------------------------------------
# per-skill fitness


def fitness_locomotion(traj: Trajectory, params: LocomotionFitnessParams | None = None) -> float:
    """Net horizontal root speed, with efficiency interleaved below each speed step."""
    p = params or LocomotionFitnessParams()
    if _bad(traj):
        return 0.0
    s = _horizontal(traj.start_position, traj.root_positions[-1]) / _duration(traj)
    cap = p.work_cap * _duration(traj) / 10.0
    eps = _clamp01(1.0 - float(traj.work[-1]) / cap)
    return locomotion_score(s, eps, p.sigma_step, p.s_max)


def fitness_turn(traj: Trajectory, direction: str) -> float:
    if direction not in ("ccw", "cw"):
        raise ValueError("direction must be 'ccw' or 'cw'")
    if _bad(traj):
        return 0.0
    yaw = net_yaw(traj)
    if direction == "cw":
        yaw = -yaw
    drift = _horizontal(traj.start_position, traj.root_positions[-1])
    return _clamp01(yaw / (2 * math.pi)) * max(0.0, 1.0 - drift / DRIFT_NORM)


def _facing(traj: Trajectory) -> float:
    if _bad(traj):
        return 0.0
    return float(np.mean(np.maximum(np.cos(heading_errors(traj)), 0.0)))


def fitness_turn_to_light(trajs: Sequence[Trajectory]) -> float:
    return float(np.mean([_facing(t) for t in trajs]))


def _approach(traj: Trajectory) -> float:
    if _bad(traj):
        return 0.0
    d0 = start_distance(traj)
    return _clamp01((d0 - float(light_distances(traj)[-1])) / d0)


def fitness_move_to_light(trajs: Sequence[Trajectory]) -> float:
    return float(np.mean([_approach(t) for t in trajs]))


def fitness_strike(traj: Trajectory) -> float:
    if _bad(traj):
        return 0.0
    return _clamp01(float(np.max(strike_excess(traj), initial=0.0)) / (STRIKE_NORM * traj.weight_impulse))


def _attack_run(traj: Trajectory) -> float:
    if _bad(traj) or traj.died:
        return 0.0
    t = first_strike(traj)
    if t is None:
        return 0.0
    return max(0.0, 1.0 - float(light_distances(traj)[t]) / start_distance(traj))


def _dark_factor(dark: Trajectory | None) -> float:
    if dark is None:
        return 1.0
    return 0.0 if first_strike(dark) is not None else 1.0


def fitness_attack(lit: Sequence[Trajectory], dark: Trajectory | None = None) -> float:
    return float(np.mean([_attack_run(t) for t in lit])) * _dark_factor(dark)


def _turn_away_run(traj: Trajectory) -> float:
    if _bad(traj):
        return 0.0
    n = _window(traj)
    rest = heading_errors(traj)[n:]
    main = float(np.mean(np.maximum(-np.cos(rest), 0.0))) if rest.size else 0.0
    return _clamp01(main - wrong_way_penalty(traj))


def fitness_turn_from_light(trajs: Sequence[Trajectory]) -> float:
    return float(np.mean([_turn_away_run(t) for t in trajs]))


def _retreat_run(traj: Trajectory) -> float:
    if _bad(traj) or traj.died:
        return 0.0
    gain = (float(light_distances(traj)[-1]) - start_distance(traj)) / D_NORM
    return _clamp01(_clamp01(gain) - wrong_way_penalty(traj))


def fitness_retreat(trajs: Sequence[Trajectory]) -> float:
    return float(np.mean([_retreat_run(t) for t in trajs]))


def fitness_high_reach(traj: Trajectory) -> float:
    """Greatest height reached by any segment after settling, squashed as h / (h + REACH_HALF).

    Jumping bodies reach anywhere from under a metre to over ten, so a
    linear clamp would saturate and stop ranking them.
    """
    if _bad(traj):
        return 0.0
    h = max(float(np.max(traj.top_height[min(SETTLE_STEPS, traj.steps - 1):])), 0.0)
    return h / (h + REACH_HALF)


# --------------------------------------------------------------------------
# scenarios and task registry


@dataclass(frozen=True)
class Placement:
    heading_deg: float | None   # None: no light in the scene
    kind: str = "vulnerable"
    distance: float = LIGHT_DISTANCE

    @property
    def label(self) -> str:
        if self.heading_deg is None:
            return "dark"
        return f"{self.kind}@{self.heading_deg:g}"

    def lights(self, difficulty: float = 1.0) -> tuple[Light, ...]:
        if self.heading_deg is None:
            return ()
        a = math.radians(self.heading_deg)
        d = self.distance * difficulty
        strength = DANGEROUS_STRENGTH if self.kind == "dangerous" else 1.0
        return (Light((d * math.cos(a), d * math.sin(a), LIGHT_HEIGHT), strength, self.kind),)


@dataclass(frozen=True)
class ScenarioSet:
    task: str
    placements: tuple[Placement, ...]

    def __len__(self) -> int:
        return len(self.placements)


@dataclass(frozen=True)
class TaskSpec:
    id: str
    scenarios: ScenarioSet
    reduce: Callable[[list[Trajectory]], tuple[float, list[float]]]
    description: str = ""

    @property
    def runs(self) -> int:
        return len(self.scenarios)


def _per_run(score_one):
    def reduce(trajs):
        comps = [score_one(t) for t in trajs]
        return float(np.mean(comps)), comps
    return reduce


def _attack_reduce(trajs):
    lit, dark = trajs[:-1], trajs[-1]
    comps = [_attack_run(t) for t in lit]
    factor = _dark_factor(dark)
    return float(np.mean(comps)) * factor, comps + [factor]


def _fof_reduce(trajs):
    n = FOF_DIRECTIONS
    vulnerable, dangerous, dark = trajs[:n], trajs[n:2 * n], trajs[2 * n]
    factor = _dark_factor(dark)
    attack = [_attack_run(t) * factor for t in vulnerable]
    retreat = [_retreat_run(t) for t in dangerous]
    score = FightOrFlightScore.from_components(attack, retreat)
    return fitness_fight_or_flight(score), attack + retreat + [factor]


def _spread(n: int, offset: float = 0.0) -> tuple[float, ...]:
    return tuple(offset + 360.0 * i / n for i in range(n))


def _build_tasks() -> dict[str, TaskSpec]:
    one = (Placement(None),)
    fof_dirs = _spread(FOF_DIRECTIONS, 45.0)
    specs = [
        TaskSpec("locomotion", ScenarioSet("locomotion", one), _per_run(fitness_locomotion),
                 "forward speed with efficiency"),
        TaskSpec("turn_left", ScenarioSet("turn_left", one), _per_run(lambda t: fitness_turn(t, "ccw")),
                 "counterclockwise rotation in place"),
        TaskSpec("turn_right", ScenarioSet("turn_right", one), _per_run(lambda t: fitness_turn(t, "cw")),
                 "clockwise rotation in place"),
        TaskSpec("turn_to_light", ScenarioSet("turn_to_light", tuple(Placement(h) for h in _spread(4, 45.0))),
                 _per_run(_facing), "face a light"),
        TaskSpec("move_to_light",
                 ScenarioSet("move_to_light", tuple(Placement(h, distance=MOVE_DISTANCE) for h in _spread(5))),
                 _per_run(_approach), "close the distance to a light"),
        TaskSpec("strike", ScenarioSet("strike", one), _per_run(fitness_strike), "hit the ground hard"),
        TaskSpec("attack", ScenarioSet("attack", tuple(Placement(h) for h in _spread(4, 45.0)) + one),
                 _attack_reduce, "strike close to a light, never in the dark"),
        TaskSpec("turn_from_light",
                 ScenarioSet("turn_from_light", tuple(Placement(h) for h in TURN_AWAY_HEADINGS)),
                 _per_run(_turn_away_run), "face away from a light"),
        TaskSpec("retreat", ScenarioSet("retreat", tuple(Placement(h) for h in TURN_AWAY_HEADINGS)),
                 _per_run(_retreat_run), "increase the distance to a light"),
        TaskSpec("fight_or_flight",
                 ScenarioSet("fight_or_flight",
                             tuple(Placement(h) for h in fof_dirs)
                             + tuple(Placement(h, "dangerous") for h in fof_dirs) + one),
                 _fof_reduce, "attack vulnerable lights, retreat from dangerous ones"),
        TaskSpec("high_reach", ScenarioSet("high_reach", one), _per_run(fitness_high_reach),
                 "lift any segment as high as possible"),
    ]
    return {s.id: s for s in specs}


TASKS: dict[str, TaskSpec] = _build_tasks()


def get_task(task_id: str) -> TaskSpec:
    try:
        return TASKS[task_id]
    except KeyError:
        raise KeyError(f"unknown task {task_id!r}; known: {', '.join(sorted(TASKS))}") from None


@dataclass
class TaskResult:
    task: str
    fitness: float
    components: list[float]
    labels: list[str]
    evaluations: int
    trajectories: list[Trajectory] = field(default_factory=list, repr=False)


def run_task(task_id: str, creature: Creature, brain: BrainGraph | None = None, *,
             force: dict | None = None, mute=(), steps: int = DEFAULT_STEPS,
             difficulty: float = 1.0, keep_trajectories: bool = False,
             export_dir: str | Path | None = None, gravity: float = GRAVITY) -> TaskResult:
    """Evaluate a creature on every scenario of a task and reduce to one fitness."""
    spec = get_task(task_id)
    brain = brain if brain is not None else creature.brain
    trajs = []
    for p in spec.scenarios.placements:
        if brain is not None:
            brain.reset()
        trajs.append(evaluate(creature, p.lights(difficulty), steps, brain=brain, force=force,
                              mute=mute, gravity=gravity))
    fitness, comps = spec.reduce(trajs)
    labels = [p.label for p in spec.scenarios.placements]
    if export_dir is not None:
        out = Path(export_dir)
        out.mkdir(parents=True, exist_ok=True)
        for i, (p, t) in enumerate(zip(spec.scenarios.placements, trajs)):
            export_trajectory(t, out / f"{task_id}_{i:02d}_{p.label.replace('@', '_')}.jsonl")
    return TaskResult(task_id, _clamp01(fitness), [float(c) for c in comps], labels, len(trajs),
                      trajs if keep_trajectories else [])
