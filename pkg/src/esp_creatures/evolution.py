"""Generational, mutation-only evolutionary algorithm.

Every generation evaluates the whole population, copies the elites
unchanged, and fills the remaining slots with mutated copies of parents
chosen by rank or fitness-proportionate selection.  All randomness comes
from generators seeded by ``(master_seed, *stage_key, generation, slot)``,
so results do not depend on evaluation order or worker count.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .brain import CONTROL_RATES, BrainGraph
from .genome import (DEFAULT_RATES, Creature, MorphologyGenome, MuscleGene, PhotoreceptorGene,
                     express)

SELECTION_SCHEMES = ("rank", "fitness_proportionate")
RANK_PRESSURE = 1.8
_SELECT_SLOT = 2**31 - 1


@dataclass
class Individual:
    genome: MorphologyGenome
    muscles: tuple[MuscleGene, ...]
    receptors: tuple[PhotoreceptorGene, ...]
    brain: BrainGraph
    fitness: float | None = None
    retest: dict = field(default_factory=dict)
    lineage: str = "0"

    def creature(self) -> Creature:
        c = express(self.genome, self.muscles, self.receptors)
        self.brain.sync_io([m.id for m in self.muscles], [r.id for r in self.receptors])
        c.brain = self.brain
        return c

    def copy(self) -> "Individual":
        return replace(self, brain=self.brain.copy(), retest=dict(self.retest))

    def invalidate(self) -> "Individual":
        self.fitness = None
        self.retest = {}
        return self


@dataclass
class EAConfig:
    population_size: int = 16
    generations: int = 30
    elite_count: int = 1
    selection: str = "rank"
    rank_pressure: float = RANK_PRESSURE
    morphology_rates: dict = field(default_factory=lambda: dict(DEFAULT_RATES))
    control_rates: dict = field(default_factory=lambda: dict(CONTROL_RATES))
    master_seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.elite_count < 1:
            raise ValueError("elite_count must be at least 1")
        if self.population_size < 2 * self.elite_count:
            raise ValueError("population_size must be at least twice elite_count")
        if self.generations < 0:
            raise ValueError("generations must be non-negative")
        if self.selection not in SELECTION_SCHEMES:
            raise ValueError(f"selection must be one of {SELECTION_SCHEMES}")
        if not 1.0 <= self.rank_pressure <= 2.0:
            raise ValueError("rank_pressure must lie in [1, 2]")


@dataclass
class Evaluation:
    """Outcome of scoring one individual."""

    fitness: float
    evaluations: int = 1
    counters: dict = field(default_factory=dict)
    retest: dict = field(default_factory=dict)
    components: tuple = ()


@dataclass
class GenerationStats:
    generation: int
    best: float
    mean: float
    min: float
    evaluation_count: int


def rng_for(master_seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), *(int(k) for k in key)]))


# --------------------------------------------------------------------------
# selection


def selection_probabilities(scores: Sequence[float], scheme: str = "rank",
                            pressure: float = RANK_PRESSURE) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    n = len(s)
    if n == 0:
        raise ValueError("empty population")
    if scheme == "fitness_proportionate":
        s = np.where(np.isfinite(s), np.maximum(s, 0.0), 0.0)
        total = s.sum()
        return s / total if total > 0 else np.full(n, 1.0 / n)
    if scheme != "rank":
        raise ValueError(f"unknown selection scheme {scheme!r}")
    if n == 1:
        return np.ones(1)
    order = rank_order(s)           # best first
    rank = np.empty(n)
    rank[order] = np.arange(n - 1, -1, -1)  # best gets n-1
    return (2.0 - pressure) / n + 2.0 * rank * (pressure - 1.0) / (n * (n - 1))


def rank_order(scores: Sequence[float]) -> np.ndarray:
    """Indices sorted best first; ties keep population order."""
    s = np.asarray(scores, dtype=float)
    s = np.where(np.isfinite(s), s, -np.inf)
    return np.array(sorted(range(len(s)), key=lambda i: (-s[i], i)), dtype=np.int64)


def select_parent(scored_population, scheme: str, rng: np.random.Generator,
                  pressure: float = RANK_PRESSURE):
    """Pick one member of a list of ``(individual, score)`` pairs."""
    if not scored_population:
        raise ValueError("empty population")
    p = selection_probabilities([s for _, s in scored_population], scheme, pressure)
    return scored_population[int(rng.choice(len(p), p=p))][0]


# --------------------------------------------------------------------------
# evaluation fan-out


def _score(fitness_fn, ind):
    out = fitness_fn(ind)
    return out if isinstance(out, Evaluation) else Evaluation(float(out))


def evaluate_population(population: Sequence[Individual], fitness_fn, workers: int = 1) -> list[Evaluation]:
    """Score every individual; results are index-ordered regardless of ``workers``."""
    if workers <= 1 or len(population) <= 1:
        return [_score(fitness_fn, ind) for ind in population]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_score, itertools.repeat(fitness_fn), population))


# --------------------------------------------------------------------------
# the stage loop


@dataclass
class StageOutcome:
    population: list[Individual]
    best: Individual
    history: list[GenerationStats]
    evaluations: int
    counters: dict
    fitness_log: list[tuple] = field(default_factory=list)


def evolve_stage(initial_population: Sequence[Individual],
                 fitness_fn: Callable[[Individual], Evaluation | float],
                 config: EAConfig,
                 mutate: Callable[[Individual, np.random.Generator], Individual],
                 *, stage_key: Sequence[int] = (0,),
                 on_generation: Callable[[int, list[Individual]], None] | None = None) -> StageOutcome:
    """Run ``config.generations`` generations (at least one evaluation pass).

    Each generation evaluates all individuals, so the number of fitness calls
    is ``population_size * max(generations, 1)``.  ``mutate`` receives a copy of
    the parent and a dedicated generator for the child's slot.
    """
    pop = [ind.copy() for ind in initial_population]
    if len(pop) != config.population_size:
        raise ValueError(f"initial population has {len(pop)} members, expected {config.population_size}")
    history: list[GenerationStats] = []
    total = 0
    counters: dict = {}
    log: list[tuple] = []  # (generation, slot, lineage, fitness, components)
    passes = max(config.generations, 1)
    best = None
    for gen in range(passes):
        results = evaluate_population(pop, fitness_fn, config.workers)
        for ind, ev in zip(pop, results):
            ind.fitness = float(ev.fitness)
            ind.retest = dict(ev.retest)
            total += ev.evaluations
            for k, v in ev.counters.items():
                counters[k] = counters.get(k, 0) + v
        scores = [ind.fitness for ind in pop]
        log.extend((gen, slot, ind.lineage, ind.fitness, tuple(ev.components))
                   for slot, (ind, ev) in enumerate(zip(pop, results)))
        order = rank_order(scores)
        best = pop[int(order[0])]
        history.append(GenerationStats(gen, float(max(scores)), float(np.mean(scores)),
                                       float(min(scores)), total))
        if on_generation is not None:
            on_generation(gen, pop)
        if gen == passes - 1:
            break
        nxt = [pop[int(i)].copy() for i in order[: config.elite_count]]
        sel_rng = rng_for(config.master_seed, *stage_key, gen, _SELECT_SLOT)
        scored = list(zip(pop, scores))
        for slot in range(config.elite_count, config.population_size):
            parent = select_parent(scored, config.selection, sel_rng, config.rank_pressure)
            child = mutate(parent.copy().invalidate(), rng_for(config.master_seed, *stage_key, gen, slot))
            child.lineage = "-".join(str(k) for k in (*stage_key, gen + 1, slot))
            nxt.append(child)
        pop = nxt
    return StageOutcome(pop, best.copy(), history, total, counters, log)
