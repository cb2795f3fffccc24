import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from esp_creatures.brain import BrainGraph
from esp_creatures.genome import MutationPolicy, mutate_morphology, random_body
from esp_creatures.evolution import (EAConfig, Evaluation, Individual, evolve_stage, rank_order, rng_for,
                                     select_parent, selection_probabilities)


def volume_fitness(ind):
    """Cheap deterministic score: total node volume, squashed into [0, 1]."""
    v = sum(float(np.prod(n.dimensions)) for n in ind.genome.nodes)
    return Evaluation(v / (v + 0.05), components=(v,))


def mutate(ind, rng):
    ind.genome, ind.muscles, ind.receptors = mutate_morphology(
        ind.genome, ind.muscles, ind.receptors, MutationPolicy("free"), rng)
    return ind


def frozen(ind, rng):
    return ind


def population(n, seed=0):
    out = []
    for i in range(n):
        g, m, r = random_body(rng_for(seed, i))
        out.append(Individual(g, m, r, BrainGraph(), lineage=f"0-{i}"))
    return out


def transcript(outcome):
    return ([(h.generation, h.best, h.mean, h.min, h.evaluation_count) for h in outcome.history],
            [(ind.lineage, ind.fitness) for ind in outcome.population], outcome.fitness_log)


# --------------------------------------------------------------------------
# selection


def test_rank_probabilities_follow_linear_ranking():
    p = selection_probabilities([0.1, 0.9, 0.5], "rank", 1.8)
    n = 3
    expected_by_rank = [(2 - 1.8) / n + 2 * r * 0.8 / (n * (n - 1)) for r in range(n)]  # worst .. best
    np.testing.assert_allclose(p, [expected_by_rank[0], expected_by_rank[2], expected_by_rank[1]])
    assert p.sum() == pytest.approx(1.0)


def test_proportionate_examples():
    np.testing.assert_allclose(selection_probabilities([1.0, 0.0], "fitness_proportionate"), [1.0, 0.0])
    np.testing.assert_allclose(selection_probabilities([0.0, 0.0], "fitness_proportionate"), [0.5, 0.5])


def test_single_individual_is_always_selected():
    rng = np.random.default_rng(0)
    for scheme in ("rank", "fitness_proportionate"):
        assert select_parent([("only", 0.0)], scheme, rng) == "only"


def test_proportionate_three_to_one_monte_carlo():
    rng = np.random.default_rng(7)
    scored = [("a", 3.0), ("b", 1.0)]
    picks = [select_parent(scored, "fitness_proportionate", rng) for _ in range(100_000)]
    ratio = picks.count("a") / picks.count("b")
    assert ratio == pytest.approx(3.0, rel=0.05)


def test_unknown_scheme_and_empty_population_raise():
    with pytest.raises(ValueError):
        selection_probabilities([1.0], "tournament")
    with pytest.raises(ValueError):
        select_parent([], "rank", np.random.default_rng(0))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.floats(1.0, 2.0))
def test_rank_probabilities_are_a_distribution_favouring_better(scores, pressure):
    p = selection_probabilities(scores, "rank", pressure)
    assert p.sum() == pytest.approx(1.0)
    assert (p >= -1e-15).all()
    order = rank_order(scores)
    assert all(p[a] >= p[b] - 1e-15 for a, b in zip(order, order[1:]))


def test_rank_order_breaks_ties_by_position_and_sinks_nan():
    assert list(rank_order([0.5, 0.9, 0.5, float("nan")])) == [1, 0, 2, 3]


# --------------------------------------------------------------------------
# configuration


@pytest.mark.parametrize("kw", [dict(elite_count=0), dict(population_size=3, elite_count=2),
                                dict(generations=-1), dict(selection="tournament"),
                                dict(rank_pressure=2.5)])
def test_invalid_configs_raise(kw):
    with pytest.raises(ValueError):
        EAConfig(**kw)


def test_population_size_mismatch_raises():
    with pytest.raises(ValueError):
        evolve_stage(population(3), volume_fitness, EAConfig(population_size=4), mutate)


# --------------------------------------------------------------------------
# the stage loop


def test_zero_generations_returns_initial_population_and_its_best():
    pop = population(6)
    out = evolve_stage(pop, volume_fitness, EAConfig(population_size=6, generations=0), mutate)
    assert [i.lineage for i in out.population] == [i.lineage for i in pop]
    scores = [volume_fitness(i).fitness for i in pop]
    assert out.best.fitness == max(scores)
    assert out.evaluations == 6 and len(out.history) == 1


def test_without_variation_best_fitness_is_constant():
    out = evolve_stage(population(6), volume_fitness, EAConfig(population_size=6, generations=8), frozen)
    assert len({h.best for h in out.history}) == 1


def test_evaluation_count_is_population_times_generations():
    out = evolve_stage(population(8), volume_fitness, EAConfig(population_size=8, generations=5), mutate)
    assert out.evaluations == 40
    assert [h.evaluation_count for h in out.history] == [8, 16, 24, 32, 40]
    assert len(out.fitness_log) == 40


@pytest.mark.parametrize("seed", range(100))
def test_best_fitness_never_decreases(seed):
    cfg = EAConfig(population_size=6, generations=6, master_seed=seed,
                   selection="fitness_proportionate" if seed % 2 else "rank")
    out = evolve_stage(population(6, seed), volume_fitness, cfg, mutate)
    best = [h.best for h in out.history]
    assert all(b >= a for a, b in zip(best, best[1:]))


def test_elite_survives_unchanged_into_next_generation():
    seen = []
    cfg = EAConfig(population_size=6, generations=5, master_seed=3)
    evolve_stage(population(6, 3), volume_fitness, cfg, mutate,
                 on_generation=lambda g, pop: seen.append([(i.genome, i.fitness) for i in pop]))
    for prev, nxt in zip(seen, seen[1:]):
        champion = max(prev, key=lambda x: x[1])
        assert nxt[0][0] == champion[0]


def test_runs_are_deterministic():
    cfg = EAConfig(population_size=6, generations=5, master_seed=11)
    a = evolve_stage(population(6, 1), volume_fitness, cfg, mutate)
    b = evolve_stage(population(6, 1), volume_fitness, cfg, mutate)
    assert transcript(a) == transcript(b)


def test_worker_count_does_not_change_results():
    base = EAConfig(population_size=6, generations=3, master_seed=5)
    par = EAConfig(population_size=6, generations=3, master_seed=5, workers=2)
    a = evolve_stage(population(6, 2), volume_fitness, base, mutate)
    b = evolve_stage(population(6, 2), volume_fitness, par, mutate)
    assert transcript(a) == transcript(b)


def test_mutated_children_have_fresh_fitness_caches():
    ind = population(1)[0]
    ind.fitness, ind.retest = 0.7, {"x": 0.1}
    child = ind.copy().invalidate()
    assert child.fitness is None and child.retest == {} and ind.fitness == 0.7


def test_rng_streams_are_keyed_not_sequential():
    a = rng_for(1, 0, 3, 5).random()
    rng_for(1, 0, 3, 4).random()
    assert rng_for(1, 0, 3, 5).random() == a
    assert rng_for(1, 0, 3, 6).random() != a
