import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import box, edge, two_segment_genome
from esp_creatures.genome import (DEFAULT_RATES, MAX_SEGMENTS, DanglingReference, ExpressionOverflow,
                                  GenomeError, MorphologyGenome, MuscleGene, MutationPolicy,
                                  PhotoreceptorGene, adjacent_pairs, express, genome_from_dict,
                                  genome_to_dict, muscle_from_dict, muscle_to_dict, mutate_morphology,
                                  random_body, random_receptor, receptor_from_dict, receptor_to_dict,
                                  shape_mass_inertia, skeleton_hash, validate)


def count_segments(genome):
    """Independent traversal count: each edge expands unless the target's
    recursion limit is already used up along the current path."""
    out = {}
    for e in genome.edges:
        out.setdefault(e.source, []).append(e)
    limits = {n.id: n.recursion_limit for n in genome.nodes}

    def visit(node, counts):
        total = 1
        for e in out.get(node, []):
            if counts.get(e.target, 0) < limits[e.target]:
                c = dict(counts)
                c[e.target] = c.get(e.target, 0) + 1
                total += visit(e.target, c)
        return total

    return visit(genome.root, {genome.root: 1})


# --------------------------------------------------------------------------
# expression


def test_single_node_expresses_one_segment():
    c = express(MorphologyGenome((box(),), (), "A"))
    assert len(c.segments) == 1 and c.joints == []


def test_reflexive_edge_with_limit_three_gives_chain_of_three():
    g = MorphologyGenome((box(limit=3),), (edge("r", "A", "A", scale=0.8),), "A")
    c = express(g)
    assert len(c.segments) == 3
    assert [s.path for s in c.segments] == ["", "r", "r/r"]
    # each copy is scaled by the edge's factor relative to its parent
    np.testing.assert_allclose(c.segments[2].dimensions, np.array(box().dimensions) * 0.64)


def test_parallel_edges_instantiate_one_copy_each():
    g = MorphologyGenome((box("A"), box("B")),
                         (edge("e0", "A", "B"), edge("e1", "A", "B", anchor=(-1, 0, 0))), "A")
    assert len(express(g).segments) == 3


@pytest.mark.parametrize("limit", [1, 2, 3, 4])
def test_reflexive_chain_length_equals_recursion_limit(limit):
    g = MorphologyGenome((box(limit=limit),), (edge("r", "A", "A", scale=0.9),), "A")
    assert len(express(g).segments) == min(limit, MAX_SEGMENTS)


def test_overflow_is_reported():
    # three reflexive edges with limit 4 would need 1 + 3 + 9 + 27 segments
    edges = tuple(edge(f"r{i}", "A", "A", anchor=a) for i, a in
                  enumerate([(1, 0, 0), (-1, 0, 0), (0, 1, 0)]))
    g = MorphologyGenome((box(limit=4),), edges, "A")
    with pytest.raises(ExpressionOverflow):
        express(g)


def test_expression_is_pure():
    g, m, r = random_body(np.random.default_rng(3))
    a, b = express(g, m, r), express(g, m, r)
    for sa, sb in zip(a.segments, b.segments):
        assert sa.path == sb.path
        np.testing.assert_array_equal(sa.position, sb.position)
    for ma, mb in zip(a.muscles, b.muscles):
        np.testing.assert_array_equal(ma.point_parent, mb.point_parent)


def test_reflect_mirrors_anchor_and_axis_under_sagittal_symmetry():
    base = (box("A"), box("B", (0.1, 0.1, 0.1)))
    plain = MorphologyGenome(base, (edge("e0", "A", "B", anchor=(0.2, 1, 0), axis=(0, 1, 0)),), "A",
                             "sagittal")
    refl = MorphologyGenome(base, (edge("e0", "A", "B", anchor=(0.2, 1, 0), axis=(0, 1, 0), reflect=True),),
                            "A", "sagittal")
    p, q = express(plain), express(refl)
    assert p.segments[1].position[1] > 0 > q.segments[1].position[1]
    np.testing.assert_allclose(q.segments[1].position * [1, -1, 1], p.segments[1].position)
    np.testing.assert_allclose(q.joints[0].axis, [0, -1, 0])


def test_reflect_is_ignored_without_symmetry_plane():
    base = (box("A"), box("B", (0.1, 0.1, 0.1)))
    g = MorphologyGenome(base, (edge("e0", "A", "B", anchor=(0, 1, 0), reflect=True),), "A", "none")
    assert express(g).segments[1].position[1] > 0


def test_dangling_muscle_and_receptor_raise(limb_muscle):
    g = two_segment_genome()
    with pytest.raises(DanglingReference):
        express(g, [dataclasses.replace(limb_muscle, child_segment="nope")])
    with pytest.raises(DanglingReference):
        express(g, [], [PhotoreceptorGene("r0", "e9", (1.0, 0.0, 0.0))])


def test_muscle_must_span_a_joint():
    g = MorphologyGenome((box("A"), box("B"), box("C")),
                         (edge("e0", "A", "B"), edge("e1", "A", "C", anchor=(-1, 0, 0))), "A")
    with pytest.raises(DanglingReference):
        express(g, [MuscleGene("m", "e0", "e1", (0, 0, 1), (0, 0, 1), 100.0)])


def test_muscle_rest_length_matches_attachment_distance(limb_muscle):
    c = express(two_segment_genome(), [limb_muscle])
    m = c.muscles[0]
    assert m.rest_length == pytest.approx(float(np.linalg.norm(m.point_child - m.point_parent)))
    assert m.rest_length > 0


def test_box_mass_and_inertia_match_closed_form():
    mass, inertia = shape_mass_inertia("box", (0.2, 0.4, 0.6), 1000.0)
    assert mass == pytest.approx(48.0)
    np.testing.assert_allclose(inertia, [48 / 12 * (0.16 + 0.36), 48 / 12 * (0.04 + 0.36),
                                         48 / 12 * (0.04 + 0.16)])


def test_sphere_mass_matches_closed_form():
    # dimensions are full extents, so the first one is the diameter
    mass, inertia = shape_mass_inertia("sphere", (0.1, 0.1, 0.1), 1000.0)
    assert mass == pytest.approx(4 / 3 * np.pi * 0.05**3 * 1000)
    np.testing.assert_allclose(inertia, [0.4 * mass * 0.05**2] * 3)


# --------------------------------------------------------------------------
# validation


@pytest.mark.parametrize("bad", [
    dict(dims=(0.01, 0.3, 0.3)),
    dict(dims=(3.0, 0.3, 0.3)),
    dict(density=50.0),
    dict(limit=5),
    dict(shape="cone"),
])
def test_invalid_nodes_are_rejected(bad):
    with pytest.raises(GenomeError):
        validate(MorphologyGenome((box(**bad),), (), "A"))


def test_invalid_edges_are_rejected():
    with pytest.raises(GenomeError):
        validate(MorphologyGenome((box(),), (edge("r", "A", "A", scale=0.3),), "A"))
    with pytest.raises(GenomeError):
        validate(MorphologyGenome((box(),), (edge("r", "A", "A", axis=(1, 1, 0)),), "A"))
    with pytest.raises(GenomeError):
        validate(MorphologyGenome((box("A"), box("B")), (), "A"))  # B unreachable


# --------------------------------------------------------------------------
# hashing and serialization


def test_skeleton_hash_ignores_actuators_and_order(limb_muscle):
    g = two_segment_genome()
    assert skeleton_hash(g) == skeleton_hash(g)
    reordered = MorphologyGenome(tuple(reversed(g.nodes)), g.edges, g.root)
    assert skeleton_hash(reordered) == skeleton_hash(g)
    # muscles live outside the genome, so adding one cannot change the hash
    express(g, [limb_muscle])
    assert skeleton_hash(g) == skeleton_hash(two_segment_genome())


def test_skeleton_hash_sees_joint_type():
    assert skeleton_hash(two_segment_genome("revolute")) != skeleton_hash(two_segment_genome("spherical"))


def test_serialization_round_trips_exactly():
    g, m, _ = random_body(np.random.default_rng(8))
    r = (random_receptor(np.random.default_rng(1), "r0", g),)
    d = json.loads(json.dumps(genome_to_dict(g)))
    assert genome_from_dict(d) == g
    assert tuple(muscle_from_dict(json.loads(json.dumps(muscle_to_dict(x)))) for x in m) == m
    assert tuple(receptor_from_dict(receptor_to_dict(x)) for x in r) == r


# --------------------------------------------------------------------------
# mutation


def test_zero_rates_leave_everything_unchanged():
    g, m, r = random_body(np.random.default_rng(0))
    policy = MutationPolicy("free", {k: 0.0 for k in DEFAULT_RATES})
    for seed in range(50):
        assert mutate_morphology(g, m, r, policy, seed) == (g, m, r)


def test_actuators_only_never_changes_the_skeleton():
    rates = {k: 1.0 for k in DEFAULT_RATES}
    for seed in range(10_000):
        g, m, r = random_body(np.random.default_rng(seed % 97))
        before = skeleton_hash(g)
        g2, m2, r2 = mutate_morphology(g, m, r, MutationPolicy("actuators_only", rates), seed)
        assert skeleton_hash(g2) == before


def test_control_only_policy_refuses_morphology_mutation():
    g, m, r = random_body(np.random.default_rng(0))
    with pytest.raises(ValueError):
        mutate_morphology(g, m, r, MutationPolicy("control_only"), 0)


def test_add_muscle_only_never_shrinks_muscle_count():
    rates = {k: 0.0 for k in DEFAULT_RATES}
    rates["add_muscle"] = 1.0
    g, m, r = random_body(np.random.default_rng(5))
    for seed in range(200):
        g, m2, r = mutate_morphology(g, m, r, MutationPolicy("free", rates), seed)
        assert len(m2) >= len(m)
        m = m2


def test_protected_actuators_survive_actuator_operators():
    g, m, r = random_body(np.random.default_rng(2))
    r = (random_receptor(np.random.default_rng(2), "r0", g),)
    keep = frozenset([m[0].id, "r0"])
    rates = {k: 0.0 for k in DEFAULT_RATES}
    rates.update(remove_muscle=1.0, remove_receptor=1.0, perturb_muscle=1.0, perturb_receptor=1.0)
    for seed in range(300):
        _, m2, r2 = mutate_morphology(g, m, r, MutationPolicy("actuators_only", rates, keep), seed)
        assert m[0] in m2 and r[0] in r2


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 30))
def test_mutated_genomes_stay_valid_and_expressible(seed, n):
    rng = np.random.default_rng(seed)
    g, m, r = random_body(rng)
    for _ in range(n):
        g, m, r = mutate_morphology(g, m, r, MutationPolicy("free"), rng)
    validate(g)
    c = express(g, m, r)
    assert len(c.segments) == count_segments(g) <= MAX_SEGMENTS
    # every muscle joins two segments that share a joint
    adjacent = {(j.parent, j.child) for j in c.joints} | {(j.child, j.parent) for j in c.joints}
    assert all((mu.parent, mu.child) in adjacent for mu in c.muscles)
    assert len(adjacent_pairs(g)) == len(c.joints)
