import numpy as np
import pytest

from esp_creatures.genome import JointEdge, MorphologyGenome, MuscleGene, SegmentNode


def box(node_id="A", dims=(0.3, 0.3, 0.3), density=500.0, limit=1, shape="box"):
    return SegmentNode(node_id, shape, tuple(dims), density, limit)


def edge(edge_id, source, target, joint="revolute", anchor=(1.0, 0.0, 0.0), child=(0.0, 0.0, 0.0),
         axis=(0.0, 0.0, 1.0), reflect=False, scale=1.0):
    return JointEdge(edge_id, source, target, joint, tuple(anchor), tuple(child), tuple(axis), reflect, scale)


def two_segment_genome(joint="revolute"):
    """A root box with one limb box hinged on its +x face."""
    return MorphologyGenome((box("A"), box("B", (0.2, 0.1, 0.1))), (edge("e0", "A", "B", joint),), "A")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def limb_muscle():
    return MuscleGene("m0", "", "e0", (1.0, 0.0, 1.0), (-1.0, 0.0, 1.0), 500.0)


def random_brain(rng, n_muscles=3, n_receptors=2, n_nodes=8, skill="s", sigma_layer=True):
    """Random controller: ordinary nodes wired freely (cycles allowed), optionally
    through a layer of sigma nodes, into every muscle output."""
    from esp_creatures.brain import ARITY, EVOLVABLE_KINDS, BrainGraph, random_params

    b = BrainGraph()
    b.sync_io([f"m{i}" for i in range(n_muscles)], [f"r{i}" for i in range(n_receptors)])
    own = []
    for _ in range(n_nodes):
        kind = EVOLVABLE_KINDS[int(rng.integers(len(EVOLVABLE_KINDS)))]
        own.append(b.add_node(kind, random_params(kind, rng), skill_tag=skill))
    sensors = [n for n in b.nodes if n.startswith(("pp:", "rc:"))]
    for nid in own:
        for slot in range(ARITY[b.nodes[nid].kind]):
            if rng.random() < 0.85:
                src = (own + sensors)[int(rng.integers(len(own) + len(sensors)))]
                b.add_wire(src, nid, slot)
    for i in range(n_muscles):
        target = f"mo:m{i}"
        if sigma_layer and rng.random() < 0.5:
            sig = b.add_node("sigma", {}, skill_tag=skill)
            for _ in range(int(rng.integers(1, 3))):
                b.add_wire(own[int(rng.integers(len(own)))], sig)
            b.add_wire(sig, target, 0)
        else:
            b.add_wire(own[int(rng.integers(len(own)))], target, 0)
    return b


def sensor_stream(rng, steps, n_muscles=3, n_receptors=2):
    return [({f"r{j}": float(rng.random()) for j in range(n_receptors)},
             {f"m{j}": float(rng.random()) for j in range(n_muscles)}) for _ in range(steps)]


# --------------------------------------------------------------------------
# acceptance summary: one line per criterion at the end of the session

_criteria: dict[str, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(code, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    code, title = mark.args
    entry = _criteria.setdefault(code, [title, True])
    entry[1] = entry[1] and rep.passed


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for code in sorted(_criteria, key=lambda c: int(c[1:])):
        title, ok = _criteria[code]
        terminalreporter.write_line(f"{code} {'PASS' if ok else 'FAIL'}  {title}")
