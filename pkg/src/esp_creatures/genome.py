"""Graph-based morphology genotype, actuator genes, expression and mutation.

A body plan is a directed multigraph of segment nodes joined by joint edges.
Expression walks the graph depth-first from the root; every edge creates a
child segment until the target node's recursion limit is used up on the
current path.  Phenotype segments are addressed by their traversal path,
the ``/``-joined sequence of edge ids from the root (the root is ``""``).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

SHAPES = ("box", "sphere", "capsule")
JOINT_TYPES = ("fixed", "revolute", "spherical", "prismatic", "cylindrical")
SYMMETRY_PLANES = ("none", "sagittal")

MAX_SEGMENTS = 24
MAX_RECURSION = 4
DIM_RANGE = (0.05, 2.0)
DENSITY_RANGE = (100.0, 5000.0)
SCALE_RANGE = (0.5, 1.0)
STRENGTH_RANGE = (10.0, 2000.0)

# ratio of joint gap to the smaller facing extent, and its absolute bounds (m)
JOINT_GAP_RATIO = 0.5
JOINT_GAP_BOUNDS = (0.01, 0.2)

Vec3 = tuple[float, float, float]


class GenomeError(ValueError):
    """Raised when a genome violates its structural invariants."""


class ExpressionOverflow(GenomeError):
    pass


class DanglingReference(GenomeError):
    pass


@dataclass(frozen=True)
class SegmentNode:
    id: str
    shape: str
    dimensions: Vec3
    density: float
    recursion_limit: int = 1


@dataclass(frozen=True)
class JointEdge:
    id: str
    source: str
    target: str
    joint_type: str
    anchor_parent: Vec3
    anchor_child: Vec3
    axis: Vec3
    reflect: bool = False
    scale_factor: float = 1.0


@dataclass(frozen=True)
class MorphologyGenome:
    nodes: tuple[SegmentNode, ...]
    edges: tuple[JointEdge, ...]
    root: str
    symmetry_plane: str = "none"

    def node(self, node_id: str) -> SegmentNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def edge(self, edge_id: str) -> JointEdge:
        for e in self.edges:
            if e.id == edge_id:
                return e
        raise KeyError(edge_id)


@dataclass(frozen=True)
class MuscleGene:
    id: str
    parent_segment: str
    child_segment: str
    attach_parent: Vec3
    attach_child: Vec3
    max_strength: float


@dataclass(frozen=True)
class PhotoreceptorGene:
    id: str
    segment: str
    direction: Vec3


DEFAULT_RATES = {
    "perturb": 0.6,
    "add_node": 0.05,
    "remove_node": 0.05,
    "add_edge": 0.05,
    "remove_edge": 0.05,
    "add_muscle": 0.05,
    "remove_muscle": 0.05,
    "perturb_muscle": 0.05,
    "add_receptor": 0.02,
    "remove_receptor": 0.01,
    "perturb_receptor": 0.02,
}

SKELETON_OPS = ("perturb", "add_node", "remove_node", "add_edge", "remove_edge")
ACTUATOR_OPS = (
    "add_muscle",
    "remove_muscle",
    "perturb_muscle",
    "add_receptor",
    "remove_receptor",
    "perturb_receptor",
)


@dataclass(frozen=True)
class MutationPolicy:
    """Which morphology operators may fire, and how often.

    ``protected`` holds muscle/receptor gene ids that locked brain skills
    depend on.  Actuator operators never remove them, and in
    ``actuators_only`` mode never perturb them either.  A free-mode skeleton
    edit may still delete the segment they sit on; whether that costs a skill
    is for the retest gate to judge.
    """

    stage_mode: str = "free"
    rates: dict = field(default_factory=lambda: dict(DEFAULT_RATES))
    protected: frozenset = frozenset()

    def enabled(self, op: str) -> bool:
        if self.stage_mode == "control_only":
            return False
        if self.stage_mode == "actuators_only" and op in SKELETON_OPS:
            return False
        return self.rates.get(op, 0.0) > 0.0


# --------------------------------------------------------------------------
# geometry helpers (expression pose: every segment keeps the root's
# orientation; only positions differ)


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = float(np.linalg.norm(v))
    if n < 1e-12:
        return np.array([1.0, 0.0, 0.0])
    return v / n


def shape_params(shape: str, dims) -> np.ndarray:
    """Collision parameters: box half extents, sphere (r, 0, 0), capsule (r, half_len, 0).

    Capsules lie along the local x axis; ``dims[0]`` is the radius and
    ``dims[1]`` the full cylinder length.
    """
    if shape == "box":
        return np.array([dims[0] / 2, dims[1] / 2, dims[2] / 2])
    if shape == "sphere":
        return np.array([dims[0] / 2, 0.0, 0.0])
    return np.array([dims[0] / 2, dims[1] / 2, 0.0])


def shape_mass_inertia(shape: str, dims, density: float) -> tuple[float, np.ndarray]:
    sp = shape_params(shape, dims)
    if shape == "box":
        hx, hy, hz = sp
        m = density * 8 * hx * hy * hz
        inertia = m / 3 * np.array([hy * hy + hz * hz, hx * hx + hz * hz, hx * hx + hy * hy])
    elif shape == "sphere":
        r = sp[0]
        m = density * 4 / 3 * math.pi * r**3
        inertia = np.full(3, 0.4 * m * r * r)
    else:
        r, hl = sp[0], sp[1]
        m_cyl = density * math.pi * r * r * 2 * hl
        m_sph = density * 4 / 3 * math.pi * r**3
        m = m_cyl + m_sph
        ix = 0.5 * m_cyl * r * r + 0.4 * m_sph * r * r
        # end caps approximated as a sphere split across both ends
        iy = m_cyl * (3 * r * r + 4 * hl * hl) / 12 + m_sph * (0.4 * r * r + hl * hl)
        inertia = np.array([ix, iy, iy])
    return m, inertia


def support(shape: str, sp: np.ndarray, n: np.ndarray) -> float:
    """Support distance of a centred shape along unit direction ``n``."""
    if shape == "box":
        return float(np.sum(np.abs(n) * sp))
    if shape == "sphere":
        return float(sp[0])
    return float(sp[0] + sp[1] * abs(n[0]))


def surface_point(shape: str, sp: np.ndarray, c) -> tuple[np.ndarray, np.ndarray]:
    """Surface point and outward normal for unit-cube-relative coordinates ``c``."""
    c = np.asarray(c, dtype=float)
    if shape == "box":
        m = float(np.max(np.abs(c)))
        if m < 1e-12:
            c, m = np.array([1.0, 0.0, 0.0]), 1.0
        cc = c / m
        axis = int(np.argmax(np.abs(cc)))
        n = np.zeros(3)
        n[axis] = 1.0 if cc[axis] > 0 else -1.0
        return cc * sp, n
    d = _unit(c)
    if shape == "sphere":
        return d * sp[0], d
    r, hl = sp[0], sp[1]
    radial = math.hypot(d[1], d[2])
    if radial > 1e-12:
        t = r / radial
        if abs(t * d[0]) <= hl:
            p = t * d
            n = np.array([0.0, p[1], p[2]]) / r
            return p, n
    cap = np.array([math.copysign(hl, d[0]) if abs(d[0]) > 0 else hl, 0.0, 0.0])
    # ray/sphere intersection for the end cap
    b = float(np.dot(d, cap))
    disc = b * b - (float(np.dot(cap, cap)) - r * r)
    t = b + math.sqrt(max(disc, 0.0))
    p = t * d
    return p, _unit(p - cap)


# --------------------------------------------------------------------------
# phenotype


@dataclass
class Segment:
    path: str
    node_id: str
    shape: str
    dimensions: np.ndarray
    density: float
    position: np.ndarray
    parent: int = -1
    edge_id: str | None = None
    mirrored: bool = False

    @property
    def params(self) -> np.ndarray:
        return shape_params(self.shape, self.dimensions)


@dataclass
class Joint:
    parent: int
    child: int
    joint_type: str
    pivot: np.ndarray
    axis: np.ndarray


@dataclass
class MuscleSpec:
    gene_id: str
    parent: int
    child: int
    point_parent: np.ndarray
    point_child: np.ndarray
    max_strength: float

    @property
    def rest_length(self) -> float:
        return float(np.linalg.norm(self.point_child - self.point_parent))


@dataclass
class ReceptorSpec:
    gene_id: str
    segment: int
    point: np.ndarray
    direction: np.ndarray


@dataclass
class Creature:
    """Expressed phenotype at its expression pose (root at the origin)."""

    segments: list[Segment]
    joints: list[Joint]
    muscles: list[MuscleSpec]
    receptors: list[ReceptorSpec]
    brain: object = None

    def segment_index(self, path: str) -> int:
        for i, s in enumerate(self.segments):
            if s.path == path:
                return i
        raise DanglingReference(f"no expressed segment at path {path!r}")


def _mirror(v, on: bool) -> np.ndarray:
    v = np.array(v, dtype=float)
    if on:
        v[1] = -v[1]
    return v


def _joint_gap(h_parent: float, h_child: float) -> float:
    g = JOINT_GAP_RATIO * min(h_parent, h_child)
    return min(max(g, JOINT_GAP_BOUNDS[0]), JOINT_GAP_BOUNDS[1])


def _expand(genome: MorphologyGenome) -> tuple[list[Segment], list[Joint]]:
    nodes = {n.id: n for n in genome.nodes}
    out_edges: dict[str, list[JointEdge]] = {n.id: [] for n in genome.nodes}
    for e in genome.edges:
        out_edges[e.source].append(e)
    root = nodes[genome.root]
    segments = [
        Segment("", root.id, root.shape, np.array(root.dimensions, dtype=float), root.density, np.zeros(3))
    ]
    joints: list[Joint] = []
    sagittal = genome.symmetry_plane == "sagittal"

    def visit(idx: int, counts: dict[str, int], scale: float) -> None:
        parent = segments[idx]
        psp = parent.params
        for e in out_edges[parent.node_id]:
            if counts.get(e.target, 0) >= nodes[e.target].recursion_limit:
                continue
            if len(segments) >= MAX_SEGMENTS:
                raise ExpressionOverflow(f"phenotype exceeds {MAX_SEGMENTS} segments")
            child_node = nodes[e.target]
            mirrored = parent.mirrored ^ (e.reflect and sagittal)
            child_scale = scale * e.scale_factor
            dims = np.array(child_node.dimensions, dtype=float) * child_scale
            csp = shape_params(child_node.shape, dims)
            anchor = _mirror(e.anchor_parent, mirrored)
            p_local, n = surface_point(parent.shape, psp, anchor)
            h_child = support(child_node.shape, csp, n)
            gap = _joint_gap(support(parent.shape, psp, n), h_child)
            pivot = parent.position + p_local + n * (gap / 2)
            lateral = _mirror(e.anchor_child, mirrored)
            lateral = lateral - n * float(np.dot(lateral, n))
            offset = lateral * csp if child_node.shape == "box" else lateral * csp[0]
            centre = parent.position + p_local + n * (gap + h_child) - 0.5 * offset
            path = e.id if parent.path == "" else f"{parent.path}/{e.id}"
            segments.append(
                Segment(path, child_node.id, child_node.shape, dims, child_node.density, centre,
                        parent=idx, edge_id=e.id, mirrored=mirrored)
            )
            joints.append(Joint(idx, len(segments) - 1, e.joint_type, pivot,
                                _unit(_mirror(e.axis, mirrored))))
            sub = dict(counts)
            sub[e.target] = sub.get(e.target, 0) + 1
            visit(len(segments) - 1, sub, child_scale)

    visit(0, {root.id: 1}, 1.0)
    return segments, joints


def express(genome: MorphologyGenome, muscles: Sequence[MuscleGene] = (),
            receptors: Sequence[PhotoreceptorGene] = ()) -> Creature:
    """Build the phenotype for a genome and its actuator genes."""
    validate(genome)
    segments, joints = _expand(genome)
    by_path = {s.path: i for i, s in enumerate(segments)}
    adjacent = {(j.parent, j.child) for j in joints}
    mus = []
    for m in muscles:
        if m.parent_segment not in by_path or m.child_segment not in by_path:
            raise DanglingReference(f"muscle {m.id} references an unexpressed segment")
        a, b = by_path[m.parent_segment], by_path[m.child_segment]
        if (a, b) not in adjacent and (b, a) not in adjacent:
            raise DanglingReference(f"muscle {m.id} spans non-adjacent segments")
        sa, sb = segments[a], segments[b]
        pa, _ = surface_point(sa.shape, sa.params, _mirror(m.attach_parent, sa.mirrored))
        pb, _ = surface_point(sb.shape, sb.params, _mirror(m.attach_child, sb.mirrored))
        mus.append(MuscleSpec(m.id, a, b, sa.position + pa, sb.position + pb, m.max_strength))
    recs = []
    for r in receptors:
        if r.segment not in by_path:
            raise DanglingReference(f"receptor {r.id} references an unexpressed segment")
        s = segments[by_path[r.segment]]
        d = _unit(_mirror(r.direction, s.mirrored))
        p, _ = surface_point(s.shape, s.params, d)
        recs.append(ReceptorSpec(r.id, by_path[r.segment], s.position + p, d))
    return Creature(segments, joints, mus, recs)


def expressed_paths(genome: MorphologyGenome) -> list[str]:
    return [s.path for s in _expand(genome)[0]]


def adjacent_pairs(genome: MorphologyGenome) -> list[tuple[str, str]]:
    segments, joints = _expand(genome)
    return [(segments[j.parent].path, segments[j.child].path) for j in joints]


# --------------------------------------------------------------------------
# validation


def _in(x, lo, hi) -> bool:
    return lo - 1e-12 <= x <= hi + 1e-12


def validate(genome: MorphologyGenome) -> None:
    ids = [n.id for n in genome.nodes]
    if len(set(ids)) != len(ids):
        raise GenomeError("duplicate node id")
    if genome.root not in ids:
        raise GenomeError("root node missing")
    if genome.symmetry_plane not in SYMMETRY_PLANES:
        raise GenomeError(f"bad symmetry plane {genome.symmetry_plane!r}")
    for n in genome.nodes:
        if n.shape not in SHAPES:
            raise GenomeError(f"node {n.id}: bad shape {n.shape!r}")
        if len(n.dimensions) != 3 or not all(_in(d, *DIM_RANGE) for d in n.dimensions):
            raise GenomeError(f"node {n.id}: dimensions out of range")
        if not _in(n.density, *DENSITY_RANGE):
            raise GenomeError(f"node {n.id}: density out of range")
        if not 1 <= n.recursion_limit <= MAX_RECURSION:
            raise GenomeError(f"node {n.id}: recursion_limit out of range")
    eids = [e.id for e in genome.edges]
    if len(set(eids)) != len(eids):
        raise GenomeError("duplicate edge id")
    idset = set(ids)
    for e in genome.edges:
        if e.source not in idset or e.target not in idset:
            raise GenomeError(f"edge {e.id}: unknown endpoint")
        if e.joint_type not in JOINT_TYPES:
            raise GenomeError(f"edge {e.id}: bad joint type {e.joint_type!r}")
        if not _in(e.scale_factor, *SCALE_RANGE):
            raise GenomeError(f"edge {e.id}: scale_factor out of range")
        if abs(math.sqrt(sum(a * a for a in e.axis)) - 1.0) > 1e-6:
            raise GenomeError(f"edge {e.id}: axis is not unit length")
    # reachability from the root along edge direction
    seen = {genome.root}
    frontier = [genome.root]
    while frontier:
        cur = frontier.pop()
        for e in genome.edges:
            if e.source == cur and e.target not in seen:
                seen.add(e.target)
                frontier.append(e.target)
    if seen != idset:
        raise GenomeError(f"unreachable nodes: {sorted(idset - seen)}")
    _expand(genome)  # raises ExpressionOverflow


def validate_actuators(genome: MorphologyGenome, muscles: Iterable[MuscleGene],
                       receptors: Iterable[PhotoreceptorGene]) -> None:
    pairs = set(adjacent_pairs(genome))
    paths = set(expressed_paths(genome))
    for m in muscles:
        if (m.parent_segment, m.child_segment) not in pairs and (m.child_segment, m.parent_segment) not in pairs:
            raise DanglingReference(f"muscle {m.id} does not span a joint")
        if not _in(m.max_strength, *STRENGTH_RANGE):
            raise GenomeError(f"muscle {m.id}: max_strength out of range")
    for r in receptors:
        if r.segment not in paths:
            raise DanglingReference(f"receptor {r.id} references an unexpressed segment")
        if abs(math.sqrt(sum(a * a for a in r.direction)) - 1.0) > 1e-6:
            raise GenomeError(f"receptor {r.id}: direction is not unit length")


# --------------------------------------------------------------------------
# hashing and serialization


def _canon(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def skeleton_hash(genome: MorphologyGenome) -> str:
    """Order-independent digest of segment nodes and joint edges only."""
    nodes = sorted(_canon(node_to_dict(n)) for n in genome.nodes)
    edges = sorted(_canon(edge_to_dict(e)) for e in genome.edges)
    payload = _canon({"nodes": nodes, "edges": edges, "root": genome.root,
                      "symmetry_plane": genome.symmetry_plane})
    return hashlib.sha256(payload.encode()).hexdigest()


def node_to_dict(n: SegmentNode) -> dict:
    return {"id": n.id, "shape": n.shape, "dimensions": list(n.dimensions),
            "density": n.density, "recursion_limit": n.recursion_limit}


def edge_to_dict(e: JointEdge) -> dict:
    return {"id": e.id, "from": e.source, "to": e.target, "joint_type": e.joint_type,
            "anchor_parent": list(e.anchor_parent), "anchor_child": list(e.anchor_child),
            "axis": list(e.axis), "reflect": e.reflect, "scale_factor": e.scale_factor}


def genome_to_dict(genome: MorphologyGenome) -> dict:
    return {
        "root": genome.root,
        "symmetry_plane": genome.symmetry_plane,
        "nodes": [node_to_dict(n) for n in genome.nodes],
        "edges": [edge_to_dict(e) for e in genome.edges],
    }


def genome_from_dict(d: dict) -> MorphologyGenome:
    nodes = tuple(
        SegmentNode(n["id"], n["shape"], tuple(float(x) for x in n["dimensions"]),
                    float(n["density"]), int(n["recursion_limit"]))
        for n in d["nodes"]
    )
    edges = tuple(
        JointEdge(e["id"], e["from"], e["to"], e["joint_type"],
                  tuple(float(x) for x in e["anchor_parent"]),
                  tuple(float(x) for x in e["anchor_child"]),
                  tuple(float(x) for x in e["axis"]), bool(e["reflect"]), float(e["scale_factor"]))
        for e in d["edges"]
    )
    return MorphologyGenome(nodes, edges, d["root"], d.get("symmetry_plane", "none"))


def muscle_to_dict(m: MuscleGene) -> dict:
    return {"id": m.id, "parent_segment": m.parent_segment, "child_segment": m.child_segment,
            "attach_parent": list(m.attach_parent), "attach_child": list(m.attach_child),
            "max_strength": m.max_strength}


def muscle_from_dict(d: dict) -> MuscleGene:
    return MuscleGene(d["id"], d["parent_segment"], d["child_segment"],
                      tuple(float(x) for x in d["attach_parent"]),
                      tuple(float(x) for x in d["attach_child"]), float(d["max_strength"]))


def receptor_to_dict(r: PhotoreceptorGene) -> dict:
    return {"id": r.id, "segment": r.segment, "direction": list(r.direction)}


def receptor_from_dict(d: dict) -> PhotoreceptorGene:
    return PhotoreceptorGene(d["id"], d["segment"], tuple(float(x) for x in d["direction"]))


# --------------------------------------------------------------------------
# random construction and mutation


def _fresh_id(prefix: str, taken: Iterable[str]) -> str:
    taken = set(taken)
    k = 0
    while f"{prefix}{k}" in taken:
        k += 1
    return f"{prefix}{k}"


def _rand_unit(rng: np.random.Generator) -> Vec3:
    v = rng.normal(size=3)
    return tuple(float(x) for x in _unit(v))


def _rand_cube(rng: np.random.Generator) -> Vec3:
    return tuple(float(x) for x in rng.uniform(-1.0, 1.0, size=3))


def random_node(rng: np.random.Generator, node_id: str, size=(0.1, 0.4)) -> SegmentNode:
    shape = SHAPES[int(rng.integers(len(SHAPES)))]
    dims = tuple(float(x) for x in rng.uniform(*size, size=3))
    return SegmentNode(node_id, shape, dims, float(rng.uniform(300.0, 1200.0)), 1)


def random_edge(rng: np.random.Generator, edge_id: str, source: str, target: str) -> JointEdge:
    return JointEdge(
        edge_id, source, target,
        JOINT_TYPES[int(rng.integers(1, len(JOINT_TYPES)))],
        _rand_cube(rng), _rand_cube(rng), _rand_unit(rng),
        bool(rng.random() < 0.2), float(rng.uniform(0.7, 1.0)),
    )


def random_muscle(rng: np.random.Generator, muscle_id: str, genome: MorphologyGenome) -> MuscleGene | None:
    pairs = adjacent_pairs(genome)
    if not pairs:
        return None
    a, b = pairs[int(rng.integers(len(pairs)))]
    return MuscleGene(muscle_id, a, b, _rand_cube(rng), _rand_cube(rng),
                      float(rng.uniform(200.0, 2000.0)))


def random_receptor(rng: np.random.Generator, receptor_id: str, genome: MorphologyGenome) -> PhotoreceptorGene:
    paths = expressed_paths(genome)
    return PhotoreceptorGene(receptor_id, paths[int(rng.integers(len(paths)))], _rand_unit(rng))


def random_body(rng: np.random.Generator, n_limbs: int | None = None):
    """A root box with a few directly attached limbs, each spanned by muscles."""
    root = SegmentNode("n0", "box", tuple(float(x) for x in rng.uniform(0.2, 0.5, size=3)),
                       float(rng.uniform(400.0, 1000.0)), 1)
    nodes = [root]
    edges = []
    if n_limbs is None:
        n_limbs = int(rng.integers(1, 4))
    for k in range(n_limbs):
        node = random_node(rng, f"n{k + 1}")
        nodes.append(node)
        edges.append(random_edge(rng, f"e{k}", "n0", node.id))
    genome = MorphologyGenome(tuple(nodes), tuple(edges), "n0",
                              "sagittal" if rng.random() < 0.5 else "none")
    muscles = []
    for pa, pc in adjacent_pairs(genome):
        for _ in range(2):
            mid = _fresh_id("m", [m.id for m in muscles])
            muscles.append(MuscleGene(mid, pa, pc, _rand_cube(rng), _rand_cube(rng),
                                      float(rng.uniform(500.0, 2000.0))))
    return genome, tuple(muscles), ()


def _clamp(x, lo, hi):
    return min(max(x, lo), hi)


def _gauss(rng, x, lo, hi):
    return _clamp(float(x + rng.normal(0.0, 0.1 * (hi - lo))), lo, hi)


def _perturb_vec(rng, v, lo=-1.0, hi=1.0):
    return tuple(_gauss(rng, x, lo, hi) for x in v)


def _perturb_skeleton(rng, g: MorphologyGenome) -> MorphologyGenome:
    choices = ["dimension", "density", "recursion"]
    if g.edges:
        choices += ["anchor", "axis", "scale", "joint_type", "reflect"]
    what = choices[int(rng.integers(len(choices)))]
    if what in ("dimension", "density", "recursion"):
        nodes = list(g.nodes)
        i = int(rng.integers(len(nodes)))
        n = nodes[i]
        if what == "dimension":
            dims = list(n.dimensions)
            k = int(rng.integers(3))
            dims[k] = _gauss(rng, dims[k], *DIM_RANGE)
            n = replace(n, dimensions=tuple(dims))
        elif what == "density":
            n = replace(n, density=_gauss(rng, n.density, *DENSITY_RANGE))
        else:
            n = replace(n, recursion_limit=int(_clamp(n.recursion_limit + (1 if rng.random() < 0.5 else -1),
                                                      1, MAX_RECURSION)))
        nodes[i] = n
        return replace(g, nodes=tuple(nodes))
    edges = list(g.edges)
    i = int(rng.integers(len(edges)))
    e = edges[i]
    if what == "anchor":
        if rng.random() < 0.5:
            e = replace(e, anchor_parent=_perturb_vec(rng, e.anchor_parent))
        else:
            e = replace(e, anchor_child=_perturb_vec(rng, e.anchor_child))
    elif what == "axis":
        e = replace(e, axis=tuple(float(x) for x in _unit(_perturb_vec(rng, e.axis))))
    elif what == "scale":
        e = replace(e, scale_factor=_gauss(rng, e.scale_factor, *SCALE_RANGE))
    elif what == "joint_type":
        e = replace(e, joint_type=JOINT_TYPES[int(rng.integers(len(JOINT_TYPES)))])
    else:
        e = replace(e, reflect=not e.reflect)
    edges[i] = e
    return replace(g, edges=tuple(edges))


def _reachable(g: MorphologyGenome) -> MorphologyGenome:
    seen = {g.root}
    changed = True
    while changed:
        changed = False
        for e in g.edges:
            if e.source in seen and e.target not in seen:
                seen.add(e.target)
                changed = True
    return replace(g, nodes=tuple(n for n in g.nodes if n.id in seen),
                   edges=tuple(e for e in g.edges if e.source in seen and e.target in seen))


def _skeleton_op(op, rng, g: MorphologyGenome) -> MorphologyGenome:
    if op == "perturb":
        return _perturb_skeleton(rng, g)
    if op == "add_node":
        nid = _fresh_id("n", [n.id for n in g.nodes])
        eid = _fresh_id("e", [e.id for e in g.edges])
        src = g.nodes[int(rng.integers(len(g.nodes)))].id
        return replace(g, nodes=g.nodes + (random_node(rng, nid),),
                       edges=g.edges + (random_edge(rng, eid, src, nid),))
    if op == "remove_node":
        cands = [n for n in g.nodes if n.id != g.root]
        if not cands:
            raise GenomeError("no removable node")
        victim = cands[int(rng.integers(len(cands)))].id
        g = replace(g, nodes=tuple(n for n in g.nodes if n.id != victim),
                    edges=tuple(e for e in g.edges if victim not in (e.source, e.target)))
        return _reachable(g)
    if op == "add_edge":
        eid = _fresh_id("e", [e.id for e in g.edges])
        src = g.nodes[int(rng.integers(len(g.nodes)))].id
        dst = g.nodes[int(rng.integers(len(g.nodes)))].id
        return replace(g, edges=g.edges + (random_edge(rng, eid, src, dst),))
    if op == "remove_edge":
        if not g.edges:
            raise GenomeError("no removable edge")
        victim = g.edges[int(rng.integers(len(g.edges)))].id
        return _reachable(replace(g, edges=tuple(e for e in g.edges if e.id != victim)))
    raise ValueError(op)


def _actuator_op(op, rng, g, muscles, receptors, policy):
    muscles, receptors = list(muscles), list(receptors)
    guard = policy.protected if policy.stage_mode == "actuators_only" else frozenset()
    if op == "add_muscle":
        m = random_muscle(rng, _fresh_id("m", [m.id for m in muscles] + list(policy.protected)), g)
        if m is None:
            raise GenomeError("no joint to span")
        muscles.append(m)
    elif op == "remove_muscle":
        cands = [i for i, m in enumerate(muscles) if m.id not in policy.protected]
        if not cands:
            raise GenomeError("no removable muscle")
        muscles.pop(cands[int(rng.integers(len(cands)))])
    elif op == "perturb_muscle":
        cands = [i for i, m in enumerate(muscles) if m.id not in guard]
        if not cands:
            raise GenomeError("no perturbable muscle")
        i = cands[int(rng.integers(len(cands)))]
        m = muscles[i]
        k = int(rng.integers(3))
        if k == 0:
            m = replace(m, attach_parent=_perturb_vec(rng, m.attach_parent))
        elif k == 1:
            m = replace(m, attach_child=_perturb_vec(rng, m.attach_child))
        else:
            m = replace(m, max_strength=_gauss(rng, m.max_strength, *STRENGTH_RANGE))
        muscles[i] = m
    elif op == "add_receptor":
        receptors.append(random_receptor(
            rng, _fresh_id("r", [r.id for r in receptors] + list(policy.protected)), g))
    elif op == "remove_receptor":
        cands = [i for i, r in enumerate(receptors) if r.id not in policy.protected]
        if not cands:
            raise GenomeError("no removable receptor")
        receptors.pop(cands[int(rng.integers(len(cands)))])
    elif op == "perturb_receptor":
        cands = [i for i, r in enumerate(receptors) if r.id not in guard]
        if not cands:
            raise GenomeError("no perturbable receptor")
        i = cands[int(rng.integers(len(cands)))]
        r = receptors[i]
        receptors[i] = replace(r, direction=tuple(float(x) for x in _unit(_perturb_vec(rng, r.direction))))
    else:
        raise ValueError(op)
    return tuple(muscles), tuple(receptors)


def _prune_actuators(g, muscles, receptors, protected):
    """Drop actuators left dangling by a skeleton edit; dangling ``protected`` ones are an error."""
    pairs = set(adjacent_pairs(g))
    paths = set(expressed_paths(g))
    keep_m, keep_r = [], []
    for m in muscles:
        ok = (m.parent_segment, m.child_segment) in pairs or (m.child_segment, m.parent_segment) in pairs
        if ok:
            keep_m.append(m)
        elif m.id in protected:
            raise DanglingReference(f"protected muscle {m.id} lost its joint")
    for r in receptors:
        if r.segment in paths:
            keep_r.append(r)
        elif r.id in protected:
            raise DanglingReference(f"protected receptor {r.id} lost its segment")
    return tuple(keep_m), tuple(keep_r)


def mutate_morphology(genome: MorphologyGenome, muscles: Sequence[MuscleGene],
                      receptors: Sequence[PhotoreceptorGene], policy: MutationPolicy,
                      rng_seed) -> tuple[MorphologyGenome, tuple, tuple]:
    """Apply each enabled operator with its probability; invalid results are retried.

    ``rng_seed`` may be an int, a ``SeedSequence`` or a ``Generator``.
    """
    if policy.stage_mode == "control_only":
        raise ValueError("control_only policy forbids morphology mutation")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    g, mus, recs = genome, tuple(muscles), tuple(receptors)
    for op in DEFAULT_RATES:
        if not policy.enabled(op):
            continue
        if rng.random() >= policy.rates[op]:
            continue
        for _attempt in range(10):
            try:
                if op in SKELETON_OPS:
                    cand = _skeleton_op(op, rng, g)
                    validate(cand)
                    cm, cr = _prune_actuators(cand, mus, recs, frozenset())
                else:
                    cand = g
                    cm, cr = _actuator_op(op, rng, g, mus, recs, policy)
                validate_actuators(cand, cm, cr)
            except GenomeError:
                continue
            g, mus, recs = cand, cm, cr
            break
    return g, mus, recs
