"""Control network: typed nodes joined by wires, stepped once per physics step.

Update rule
-----------
Ordinary nodes update synchronously: each reads its inputs' outputs from the
previous step.  Nodes inserted by encapsulation (sigma controllers, gating
multiply nodes, muscle wrap sigmas) and ``muscle_out`` nodes are
*transparent*: they are evaluated after the synchronous pass, in dependency
order, from values already computed this step.  That is what makes
encapsulation exact: splicing ``x -> gate -> wrap -> muscle`` in front of a
muscle adds no latency, so with the controller at 1 the muscle sees the very
value it saw before.  Cycles among transparent nodes fall back to the
previous-step value of the back edge.

Every output is clamped to [0, 1].
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

KINDS = (
    "sinusoidal", "complement", "constant", "scale", "multiply", "divide", "sum",
    "difference", "derivative", "threshold", "switch", "delay", "abs_difference",
    "sigma", "muscle_out", "muscle_proprio", "photoreceptor_in",
)
KIND_CODE = {k: i for i, k in enumerate(KINDS)}
SIGMA = KIND_CODE["sigma"]

# number of input slots; None = variadic
ARITY = {
    "sinusoidal": 0, "complement": 1, "constant": 0, "scale": 1, "multiply": 2,
    "divide": 2, "sum": 2, "difference": 2, "derivative": 1, "threshold": 1,
    "switch": 3, "delay": 1, "abs_difference": 2, "sigma": None, "muscle_out": 1,
    "muscle_proprio": 0, "photoreceptor_in": 0,
}

# name, low, high, integer?
PARAM_SPECS = {
    "sinusoidal": (("period", 10.0, 300.0, False), ("phase", 0.0, 2 * math.pi, False)),
    "constant": (("c", 0.0, 1.0, False),),
    "scale": (("c", 0.0, 2.0, False),),
    "threshold": (("t", 0.0, 1.0, False),),
    "delay": (("k", 1.0, 30.0, True),),
}

EVOLVABLE_KINDS = (
    "sinusoidal", "complement", "constant", "scale", "multiply", "divide", "sum",
    "difference", "derivative", "threshold", "switch", "delay", "abs_difference",
)
IO_KINDS = ("muscle_out", "muscle_proprio", "photoreceptor_in")
MAX_DELAY = 30
DIVIDE_EPS = 1e-6


# --------------------------------------------------------------------------
# compiled node semantics


@njit(cache=True)
def _clamp01(x):
    if x < 0.0:
        return 0.0
    if x > 1.0:
        return 1.0
    return x


@njit(cache=True)
def _eval_kind(kind, p, xin, nin, t, mem, ring):
    """Evaluate one node.  ``mem[0]`` holds the derivative's last input."""
    x0 = xin[0] if nin > 0 else 0.0
    x1 = xin[1] if nin > 1 else 0.0
    x2 = xin[2] if nin > 2 else 0.0
    if kind == 0:
        v = 0.5 + 0.5 * math.sin(2.0 * math.pi * t / p[0] + p[1])
    elif kind == 1:
        v = 1.0 - x0
    elif kind == 2:
        v = p[0]
    elif kind == 3:
        v = p[0] * x0
    elif kind == 4:
        v = x0 * x1
    elif kind == 5:
        if x1 < 1e-6:
            v = 1.0
        else:
            v = x0 / x1
    elif kind == 6 or kind == 13:
        v = 0.0
        for i in range(nin):
            v += xin[i]
    elif kind == 7:
        v = x0 - x1
    elif kind == 8:
        v = 0.5 + 0.5 * (x0 - mem[0])
        mem[0] = x0
    elif kind == 9:
        v = 1.0 if x0 > p[0] else 0.0
    elif kind == 10:
        v = x1 if x0 > 0.5 else x2
    elif kind == 11:
        k = int(p[0])
        slot = t % k
        v = ring[slot]
        ring[slot] = x0
    elif kind == 12:
        v = abs(x0 - x1)
    elif kind == 14:
        v = x0
    else:
        v = 0.0
    return _clamp01(v)


@njit(cache=True)
def _gate_group(vals, members, count):
    best = -1
    bv = 0.0
    for j in range(count):
        if best < 0 or vals[members[j]] > bv:
            best = j
            bv = vals[members[j]]
    for j in range(count):
        if j != best:
            vals[members[j]] = 0.0


@njit(cache=True)
def _brain_step(kind, p, transparent, in_ptr, in_src, sync_order, unit_ptr, unit_nodes,
                force, mute, recv_idx, prop_idx, mout_idx, sensors, proprio,
                out, mem, ring, tstate, xin, done, acts):
    n = kind.shape[0]
    t = tstate[0]
    new = out.copy()
    for i in range(n):
        done[i] = False
    for j in range(recv_idx.shape[0]):
        if recv_idx[j] >= 0:
            new[recv_idx[j]] = _clamp01(sensors[j])
            done[recv_idx[j]] = True
    for j in range(prop_idx.shape[0]):
        if prop_idx[j] >= 0:
            new[prop_idx[j]] = _clamp01(proprio[j])
            done[prop_idx[j]] = True
    for s in range(sync_order.shape[0]):
        i = sync_order[s]
        nin = in_ptr[i + 1] - in_ptr[i]
        for k in range(nin):
            src = in_src[in_ptr[i] + k]
            xin[k] = out[src] if src >= 0 else 0.0
        v = _eval_kind(kind[i], p[i], xin, nin, t, mem[i], ring[i])
        if not math.isnan(force[i]):
            v = force[i]
        if mute[i]:
            v = 0.0
        new[i] = v
    for i in range(n):
        if not transparent[i]:
            done[i] = True
    for u in range(unit_ptr.shape[0] - 1):
        a = unit_ptr[u]
        b = unit_ptr[u + 1]
        for m in range(a, b):
            i = unit_nodes[m]
            nin = in_ptr[i + 1] - in_ptr[i]
            for k in range(nin):
                src = in_src[in_ptr[i] + k]
                if src < 0:
                    xin[k] = 0.0
                elif done[src]:
                    xin[k] = new[src]
                else:
                    xin[k] = out[src]
            v = _eval_kind(kind[i], p[i], xin, nin, t, mem[i], ring[i])
            if not math.isnan(force[i]):
                v = force[i]
            if mute[i]:
                v = 0.0
            new[i] = v
        if b - a > 1:
            _gate_group(new, unit_nodes[a:b], b - a)
        for m in range(a, b):
            done[unit_nodes[m]] = True
    for i in range(n):
        out[i] = new[i]
    for j in range(mout_idx.shape[0]):
        acts[j] = out[mout_idx[j]] if mout_idx[j] >= 0 else 0.0
    tstate[0] = t + 1


def eval_node(kind: str, params: dict | None, inputs, prev_output: float = 0.0, *,
              memory: float | None = None, t: int = 0, delay_buffer=None) -> float:
    """Evaluate a single node outside a graph.

    ``memory`` is the derivative node's previous input (defaults to the
    current input, i.e. no change); ``delay_buffer`` is the delay node's ring.
    ``prev_output`` is accepted for symmetry with the graph update and is not
    read by any kind.
    """
    code = KIND_CODE[kind]
    xs = np.zeros(max(len(inputs), 3))
    xs[: len(inputs)] = inputs
    p = np.array(_param_vector(kind, params or {}))
    x0 = float(inputs[0]) if len(inputs) else 0.0
    mem = np.array([x0 if memory is None else float(memory)])
    ring = np.zeros(MAX_DELAY) if delay_buffer is None else np.asarray(delay_buffer, dtype=float)
    return float(_eval_kind(code, p, xs, len(inputs), t, mem, ring))


def _param_vector(kind: str, params: dict) -> list[float]:
    vec = [0.0, 0.0, 0.0]
    for i, (name, lo, _hi, _int) in enumerate(PARAM_SPECS.get(kind, ())):
        vec[i] = float(params.get(name, lo))
    if kind == "sinusoidal" and vec[0] <= 0:
        vec[0] = 10.0
    if kind == "delay":
        vec[0] = float(min(max(int(vec[0]), 1), MAX_DELAY))
    return vec


def apply_pandemonium(groups, sigma_outputs: dict) -> dict:
    """Winner-take-all per group; earlier members win ties."""
    gated = dict(sigma_outputs)
    for group in groups:
        members = [m for m in group if m in gated]
        if not members:
            continue
        winner = members[0]
        for m in members[1:]:
            if gated[m] > gated[winner]:
                winner = m
        for m in members:
            if m != winner:
                gated[m] = 0.0
    return gated


# --------------------------------------------------------------------------
# graph


@dataclass
class BrainNode:
    id: str
    kind: str
    params: dict = field(default_factory=dict)
    locked: bool = False
    skill_tag: str | None = None
    role: str | None = None  # "controller", "gate", "wrap" for encapsulation nodes

    @property
    def transparent(self) -> bool:
        return self.role is not None or self.kind in ("sigma", "muscle_out")


@dataclass
class Wire:
    id: str
    source: str
    target: str
    slot: int
    locked: bool = False


def muscle_out_id(muscle_id: str) -> str:
    return f"mo:{muscle_id}"


def proprio_id(muscle_id: str) -> str:
    return f"pp:{muscle_id}"


def receptor_id(rid: str) -> str:
    return f"rc:{rid}"


class BrainGraph:
    def __init__(self, nodes=None, wires=None, pandemonium_groups=None):
        self.nodes: dict[str, BrainNode] = {}
        for n in nodes or ():
            self.nodes[n.id] = n
        self.wires: list[Wire] = list(wires or ())
        self.pandemonium_groups: list[list[str]] = [list(g) for g in pandemonium_groups or ()]
        self.muscle_ids: list[str] = []
        self.receptor_ids: list[str] = []
        self._compiled = None
        self._state = None
        self._counter = 0

    # -- structure -------------------------------------------------------

    def copy(self) -> "BrainGraph":
        b = BrainGraph()
        b.nodes = {k: copy.copy(v) for k, v in self.nodes.items()}
        for n in b.nodes.values():
            n.params = dict(n.params)
        b.wires = [copy.copy(w) for w in self.wires]
        b.pandemonium_groups = [list(g) for g in self.pandemonium_groups]
        b.muscle_ids = list(self.muscle_ids)
        b.receptor_ids = list(self.receptor_ids)
        b._counter = self._counter
        return b

    def _touch(self):
        self._compiled = None
        self._state = None

    def fresh_id(self, prefix: str) -> str:
        taken = set(self.nodes) | {w.id for w in self.wires}
        while f"{prefix}{self._counter}" in taken:
            self._counter += 1
        nid = f"{prefix}{self._counter}"
        self._counter += 1
        return nid

    def add_node(self, kind: str, params=None, *, skill_tag=None, role=None, locked=False,
                 node_id=None) -> str:
        if kind not in KIND_CODE:
            raise ValueError(f"unknown node kind {kind!r}")
        nid = node_id or self.fresh_id("b")
        if nid in self.nodes:
            raise ValueError(f"duplicate node id {nid}")
        self.nodes[nid] = BrainNode(nid, kind, dict(params or {}), locked, skill_tag, role)
        self._touch()
        return nid

    def inputs_of(self, node_id: str) -> list[Wire]:
        return sorted((w for w in self.wires if w.target == node_id), key=lambda w: w.slot)

    def free_slot(self, node_id: str) -> int | None:
        node = self.nodes[node_id]
        used = {w.slot for w in self.wires if w.target == node_id}
        arity = ARITY[node.kind]
        if arity is None:
            k = 0
            while k in used:
                k += 1
            return k
        for k in range(arity):
            if k not in used:
                return k
        return None

    def add_wire(self, source: str, target: str, slot: int | None = None, *, locked=False) -> str:
        if source not in self.nodes or target not in self.nodes:
            raise KeyError("wire endpoint missing")
        if slot is None:
            slot = self.free_slot(target)
            if slot is None:
                raise ValueError(f"node {target} has no free input slot")
        arity = ARITY[self.nodes[target].kind]
        if slot < 0 or (arity is not None and slot >= arity):
            raise ValueError(f"slot {slot} out of range for {self.nodes[target].kind}")
        if any(w.target == target and w.slot == slot for w in self.wires):
            raise ValueError(f"slot {slot} of {target} already driven")
        wid = self.fresh_id("w")
        self.wires.append(Wire(wid, source, target, slot, locked))
        self._touch()
        return wid

    def remove_wire(self, wire_id: str) -> None:
        w = self.wire(wire_id)
        if w.locked:
            raise PermissionError(f"wire {wire_id} is locked")
        self.wires = [x for x in self.wires if x.id != wire_id]
        self._touch()

    def remove_node(self, node_id: str) -> None:
        if self.nodes[node_id].locked:
            raise PermissionError(f"node {node_id} is locked")
        if any(w.locked for w in self.wires if node_id in (w.source, w.target)):
            raise PermissionError(f"node {node_id} has locked wires")
        del self.nodes[node_id]
        self.wires = [w for w in self.wires if node_id not in (w.source, w.target)]
        self._touch()

    def wire(self, wire_id: str) -> Wire:
        for w in self.wires:
            if w.id == wire_id:
                return w
        raise KeyError(wire_id)

    def check_arity(self) -> None:
        seen = set()
        for w in self.wires:
            arity = ARITY[self.nodes[w.target].kind]
            if w.slot < 0 or (arity is not None and w.slot >= arity):
                raise ValueError(f"wire {w.id} targets out-of-range slot {w.slot}")
            if (w.target, w.slot) in seen:
                raise ValueError(f"slot {w.slot} of {w.target} driven twice")
            seen.add((w.target, w.slot))

    def sync_io(self, muscle_ids, receptor_ids) -> None:
        """Add io nodes for new actuators and drop unlocked ones of removed actuators."""
        muscle_ids, receptor_ids = list(muscle_ids), list(receptor_ids)
        want = {}
        for m in muscle_ids:
            want[muscle_out_id(m)] = ("muscle_out", {"muscle": m})
            want[proprio_id(m)] = ("muscle_proprio", {"muscle": m})
        for r in receptor_ids:
            want[receptor_id(r)] = ("photoreceptor_in", {"receptor": r})
        for nid, node in list(self.nodes.items()):
            if node.kind in IO_KINDS and nid not in want and not node.locked:
                # locked io nodes outlive their actuator as inert orphans
                self.remove_node(nid)
        for nid, (kind, params) in want.items():
            if nid not in self.nodes:
                self.add_node(kind, params, node_id=nid)
        self.muscle_ids = muscle_ids
        self.receptor_ids = receptor_ids
        self._touch()

    def controllers(self) -> dict[str, str]:
        """skill id -> controlling sigma node id."""
        return {n.params["skill"]: n.id for n in self.nodes.values() if n.role == "controller"}

    def protected_actuators(self) -> frozenset:
        ids = set()
        for n in self.nodes.values():
            if n.kind in IO_KINDS and n.locked:
                ids.add(n.params.get("muscle") or n.params.get("receptor"))
        return frozenset(ids)

    # -- execution -------------------------------------------------------

    def compile(self):
        if self._compiled is not None:
            return self._compiled
        ids = list(self.nodes)
        index = {nid: i for i, nid in enumerate(ids)}
        n = len(ids)
        kind = np.array([KIND_CODE[self.nodes[i].kind] for i in ids], dtype=np.int64)
        p = np.array([_param_vector(self.nodes[i].kind, self.nodes[i].params) for i in ids],
                     dtype=np.float64).reshape(n, 3)
        transparent = np.array([self.nodes[i].transparent for i in ids], dtype=np.bool_)
        per_node: list[list[int]] = [[] for _ in range(n)]
        for w in sorted(self.wires, key=lambda w: (index[w.target], w.slot)):
            t = index[w.target]
            lst = per_node[t]
            while len(lst) < w.slot:
                lst.append(-1)
            lst.append(index[w.source])
        in_ptr = np.zeros(n + 1, dtype=np.int64)
        for i in range(n):
            in_ptr[i + 1] = in_ptr[i] + len(per_node[i])
        in_src = np.array([s for lst in per_node for s in lst], dtype=np.int64)
        sync_order = np.array([i for i in range(n) if not transparent[i]
                               and self.nodes[ids[i]].kind not in ("muscle_proprio", "photoreceptor_in")],
                              dtype=np.int64)
        units = self._transparent_units(ids, index, per_node, transparent)
        unit_ptr = np.zeros(len(units) + 1, dtype=np.int64)
        for u, members in enumerate(units):
            unit_ptr[u + 1] = unit_ptr[u] + len(members)
        unit_nodes = np.array([m for members in units for m in members], dtype=np.int64)
        recv_idx = np.array([index.get(receptor_id(r), -1) for r in self.receptor_ids], dtype=np.int64)
        prop_idx = np.array([index.get(proprio_id(m), -1) for m in self.muscle_ids], dtype=np.int64)
        mout_idx = np.array([index.get(muscle_out_id(m), -1) for m in self.muscle_ids], dtype=np.int64)
        max_in = max([len(lst) for lst in per_node] + [3])
        self._compiled = dict(
            ids=ids, index=index, kind=kind, p=p, transparent=transparent, in_ptr=in_ptr,
            in_src=in_src, sync_order=sync_order, unit_ptr=unit_ptr, unit_nodes=unit_nodes,
            recv_idx=recv_idx, prop_idx=prop_idx, mout_idx=mout_idx, max_in=max_in,
        )
        return self._compiled

    def _transparent_units(self, ids, index, per_node, transparent):
        """Dependency order over transparent nodes; pandemonium groups move as one unit."""
        group_of = {}
        for g in self.pandemonium_groups:
            members = sorted((index[m] for m in g if m in index),
                             key=lambda i: (self.nodes[ids[i]].params.get("order", 0), i))
            if len(members) > 1:
                for m in members:
                    group_of[m] = tuple(members)
        units = []
        seen = set()
        for i in range(len(ids)):
            if not transparent[i] or i in seen:
                continue
            unit = group_of.get(i, (i,))
            seen.update(unit)
            units.append(unit)
        unit_of = {m: k for k, u in enumerate(units) for m in u}
        deps = []
        for u in units:
            d = set()
            for m in u:
                for s in per_node[m]:
                    if s >= 0 and s in unit_of and unit_of[s] != unit_of[m]:
                        d.add(unit_of[s])
            deps.append(d)
        order = []
        placed = [False] * len(units)
        remaining = len(units)
        while remaining:
            ready = [k for k in range(len(units)) if not placed[k] and all(placed[d] for d in deps[k])]
            if not ready:
                # cycle: break at the lowest unplaced unit
                ready = [min(k for k in range(len(units)) if not placed[k])]
            for k in ready[:1]:
                placed[k] = True
                order.append(units[k])
                remaining -= 1
        return order

    def reset(self) -> None:
        c = self.compile()
        n = len(c["ids"])
        self._state = dict(
            out=np.zeros(n), mem=np.zeros((n, 1)), ring=np.zeros((n, MAX_DELAY)),
            t=np.zeros(1, dtype=np.int64), xin=np.zeros(c["max_in"]),
            done=np.zeros(n, dtype=np.bool_),
        )

    def control_arrays(self, force: dict | None = None, mute=()) -> tuple[np.ndarray, np.ndarray]:
        c = self.compile()
        n = len(c["ids"])
        f = np.full(n, np.nan)
        for nid, v in (force or {}).items():
            f[c["index"][nid]] = float(v)
        mu = np.zeros(n, dtype=np.bool_)
        for nid in mute:
            mu[c["index"][nid]] = True
        return f, mu

    def step(self, sensors: dict | None = None, proprio: dict | None = None, *,
             force: dict | None = None, mute=()) -> dict:
        """Advance one step; returns muscle id -> activation."""
        c = self.compile()
        if self._state is None:
            self.reset()
        s = self._state
        sens = np.array([float((sensors or {}).get(r, 0.0)) for r in self.receptor_ids])
        prop = np.array([float((proprio or {}).get(m, 0.0)) for m in self.muscle_ids])
        f, mu = self.control_arrays(force, mute)
        acts = np.zeros(len(self.muscle_ids))
        _brain_step(c["kind"], c["p"], c["transparent"], c["in_ptr"], c["in_src"], c["sync_order"],
                    c["unit_ptr"], c["unit_nodes"], f, mu, c["recv_idx"], c["prop_idx"], c["mout_idx"],
                    sens, prop, s["out"], s["mem"], s["ring"], s["t"], s["xin"], s["done"], acts)
        return {m: float(a) for m, a in zip(self.muscle_ids, acts)}

    def outputs(self) -> dict:
        c = self.compile()
        if self._state is None:
            self.reset()
        return {nid: float(v) for nid, v in zip(c["ids"], self._state["out"])}

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "nodes": [
                {"id": n.id, "kind": n.kind, "params": n.params, "locked": n.locked,
                 "skill_tag": n.skill_tag, "role": n.role}
                for n in self.nodes.values()
            ],
            "wires": [
                {"id": w.id, "from": w.source, "to": w.target, "slot": w.slot, "locked": w.locked}
                for w in self.wires
            ],
            "pandemonium_groups": [list(g) for g in self.pandemonium_groups],
            "muscle_ids": list(self.muscle_ids),
            "receptor_ids": list(self.receptor_ids),
            "counter": self._counter,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BrainGraph":
        b = cls(
            [BrainNode(n["id"], n["kind"], dict(n["params"]), n["locked"], n["skill_tag"], n["role"])
             for n in d["nodes"]],
            [Wire(w["id"], w["from"], w["to"], int(w["slot"]), w["locked"]) for w in d["wires"]],
            d["pandemonium_groups"],
        )
        b.muscle_ids = list(d["muscle_ids"])
        b.receptor_ids = list(d["receptor_ids"])
        b._counter = int(d.get("counter", 0))
        return b


def structural_hash_locked(brain: BrainGraph) -> str:
    """Digest over locked nodes and wires; the immutability witness for encapsulated skills."""
    nodes = sorted(
        json.dumps([n.id, n.kind, n.params, n.skill_tag, n.role], sort_keys=True)
        for n in brain.nodes.values() if n.locked
    )
    wires = sorted(json.dumps([w.source, w.target, w.slot]) for w in brain.wires if w.locked)
    return hashlib.sha256(json.dumps([nodes, wires]).encode()).hexdigest()


# --------------------------------------------------------------------------
# control mutation

CONTROL_RATES = {
    "perturb": 0.8,
    "add_node": 0.15,
    "remove_node": 0.05,
    "add_wire": 0.2,
    "remove_wire": 0.05,
    "rewire": 0.1,
}


def random_params(kind: str, rng: np.random.Generator) -> dict:
    out = {}
    for name, lo, hi, is_int in PARAM_SPECS.get(kind, ()):
        v = rng.uniform(lo, hi)
        out[name] = float(int(round(v))) if is_int else float(v)
    return out


def skill_nodes(brain: BrainGraph, skill: str) -> list[str]:
    return [n.id for n in brain.nodes.values() if n.skill_tag == skill and not n.locked]


def sensor_nodes(brain: BrainGraph) -> list[str]:
    return [n.id for n in brain.nodes.values() if n.kind in ("muscle_proprio", "photoreceptor_in")]


def _targets(brain: BrainGraph, own: list[str], drive: list[str]) -> list[str]:
    return [t for t in own + drive if t in brain.nodes and brain.free_slot(t) is not None]


def mutate_control(brain: BrainGraph, skill: str, rng: np.random.Generator, *,
                   drive_targets=(), rates=None, allow_outputs=True) -> BrainGraph:
    """Return a mutated copy; only unlocked nodes/wires of ``skill`` are edited.

    ``drive_targets`` are the nodes this skill may feed from outside itself
    (muscle drives for leaf skills, dependency controllers otherwise).  With
    ``allow_outputs=False`` no new wire may leave the skill (reconciliation).
    """
    rates = CONTROL_RATES if rates is None else rates
    b = brain.copy()
    drive = list(drive_targets) if allow_outputs else []
    for op, rate in rates.items():
        if rate <= 0 or rng.random() >= rate:
            continue
        own = skill_nodes(b, skill)
        if op == "perturb":
            cands = [nid for nid in own if PARAM_SPECS.get(b.nodes[nid].kind)]
            if not cands:
                continue
            node = b.nodes[cands[int(rng.integers(len(cands)))]]
            specs = PARAM_SPECS[node.kind]
            name, lo, hi, is_int = specs[int(rng.integers(len(specs)))]
            v = float(node.params.get(name, lo)) + rng.normal(0.0, 0.1 * (hi - lo))
            v = min(max(v, lo), hi)
            node.params[name] = float(int(round(v))) if is_int else float(v)
            b._touch()
        elif op == "add_node":
            kind = EVOLVABLE_KINDS[int(rng.integers(len(EVOLVABLE_KINDS)))]
            nid = b.add_node(kind, random_params(kind, rng), skill_tag=skill)
            sources = own + sensor_nodes(b)
            for _ in range(ARITY[kind]):
                if sources and rng.random() < 0.8:
                    b.add_wire(sources[int(rng.integers(len(sources)))], nid)
            tg = [t for t in _targets(b, own, drive) if t != nid]
            if tg:
                b.add_wire(nid, tg[int(rng.integers(len(tg)))])
        elif op == "remove_node":
            # nodes feeding a gate keep their encapsulated outputs alive
            cands = [nid for nid in own
                     if not any(w.source == nid and b.nodes[w.target].role == "gate" for w in b.wires)]
            if cands:
                b.remove_node(cands[int(rng.integers(len(cands)))])
        elif op == "add_wire":
            sources = own + sensor_nodes(b)
            tg = _targets(b, own, drive)
            if sources and tg:
                b.add_wire(sources[int(rng.integers(len(sources)))], tg[int(rng.integers(len(tg)))])
        elif op in ("remove_wire", "rewire"):
            ownset = set(own)
            driveset = set(drive)
            cands = [w for w in b.wires if not w.locked
                     and (w.source in ownset or w.target in ownset)
                     and (w.target in ownset or w.target in driveset)]
            if not cands:
                continue
            w = cands[int(rng.integers(len(cands)))]
            if op == "remove_wire":
                b.remove_wire(w.id)
            else:
                sources = own + sensor_nodes(b)
                if sources:
                    w.source = sources[int(rng.integers(len(sources)))]
                    b._touch()
    b.check_arity()
    return b


def random_skill_network(brain: BrainGraph, skill: str, rng: np.random.Generator, drive_targets,
                         n_nodes: int | None = None) -> BrainGraph:
    """Seed an unlocked subgraph for ``skill`` that drives some of ``drive_targets``."""
    b = brain.copy()
    drive = list(drive_targets)
    if n_nodes is None:
        n_nodes = max(1, len(drive))
    for _ in range(n_nodes):
        kind = ("sinusoidal", "sinusoidal", "constant", "complement", "scale")[int(rng.integers(5))]
        nid = b.add_node(kind, random_params(kind, rng), skill_tag=skill)
        own = skill_nodes(b, skill)
        for _k in range(ARITY[kind]):
            srcs = [o for o in own if o != nid] + sensor_nodes(b)
            if srcs:
                b.add_wire(srcs[int(rng.integers(len(srcs)))], nid)
    own = skill_nodes(b, skill)
    for t in drive:
        if b.free_slot(t) is not None and rng.random() < 0.8:
            b.add_wire(own[int(rng.integers(len(own)))], t)
    return b
