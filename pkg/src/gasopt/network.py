"""Gas network description and the native JSON network file format.

A network file is a single JSON document::

    {
      "nodes":       [{"id": "S", "kind": "slack", "p_min": 0.7, "p_max": 1.1}, ...],
      "pipes":       [{"id": "P1", "from": "S", "to": "A", "length": 5e4,
                       "diameter": 0.6, "friction": 0.01}, ...],
      "compressors": [{"id": "C1", "from": "A", "to": "B", "K": 0.1, "gamma": 1.2,
                       "kappa_min": 1.0, "kappa_max": 1.2}, ...],
      "profiles":    [{"node": "D", "role": "demand", "base": 40.0,
                       "shape": "sinusoidal", "amplitude": 0.2}, ...],
      "constants":   {"speed_of_sound": 370.0, "pressure_base": 5e6, ...},
      "scaling":     {"supply": 1.0, "demand": 1.0}
    }

Pressures are per-unit (p.u.), everything else is SI.  See README for the
full list of optional fields and their defaults.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    BoundViolation,
    DisconnectedNetwork,
    DuplicateId,
    InvalidValue,
    LaminarRegime,
    MultipleSlackNodes,
    NetworkSyntaxError,
    NoSlackNode,
    OutOfHorizon,
    UnknownKey,
    UnknownNode,
)

SLACK = "slack"
JUNCTION = "junction"
SUPPLY = "supply"
DEMAND = "demand"

PROFILE_SHAPES = ("constant", "sinusoidal", "tabulated")
PROFILE_CONVENTIONS = ("literal", "periodic")


@dataclass(frozen=True)
class Node:
    id: str
    kind: str = JUNCTION
    p_min: float = 0.7
    p_max: float = 1.1
    is_original: bool = True


@dataclass(frozen=True)
class Pipe:
    id: str
    from_node: str
    to_node: str
    length: float
    diameter: float
    friction: float
    roughness: Optional[float] = None  # kept only to round-trip files

    @property
    def area(self) -> float:
        return math.pi * self.diameter**2 / 4.0


@dataclass(frozen=True)
class Compressor:
    id: str
    from_node: str
    to_node: str
    K: float = 0.1
    gamma: float = 1.2
    kappa_min: float = 1.0
    kappa_max: float = 1.2


@dataclass(frozen=True)
class GasConstants:
    """Physical constants.

    ``speed_of_sound`` folds compressibility, gas constant, temperature and
    molar mass into one number.  ``pressure_base`` is the pressure in Pa that
    corresponds to 1 p.u.
    """

    speed_of_sound: float = 370.0
    pressure_base: float = 5.0e6
    slack_pressure: float = 1.0
    reynolds: float = 1.0e7
    profile_convention: str = "literal"


@dataclass(frozen=True)
class BoundaryProfile:
    node: str
    role: str
    base: float
    shape: str = "constant"
    amplitude: float = 0.2
    samples: tuple = ()
    scale: float = 1.0

    @property
    def L0(self) -> float:
        """Scaled base load in kg/s."""
        return self.base * self.scale


@dataclass(frozen=True)
class GasNetwork:
    nodes: tuple
    pipes: tuple
    compressors: tuple
    profiles: tuple
    constants: GasConstants = field(default_factory=GasConstants)
    supply_scaling: float = 1.0
    demand_scaling: float = 1.0

    @property
    def node_ids(self):
        return [n.id for n in self.nodes]

    @property
    def slack(self) -> Node:
        return next(n for n in self.nodes if n.kind == SLACK)

    def node(self, node_id) -> Node:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise UnknownNode(node_id)

    def profile_for(self, node_id) -> Optional[BoundaryProfile]:
        for p in self.profiles:
            if p.node == node_id:
                return p
        return None

    def with_compressor_params(self, **kw) -> "GasNetwork":
        """Copy with every compressor's parameters overridden by ``kw``."""
        from dataclasses import replace

        comps = tuple(replace(c, **kw) for c in self.compressors)
        return replace(self, compressors=comps)

    def with_pressure_bounds(self, p_min=None, p_max=None) -> "GasNetwork":
        from dataclasses import replace

        nodes = tuple(
            replace(
                n,
                p_min=n.p_min if p_min is None else p_min,
                p_max=n.p_max if p_max is None else p_max,
            )
            for n in self.nodes
        )
        return replace(self, nodes=nodes)

    def with_scaling(self, supply=None, demand=None) -> "GasNetwork":
        """Copy with new supply/demand multipliers on the (unscaled) base loads."""
        from dataclasses import replace

        s = self.supply_scaling if supply is None else float(supply)
        d = self.demand_scaling if demand is None else float(demand)
        if s < 0 or d < 0:
            raise InvalidValue("scaling multipliers must be non-negative")
        profiles = tuple(replace(p, scale=s if p.role == SUPPLY else d) for p in self.profiles)
        return replace(self, profiles=profiles, supply_scaling=s, demand_scaling=d)


# ---------------------------------------------------------------------------
# friction and boundary evaluation
# ---------------------------------------------------------------------------


def friction_from_roughness(roughness: float, diameter: float, reynolds: float) -> float:
    """Darcy friction factor from Chen's explicit approximation of Colebrook.

    Raises
    ------
    LaminarRegime
        If ``reynolds <= 4000``; the correlation is only valid for turbulent flow.
    """
    if reynolds <= 4000:
        raise LaminarRegime(f"Re={reynolds:g} is not turbulent (needs Re > 4000)")
    if diameter <= 0:
        raise InvalidValue("diameter must be positive")
    if not 0 <= roughness < diameter:
        raise InvalidValue("roughness must satisfy 0 <= roughness < diameter")
    rel = roughness / diameter
    inner = rel**1.1098 / 2.8257 + 5.8506 / reynolds**0.8981
    inv_sqrt_f = -2.0 * math.log10(rel / 3.7065 - 5.0452 / reynolds * math.log10(inner))
    return 1.0 / inv_sqrt_f**2


def evaluate_boundary(profile: BoundaryProfile, t: float, T: float, convention: str = "literal") -> float:
    """Mass flow of ``profile`` at time ``t`` of a horizon of length ``T``.

    With ``convention="literal"`` the sinusoid is ``L0 (1 + a sin(t / (2 pi T)))``;
    ``"periodic"`` uses ``L0 (1 + a sin(2 pi t / T))`` instead.
    """
    if t < 0 or t > T:
        raise OutOfHorizon(f"t={t} outside [0, {T}]")
    L0 = profile.L0
    if profile.shape == "constant":
        return L0
    if profile.shape == "sinusoidal":
        if convention == "literal":
            arg = t / (2.0 * math.pi * T) if T > 0 else 0.0
        elif convention == "periodic":
            arg = 2.0 * math.pi * t / T if T > 0 else 0.0
        else:
            raise InvalidValue(f"unknown profile convention {convention!r}")
        return L0 * (1.0 + profile.amplitude * math.sin(arg))
    # tabulated: samples are (time, factor-of-base) pairs, linearly interpolated
    ts = np.array([s[0] for s in profile.samples], dtype=float)
    vs = np.array([s[1] for s in profile.samples], dtype=float)
    if ts[0] > 0 or ts[-1] < T:
        raise OutOfHorizon(f"tabulated samples for {profile.node!r} do not cover [0, {T}]")
    return profile.scale * float(np.interp(t, ts, vs))


# ---------------------------------------------------------------------------
# parsing / serialisation
# ---------------------------------------------------------------------------

_TOP_KEYS = {"nodes", "pipes", "compressors", "profiles", "constants", "scaling"}
_NODE_KEYS = {"id", "kind", "p_min", "p_max"}
_PIPE_KEYS = {"id", "from", "to", "length", "diameter", "friction", "roughness"}
_COMP_KEYS = {"id", "from", "to", "K", "gamma", "kappa_min", "kappa_max"}
_PROFILE_KEYS = {"node", "role", "base", "shape", "amplitude", "samples"}
_CONST_KEYS = {"speed_of_sound", "pressure_base", "slack_pressure", "reynolds", "profile_convention"}
_SCALING_KEYS = {"supply", "demand"}


def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise InvalidValue(f"{where}: expected an object")
    extra = set(obj) - allowed
    if extra:
        raise UnknownKey(f"{where}: unknown key(s) {sorted(extra)}")


def _number(obj, key, where, default=None):
    if key not in obj:
        if default is None:
            raise InvalidValue(f"{where}: missing required field {key!r}")
        return float(default)
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise InvalidValue(f"{where}: field {key!r} must be a finite number")
    return float(v)


def _string(obj, key, where):
    v = obj.get(key)
    if not isinstance(v, str) or not v:
        raise InvalidValue(f"{where}: field {key!r} must be a non-empty string")
    return v


def parse_network(text: str) -> GasNetwork:
    """Parse and validate a network file; see the module docstring for the format."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetworkSyntaxError(exc.msg, exc.lineno, exc.colno) from None
    _check_keys(doc, _TOP_KEYS, "network")

    const_doc = doc.get("constants", {})
    _check_keys(const_doc, _CONST_KEYS, "constants")
    constants = GasConstants(
        speed_of_sound=_number(const_doc, "speed_of_sound", "constants", 370.0),
        pressure_base=_number(const_doc, "pressure_base", "constants", 5.0e6),
        slack_pressure=_number(const_doc, "slack_pressure", "constants", 1.0),
        reynolds=_number(const_doc, "reynolds", "constants", 1.0e7),
        profile_convention=const_doc.get("profile_convention", "literal"),
    )
    if constants.speed_of_sound <= 0 or constants.pressure_base <= 0 or constants.slack_pressure <= 0:
        raise InvalidValue("constants: speed_of_sound, pressure_base and slack_pressure must be positive")
    if constants.profile_convention not in PROFILE_CONVENTIONS:
        raise InvalidValue(f"constants: profile_convention must be one of {PROFILE_CONVENTIONS}")

    scal_doc = doc.get("scaling", {})
    _check_keys(scal_doc, _SCALING_KEYS, "scaling")
    s_scale = _number(scal_doc, "supply", "scaling", 1.0)
    d_scale = _number(scal_doc, "demand", "scaling", 1.0)
    if s_scale < 0 or d_scale < 0:
        raise InvalidValue("scaling: multipliers must be non-negative")

    seen = set()

    def claim(ident, where):
        if ident in seen:
            raise DuplicateId(f"{where}: duplicate id {ident!r}")
        seen.add(ident)

    nodes = []
    for i, nd in enumerate(doc.get("nodes", [])):
        where = f"nodes[{i}]"
        _check_keys(nd, _NODE_KEYS, where)
        nid = _string(nd, "id", where)
        claim(nid, where)
        kind = nd.get("kind", JUNCTION)
        if kind not in (SLACK, JUNCTION):
            raise InvalidValue(f"{where}: kind must be 'slack' or 'junction'")
        p_min = _number(nd, "p_min", where, 0.7)
        p_max = _number(nd, "p_max", where, 1.1)
        if not 0 < p_min < p_max:
            raise BoundViolation(f"{where}: need 0 < p_min < p_max")
        nodes.append(Node(nid, kind, p_min, p_max, True))
    node_ids = {n.id for n in nodes}

    slack = [n for n in nodes if n.kind == SLACK]
    if not slack:
        raise NoSlackNode()
    if len(slack) > 1:
        raise MultipleSlackNodes(f"exactly one slack node allowed, got {[n.id for n in slack]}")
    if not slack[0].p_min <= constants.slack_pressure <= slack[0].p_max:
        raise BoundViolation("slack pressure lies outside the slack node's bounds")

    def endpoint(obj, key, where):
        nid = _string(obj, key, where)
        if nid not in node_ids:
            raise UnknownNode(nid)
        return nid

    pipes = []
    for i, pd in enumerate(doc.get("pipes", [])):
        where = f"pipes[{i}]"
        _check_keys(pd, _PIPE_KEYS, where)
        pid = _string(pd, "id", where)
        claim(pid, where)
        a, b = endpoint(pd, "from", where), endpoint(pd, "to", where)
        if a == b:
            raise InvalidValue(f"{where}: pipe connects a node to itself")
        L = _number(pd, "length", where)
        D = _number(pd, "diameter", where)
        if L <= 0 or D <= 0:
            raise BoundViolation(f"{where}: length and diameter must be positive")
        rough = None
        if "friction" in pd:
            fr = _number(pd, "friction", where)
        elif "roughness" in pd:
            rough = _number(pd, "roughness", where)
            fr = friction_from_roughness(rough, D, constants.reynolds)
        else:
            raise InvalidValue(f"{where}: need 'friction' or 'roughness'")
        if "friction" in pd and "roughness" in pd:
            rough = _number(pd, "roughness", where)
        if fr <= 0:
            raise BoundViolation(f"{where}: friction must be positive")
        pipes.append(Pipe(pid, a, b, L, D, fr, rough))

    comps = []
    for i, cd in enumerate(doc.get("compressors", [])):
        where = f"compressors[{i}]"
        _check_keys(cd, _COMP_KEYS, where)
        cid = _string(cd, "id", where)
        claim(cid, where)
        a, b = endpoint(cd, "from", where), endpoint(cd, "to", where)
        if a == b:
            raise InvalidValue(f"{where}: compressor connects a node to itself")
        c = Compressor(
            cid,
            a,
            b,
            K=_number(cd, "K", where, 0.1),
            gamma=_number(cd, "gamma", where, 1.2),
            kappa_min=_number(cd, "kappa_min", where, 1.0),
            kappa_max=_number(cd, "kappa_max", where, 1.2),
        )
        if not 1.0 <= c.kappa_min <= c.kappa_max:
            raise BoundViolation(f"{where}: need 1 <= kappa_min <= kappa_max")
        if c.K < 0 or c.gamma <= 0:
            raise BoundViolation(f"{where}: need K >= 0 and gamma > 0")
        comps.append(c)

    profiles = []
    profiled = set()
    for i, pr in enumerate(doc.get("profiles", [])):
        where = f"profiles[{i}]"
        _check_keys(pr, _PROFILE_KEYS, where)
        nid = endpoint(pr, "node", where)
        if nid == slack[0].id:
            raise InvalidValue(f"{where}: the slack node cannot carry a boundary profile")
        if nid in profiled:
            raise DuplicateId(f"{where}: node {nid!r} already has a profile")
        profiled.add(nid)
        role = pr.get("role")
        if role not in (SUPPLY, DEMAND):
            raise InvalidValue(f"{where}: role must be 'supply' or 'demand'")
        shape = pr.get("shape", "constant")
        if shape not in PROFILE_SHAPES:
            raise InvalidValue(f"{where}: shape must be one of {PROFILE_SHAPES}")
        base = _number(pr, "base", where, 0.0 if shape == "tabulated" else None)
        samples = ()
        if shape == "tabulated":
            raw = pr.get("samples")
            if not isinstance(raw, list) or len(raw) < 2:
                raise InvalidValue(f"{where}: tabulated profile needs >= 2 samples")
            try:
                samples = tuple((float(t), float(v)) for t, v in raw)
            except (TypeError, ValueError):
                raise InvalidValue(f"{where}: samples must be [time, value] pairs") from None
            if any(b[0] <= a[0] for a, b in zip(samples, samples[1:])):
                raise InvalidValue(f"{where}: sample times must be strictly increasing")
        profiles.append(
            BoundaryProfile(
                nid,
                role,
                base,
                shape,
                _number(pr, "amplitude", where, 0.2),
                samples,
                s_scale if role == SUPPLY else d_scale,
            )
        )

    net = GasNetwork(
        tuple(nodes), tuple(pipes), tuple(comps), tuple(profiles), constants, s_scale, d_scale
    )
    _check_connected(net)
    return net


def _check_connected(net: GasNetwork):
    adj = {n.id: set() for n in net.nodes}
    for e in (*net.pipes, *net.compressors):
        adj[e.from_node].add(e.to_node)
        adj[e.to_node].add(e.from_node)
    start = net.nodes[0].id
    seen, stack = {start}, [start]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    if len(seen) != len(adj):
        missing = sorted(set(adj) - seen)
        raise DisconnectedNetwork(f"nodes not connected to {start!r}: {missing}")


def network_to_dict(net: GasNetwork) -> dict:
    c = net.constants
    pipes = []
    for p in net.pipes:
        d = {"id": p.id, "from": p.from_node, "to": p.to_node, "length": p.length,
             "diameter": p.diameter, "friction": p.friction}
        if p.roughness is not None:
            d["roughness"] = p.roughness
        pipes.append(d)
    profiles = []
    for p in net.profiles:
        d = {"node": p.node, "role": p.role, "base": p.base, "shape": p.shape, "amplitude": p.amplitude}
        if p.samples:
            d["samples"] = [list(s) for s in p.samples]
        profiles.append(d)
    return {
        "nodes": [{"id": n.id, "kind": n.kind, "p_min": n.p_min, "p_max": n.p_max} for n in net.nodes],
        "pipes": pipes,
        "compressors": [
            {"id": k.id, "from": k.from_node, "to": k.to_node, "K": k.K, "gamma": k.gamma,
             "kappa_min": k.kappa_min, "kappa_max": k.kappa_max}
            for k in net.compressors
        ],
        "profiles": profiles,
        "constants": {
            "speed_of_sound": c.speed_of_sound,
            "pressure_base": c.pressure_base,
            "slack_pressure": c.slack_pressure,
            "reynolds": c.reynolds,
            "profile_convention": c.profile_convention,
        },
        "scaling": {"supply": net.supply_scaling, "demand": net.demand_scaling},
    }


def serialize_network(net: GasNetwork) -> str:
    return json.dumps(network_to_dict(net), indent=2)


def load_network(path) -> GasNetwork:
    with open(path, encoding="utf-8") as fh:
        return parse_network(fh.read())
