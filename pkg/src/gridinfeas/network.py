"""Feeder ingestion: parse, validate, and per-unit-normalize three-phase networks.

The input format is a purpose-built JSON schema (see ``docs`` section of the
README).  All quantities in the internal model are per-unit on the document's
``base_power_va`` (per phase) and ``base_voltage_v`` (line-to-neutral) bases.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

PHASES = ("a", "b", "c")

# nominal phase angles, radians
PHASE_ANGLE = {"a": 0.0, "b": -2.0 * math.pi / 3.0, "c": 2.0 * math.pi / 3.0}

DEFAULT_VMIN = 0.8
DEFAULT_VMAX = 1.2


class FeederFormatError(ValueError):
    """Raised when a feeder document violates the schema or its invariants."""

    def __init__(self, message, path=""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


@dataclass(frozen=True)
class Node:
    id: str
    phases: tuple[str, ...]
    kind: str  # "slack" | "load"
    vnom_pu: float
    p_load: dict[str, float]  # pu, per phase
    q_load: dict[str, float]  # pu, per phase
    vmin_pu: float
    vmax_pu: float

    def nominal_phasor(self, phase: str) -> complex:
        th = PHASE_ANGLE[phase]
        return self.vnom_pu * complex(math.cos(th), math.sin(th))


@dataclass(frozen=True)
class Line:
    from_id: str
    to_id: str
    phases: tuple[str, ...]
    y_series: np.ndarray  # complex, shape (len(phases), len(phases)), pu
    rating_pu: float | None  # thermal current limit, None = unconstrained

    def __post_init__(self):
        object.__setattr__(self, "y_series", np.asarray(self.y_series, dtype=complex))


@dataclass(frozen=True)
class Network:
    base_power_va: float
    base_voltage_v: float
    nodes: tuple[Node, ...]
    lines: tuple[Line, ...]
    slack_id: str
    candidates: tuple[tuple[str, str], ...]  # (node id, phase) pairs
    weights: dict[tuple[str, str], float]

    def node(self, node_id: str) -> Node:
        return self._node_map[node_id]

    @property
    def _node_map(self) -> dict[str, Node]:
        m = getattr(self, "_node_map_cache", None)
        if m is None:
            m = {n.id: n for n in self.nodes}
            object.__setattr__(self, "_node_map_cache", m)
        return m

    def node_phases(self):
        """All (node id, phase) pairs in declaration order."""
        for n in self.nodes:
            for p in n.phases:
                yield n.id, p


def _req(obj, key, path):
    if key not in obj:
        raise FeederFormatError(f"missing required field '{key}'", path)
    return obj[key]


def _finite(value, path):
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise FeederFormatError(f"expected a number, got {value!r}", path) from None
    if not math.isfinite(v):
        raise FeederFormatError(f"value must be finite, got {v}", path)
    return v


def parse_feeder(text: str) -> Network:
    """Parse a feeder JSON document into a per-unit :class:`Network`.

    Raises :class:`FeederFormatError` naming the offending field on any
    schema violation, duplicate/undeclared node, disconnectedness, missing
    slack, or bad weights.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FeederFormatError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise FeederFormatError("top-level document must be an object")

    s_base = _finite(_req(doc, "base_power_va", "$"), "$.base_power_va")
    v_base = _finite(_req(doc, "base_voltage_v", "$"), "$.base_voltage_v")
    if s_base <= 0 or v_base <= 0:
        raise FeederFormatError("bases must be positive", "$")
    i_base = s_base / v_base  # per-phase current base, amps

    nodes: list[Node] = []
    seen: set[str] = set()
    slack_id = None
    for idx, nd in enumerate(_req(doc, "nodes", "$")):
        path = f"$.nodes[{idx}]"
        nid = str(_req(nd, "id", path))
        if nid in seen:
            raise FeederFormatError(f"duplicate node id '{nid}'", path)
        seen.add(nid)
        phases = tuple(_req(nd, "phases", path))
        if not phases or any(p not in PHASES for p in phases) or len(set(phases)) != len(phases):
            raise FeederFormatError(f"phases must be a non-empty subset of {PHASES}", path)
        kind = _req(nd, "kind", path)
        if kind not in ("slack", "load"):
            raise FeederFormatError(f"kind must be 'slack' or 'load', got {kind!r}", path)
        if kind == "slack":
            if slack_id is not None:
                raise FeederFormatError("more than one slack node", path)
            slack_id = nid
        vnom = _finite(nd.get("vnom_pu", 1.0), f"{path}.vnom_pu")
        p_load, q_load = {}, {}
        for ph, ld in (nd.get("loads") or {}).items():
            if ph not in phases:
                raise FeederFormatError(f"load on undeclared phase '{ph}'", f"{path}.loads")
            p_load[ph] = _finite(ld.get("p_kw", 0.0), f"{path}.loads.{ph}.p_kw") * 1e3 / s_base
            q_load[ph] = _finite(ld.get("q_kvar", 0.0), f"{path}.loads.{ph}.q_kvar") * 1e3 / s_base
        if kind == "slack" and (any(p_load.values()) or any(q_load.values())):
            raise FeederFormatError("slack node must not carry loads", path)
        vmin = _finite(nd.get("vmin_pu", DEFAULT_VMIN), f"{path}.vmin_pu")
        vmax = _finite(nd.get("vmax_pu", DEFAULT_VMAX), f"{path}.vmax_pu")
        nodes.append(Node(nid, phases, kind, vnom, p_load, q_load, vmin, vmax))

    if slack_id is None:
        raise FeederFormatError("no slack node declared", "$.nodes")
    node_map = {n.id: n for n in nodes}

    lines: list[Line] = []
    for idx, ln in enumerate(_req(doc, "lines", "$")):
        path = f"$.lines[{idx}]"
        f, t = str(_req(ln, "from", path)), str(_req(ln, "to", path))
        for end in (f, t):
            if end not in node_map:
                raise FeederFormatError(f"line references undeclared node '{end}'", path)
        phases = tuple(_req(ln, "phases", path))
        for end in (f, t):
            missing = [p for p in phases if p not in node_map[end].phases]
            if missing:
                raise FeederFormatError(
                    f"node '{end}' does not carry phase(s) {missing}", path)
        y = _req(ln, "y_series_pu", path)
        g = np.asarray(_req(y, "re", f"{path}.y_series_pu"), dtype=float)
        b = np.asarray(_req(y, "im", f"{path}.y_series_pu"), dtype=float)
        m = len(phases)
        if g.shape != (m, m) or b.shape != (m, m):
            raise FeederFormatError(f"admittance block must be {m}x{m}", f"{path}.y_series_pu")
        if not (np.isfinite(g).all() and np.isfinite(b).all()):
            raise FeederFormatError("admittance entries must be finite", f"{path}.y_series_pu")
        rating = ln.get("rating_a")
        if rating is not None:
            rating = _finite(rating, f"{path}.rating_a") / i_base
            if rating <= 0:
                raise FeederFormatError("rating must be positive", f"{path}.rating_a")
        lines.append(Line(f, t, phases, g + 1j * b, rating))

    cand_spec = doc.get("candidates", "all")
    if cand_spec == "all":
        candidates = tuple(
            (n.id, p) for n in nodes if n.kind != "slack" for p in n.phases)
    else:
        candidates = []
        for idx, pair in enumerate(cand_spec):
            path = f"$.candidates[{idx}]"
            nid, ph = str(pair[0]), str(pair[1])
            if nid not in node_map:
                raise FeederFormatError(f"candidate references undeclared node '{nid}'", path)
            if ph not in node_map[nid].phases:
                raise FeederFormatError(f"node '{nid}' does not carry phase '{ph}'", path)
            if nid == slack_id:
                raise FeederFormatError("slack node cannot host an infeasibility source", path)
            candidates.append((nid, ph))
        candidates = tuple(candidates)
    if not candidates:
        raise FeederFormatError("candidate set is empty", "$.candidates")

    wspec = doc.get("weights")
    if wspec is None:
        w = 1.0 / len(candidates)
        weights = {c: w for c in candidates}
    else:
        weights = {}
        for key, val in wspec.items():
            nid, _, ph = key.partition(":")
            if (nid, ph) not in set(candidates):
                raise FeederFormatError(f"weight key '{key}' is not a candidate", "$.weights")
            v = _finite(val, f"$.weights.{key}")
            if v < 0:
                raise FeederFormatError(f"weight '{key}' is negative", "$.weights")
            weights[(nid, ph)] = v
        missing = set(candidates) - set(weights)
        if missing:
            raise FeederFormatError(f"weights missing for candidates {sorted(missing)}", "$.weights")
        total = sum(weights.values())
        if abs(total - 1.0) > 1e-9:
            raise FeederFormatError(f"weights sum to {total!r}, expected 1", "$.weights")

    net = Network(s_base, v_base, tuple(nodes), tuple(lines), slack_id,
                  candidates, weights)
    diags = [d for d in validate(net) if d.severity == "error"]
    if diags:
        raise FeederFormatError("; ".join(d.message for d in diags))
    return net


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    message: str


def validate(network: Network) -> list[Diagnostic]:
    """Check Network invariants; returns one diagnostic per violation."""
    out: list[Diagnostic] = []
    node_map = {n.id: n for n in network.nodes}

    for n in network.nodes:
        if not (0 < n.vmin_pu < n.vmax_pu):
            out.append(Diagnostic("error", f"node '{n.id}': voltage limits inverted "
                                           f"({n.vmin_pu}, {n.vmax_pu})"))
        if n.vnom_pu <= 0 or not math.isfinite(n.vnom_pu):
            out.append(Diagnostic("error", f"node '{n.id}': bad nominal voltage {n.vnom_pu}"))
        for d in (n.p_load, n.q_load):
            for ph, v in d.items():
                if not math.isfinite(v):
                    out.append(Diagnostic("error", f"node '{n.id}' phase {ph}: non-finite load"))

    slack_count = sum(1 for n in network.nodes if n.kind == "slack")
    if slack_count != 1:
        out.append(Diagnostic("error", f"expected exactly one slack node, found {slack_count}"))

    for i, ln in enumerate(network.lines):
        if not np.allclose(ln.y_series, ln.y_series.T, atol=1e-12):
            out.append(Diagnostic("error",
                                  f"line {i} ({ln.from_id}->{ln.to_id}): admittance block "
                                  "is not symmetric"))
        if ln.rating_pu is not None and ln.rating_pu <= 0:
            out.append(Diagnostic("error", f"line {i}: nonpositive rating"))

    # connectivity over the undirected line graph
    if network.nodes:
        adj: dict[str, set[str]] = {n.id: set() for n in network.nodes}
        for ln in network.lines:
            adj[ln.from_id].add(ln.to_id)
            adj[ln.to_id].add(ln.from_id)
        stack, seen = [network.nodes[0].id], {network.nodes[0].id}
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        if len(seen) != len(network.nodes):
            out.append(Diagnostic("error", "graph is disconnected: unreachable nodes "
                                           f"{sorted(set(adj) - seen)}"))

    for nid, ph in network.candidates:
        if nid not in node_map or ph not in node_map[nid].phases:
            out.append(Diagnostic("error", f"candidate ({nid},{ph}) not in node phase sets"))
        if nid == network.slack_id:
            out.append(Diagnostic("error", "slack node is a candidate"))

    wsum = sum(network.weights.values())
    if network.weights and abs(wsum - 1.0) > 1e-9:
        out.append(Diagnostic("error", f"weights sum to {wsum}, expected 1"))
    if any(w < 0 for w in network.weights.values()):
        out.append(Diagnostic("error", "negative weight"))

    return out


def _invertible_physical(pu: float, to_pu) -> float:
    """Physical-unit value whose parse-time conversion recovers ``pu`` exactly.

    ``to_pu`` is the exact conversion parse applies; a naive inverse can be an
    ulp off after the round trip, so nudge until ``to_pu(phys) == pu``.
    """
    if pu == 0.0:
        return 0.0
    phys = pu / to_pu(1.0)
    for _ in range(8):
        err = to_pu(phys) - pu
        if err == 0.0:
            return phys
        phys = math.nextafter(phys, -math.inf if err > 0 else math.inf)
    return phys


def serialize_network(network: Network) -> str:
    """Inverse of :func:`parse_feeder`: re-emit the feeder document.

    Round-trips bit-exactly through parse (per-unit values are reconverted
    to physical units and back by exact inverse operations).
    """
    s_base, v_base = network.base_power_va, network.base_voltage_v
    i_base = s_base / v_base
    doc = {
        "base_power_va": s_base,
        "base_voltage_v": v_base,
        "nodes": [
            {
                "id": n.id,
                "phases": list(n.phases),
                "kind": n.kind,
                "vnom_pu": n.vnom_pu,
                "loads": {
                    ph: {"p_kw": _invertible_physical(n.p_load.get(ph, 0.0),
                                                      lambda x: x * 1e3 / s_base),
                         "q_kvar": _invertible_physical(n.q_load.get(ph, 0.0),
                                                        lambda x: x * 1e3 / s_base)}
                    for ph in n.phases
                    if n.p_load.get(ph, 0.0) or n.q_load.get(ph, 0.0)
                },
                "vmin_pu": n.vmin_pu,
                "vmax_pu": n.vmax_pu,
            }
            for n in network.nodes
        ],
        "lines": [
            {
                "from": ln.from_id,
                "to": ln.to_id,
                "phases": list(ln.phases),
                "y_series_pu": {"re": ln.y_series.real.tolist(),
                                "im": ln.y_series.imag.tolist()},
                "rating_a": None if ln.rating_pu is None
                else _invertible_physical(ln.rating_pu, lambda x: x / i_base),
            }
            for ln in network.lines
        ],
        "candidates": [list(c) for c in network.candidates],
        "weights": {f"{nid}:{ph}": w for (nid, ph), w in network.weights.items()},
    }
    return json.dumps(doc, indent=2)
