"""Road topology as a network of queues: loading, path enumeration and rates."""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path as FilePath
from typing import Any, Mapping

import jsonschema
import numpy as np

from .errors import (
    CycleError,
    DanglingReferenceError,
    DuplicateIdError,
    InstabilityError,
    NonpositiveRateError,
    SchemaError,
    TopologyError,
    UnreachableEgressError,
)


class ServiceModel(str, Enum):
    MARKOVIAN = "M"
    DETERMINISTIC = "D"


# engine names accepted on the command line
ENGINES = {"mm1": ServiceModel.MARKOVIAN, "md1": ServiceModel.DETERMINISTIC}


@dataclass
class RoadQueue:
    id: str
    mu_max: float
    service_model: ServiceModel = ServiceModel.MARKOVIAN
    mu: float | None = None
    lam: float = 0.0

    def __post_init__(self) -> None:
        if self.mu is None:
            self.mu = self.mu_max

    @property
    def pi0(self) -> float:
        return 1.0 - self.lam / self.mu

    @property
    def slack(self) -> float:
        return self.mu - self.lam


@dataclass(frozen=True)
class Edge:
    source: str
    target: str
    alpha_fixed: float | None = None


@dataclass
class Flow:
    id: str
    ingress: str
    egress: str
    rate: float
    omega: float

    @property
    def egress_rate(self) -> float:
        # stationarity: everything that enters eventually leaves
        return self.rate


@dataclass
class Path:
    id: int
    flow: str
    queues: tuple[str, ...]
    p: float = 0.0

    @property
    def signature(self) -> str:
        return "-".join(self.queues)

    @property
    def edges(self) -> list[tuple[str, str]]:
        return list(zip(self.queues[:-1], self.queues[1:]))

    def __contains__(self, queue_id: str) -> bool:
        return queue_id in self.queues


@dataclass
class Topology:
    queues: dict[str, RoadQueue]
    edges: list[Edge]
    flows: dict[str, Flow]
    paths: list[Path] = field(default_factory=list)
    initial_splits: dict[str, dict[str, float]] = field(default_factory=dict)

    # -- lookups -----------------------------------------------------------
    @property
    def queue_ids(self) -> list[str]:
        return list(self.queues)

    @property
    def flow_ids(self) -> list[str]:
        return list(self.flows)

    def edge(self, source: str, target: str) -> Edge | None:
        for e in self.edges:
            if e.source == source and e.target == target:
                return e
        return None

    def paths_of(self, flow_id: str) -> list[Path]:
        return [w for w in self.paths if w.flow == flow_id]

    def path_by_signature(self, flow_id: str, signature: str) -> Path:
        for w in self.paths_of(flow_id):
            if w.signature == signature:
                return w
        raise TopologyError(f"flow {flow_id!r} has no path {signature!r}", element=signature)

    def movable_flows(self) -> list[str]:
        """Flows with at least two paths, i.e. with a split to decide."""
        return [k for k in self.flows if len(self.paths_of(k)) >= 2]

    # -- split vectors -----------------------------------------------------
    def splits(self) -> np.ndarray:
        return np.array([w.p for w in self.paths], dtype=float)

    def set_splits(self, splits: np.ndarray) -> None:
        for w, p in zip(self.paths, splits):
            w.p = float(p)

    def with_splits(self, splits: np.ndarray) -> "Topology":
        topo = copy.deepcopy(self)
        topo.set_splits(splits)
        return topo

    def with_service_model(self, model: ServiceModel | str | None) -> "Topology":
        """Copy of the topology with every queue switched to ``model`` (``M``/``D`` or ``mm1``/``md1``)."""
        topo = copy.deepcopy(self)
        if model is not None:
            model = ENGINES.get(model, model) if isinstance(model, str) else model
            model = ServiceModel(model)
            for q in topo.queues.values():
                q.service_model = model
        return topo

    def splits_by_flow(self, splits: np.ndarray | None = None) -> dict[str, dict[str, float]]:
        splits = self.splits() if splits is None else splits
        out: dict[str, dict[str, float]] = {k: {} for k in self.flows}
        for w, p in zip(self.paths, splits):
            out[w.flow][w.signature] = float(p)
        return out

    def incidence(self) -> np.ndarray:
        """Queue-by-path 0/1 membership matrix."""
        index = {q: i for i, q in enumerate(self.queues)}
        m = np.zeros((len(self.queues), len(self.paths)))
        for j, w in enumerate(self.paths):
            for q in w.queues:
                m[index[q], j] = 1.0
        return m

    def path_rates(self) -> np.ndarray:
        """Ingress rate of the owning flow, per path."""
        return np.array([self.flows[w.flow].rate for w in self.paths], dtype=float)

    def service_rates(self) -> np.ndarray:
        return np.array([q.mu for q in self.queues.values()], dtype=float)


# ---------------------------------------------------------------------------
# loading

_SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "required": ["queues", "edges", "flows"],
    "properties": {
        "queues": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "mu_max"],
                "properties": {
                    "id": {"type": "string", "minLength": 1},
                    "mu_max": {"type": "number"},
                    "service": {"enum": ["M", "D"]},
                },
            },
        },
        "edges": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["from", "to"],
                "properties": {
                    "from": {"type": "string"},
                    "to": {"type": "string"},
                    "alpha_fixed": {"type": "number", "minimum": 0, "maximum": 1},
                },
            },
        },
        "flows": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "ingress", "egress", "rate", "omega"],
                "properties": {
                    "id": {"type": "string", "minLength": 1},
                    "ingress": {"type": "string"},
                    "egress": {"type": "string"},
                    "rate": {"type": "number"},
                    "omega": {"type": "number"},
                },
            },
        },
        "initial_splits": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "additionalProperties": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
    },
}


def _read_document(source: Any) -> dict:
    if isinstance(source, Mapping):
        return dict(source)
    if isinstance(source, FilePath):
        text = source.read_text(encoding="utf-8")
    elif isinstance(source, str) and source.lstrip().startswith("{"):
        text = source
    elif isinstance(source, str):
        text = FilePath(source).read_text(encoding="utf-8")
    elif hasattr(source, "read"):
        text = source.read()
    else:
        raise SchemaError(f"cannot read topology from {type(source).__name__}")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON: {exc}") from exc


def load_topology(source: Any) -> Topology:
    """Parse and validate a topology document.

    ``source`` may be a filesystem path, a JSON string, an open file or an
    already-decoded mapping. Paths are not enumerated here.
    """
    doc = _read_document(source)
    try:
        jsonschema.validate(doc, _SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"schema violation: {exc.message}", element=where) from None

    queues: dict[str, RoadQueue] = {}
    for item in doc["queues"]:
        qid = item["id"]
        if qid in queues:
            raise DuplicateIdError("duplicate queue id", element=qid)
        if item["mu_max"] <= 0:
            raise NonpositiveRateError("nonpositive rate mu_max", element=qid)
        queues[qid] = RoadQueue(qid, float(item["mu_max"]), ServiceModel(item.get("service", "M")))

    edges: list[Edge] = []
    seen_edges: set[tuple[str, str]] = set()
    for item in doc["edges"]:
        src, dst = item["from"], item["to"]
        name = f"{src}->{dst}"
        for end in (src, dst):
            if end not in queues:
                raise DanglingReferenceError(f"dangling reference to queue {end!r}", element=name)
        if src == dst:
            raise CycleError("self-loop edge", element=name)
        if (src, dst) in seen_edges:
            raise DuplicateIdError("duplicate edge", element=name)
        seen_edges.add((src, dst))
        alpha = item.get("alpha_fixed")
        edges.append(Edge(src, dst, None if alpha is None else float(alpha)))

    for qid in queues:
        fixed = sum(e.alpha_fixed for e in edges if e.source == qid and e.alpha_fixed is not None)
        if fixed > 1 + 1e-12:
            raise SchemaError("fixed transition probabilities out of a queue exceed 1", element=qid)

    flows: dict[str, Flow] = {}
    for item in doc["flows"]:
        fid = item["id"]
        if fid in flows:
            raise DuplicateIdError("duplicate flow id", element=fid)
        for key in ("ingress", "egress"):
            if item[key] not in queues:
                raise DanglingReferenceError(f"dangling reference to queue {item[key]!r} ({key})", element=fid)
        if item["rate"] <= 0:
            raise NonpositiveRateError("nonpositive rate", element=fid)
        if item["omega"] <= 0:
            raise NonpositiveRateError("nonpositive target travel time omega", element=fid)
        flows[fid] = Flow(fid, item["ingress"], item["egress"], float(item["rate"]), float(item["omega"]))

    initial = {str(k): {str(s): float(p) for s, p in v.items()} for k, v in doc.get("initial_splits", {}).items()}
    for fid in initial:
        if fid not in flows:
            raise DanglingReferenceError("initial_splits names an unknown flow", element=fid)
    return Topology(queues, edges, flows, initial_splits=initial)


# ---------------------------------------------------------------------------
# paths


def _usable_successors(topology: Topology) -> dict[str, list[str]]:
    succ: dict[str, list[str]] = {q: [] for q in topology.queues}
    for e in topology.edges:
        if e.alpha_fixed == 0.0:
            continue
        succ[e.source].append(e.target)
    # a fixed alpha of one pins the next hop
    for e in topology.edges:
        if e.alpha_fixed == 1.0:
            succ[e.source] = [e.target]
    return succ


def _check_acyclic(succ: dict[str, list[str]], roots: list[str]) -> None:
    state: dict[str, int] = {}
    for root in roots:
        if state.get(root) == 2:
            continue
        stack = [(root, iter(succ[root]))]
        state[root] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                state[node] = 2
                stack.pop()
            elif state.get(nxt) == 1:
                raise CycleError("cycle on a flow-reachable part of the topology", element=nxt)
            elif nxt not in state:
                state[nxt] = 1
                stack.append((nxt, iter(succ[nxt])))


def enumerate_paths(topology: Topology) -> Topology:
    """Populate ``topology.paths`` with every simple ingress-to-egress path.

    Paths are numbered in flow order, then depth-first in edge declaration
    order; that numbering is the tie-break order used by the optimizer.
    Splits start uniform per flow unless the document overrides them.
    """
    succ = _usable_successors(topology)
    _check_acyclic(succ, [f.ingress for f in topology.flows.values()])

    paths: list[Path] = []
    for flow in topology.flows.values():
        found: list[tuple[str, ...]] = []

        def walk(node: str, trail: list[str]) -> None:
            if node == flow.egress:
                found.append(tuple(trail))
                return
            for nxt in succ[node]:
                if nxt not in trail:
                    trail.append(nxt)
                    walk(nxt, trail)
                    trail.pop()

        walk(flow.ingress, [flow.ingress])
        if not found:
            raise UnreachableEgressError("flow has no path from ingress to egress", element=flow.id)
        for queues in found:
            paths.append(Path(len(paths), flow.id, queues, 1.0 / len(found)))
    topology.paths = paths

    for fid, override in topology.initial_splits.items():
        own = {w.signature: w for w in topology.paths_of(fid)}
        for sig in override:
            if sig not in own:
                raise DanglingReferenceError(f"initial_splits names unknown path {sig!r}", element=fid)
        total = sum(override.values())
        if abs(total - 1.0) > 1e-9:
            raise TopologyError(f"initial splits sum to {total!r}, not 1", element=fid)
        for sig, w in own.items():
            w.p = override.get(sig, 0.0)
    return topology


def load_network(source: Any) -> Topology:
    """Load a topology (file path, bundled name, JSON text or mapping) and enumerate its paths."""
    if isinstance(source, str) and not source.lstrip().startswith("{") and not os.path.exists(source):
        from . import bundled_topology

        try:
            source = bundled_topology(source)
        except FileNotFoundError:
            pass
    return enumerate_paths(load_topology(source))


def apply_splits(topology: Topology, splits: Mapping[str, Mapping[str, float]]) -> Topology:
    """Overwrite per-path splits from a ``{flow: {signature: p}}`` mapping."""
    topology.initial_splits = {str(k): dict(v) for k, v in splits.items()}
    return enumerate_paths(topology)


# ---------------------------------------------------------------------------
# rates


def arrival_rate_vector(topology: Topology, splits: np.ndarray | None = None) -> np.ndarray:
    splits = topology.splits() if splits is None else np.asarray(splits, dtype=float)
    return topology.incidence() @ (splits * topology.path_rates())


def unstable_queues(topology: Topology, lam: np.ndarray) -> dict[str, tuple[float, float]]:
    mu = topology.service_rates()
    return {q: (float(lam[i]), float(mu[i])) for i, q in enumerate(topology.queues) if lam[i] >= mu[i]}


def compute_arrival_rates(
    topology: Topology,
    splits: np.ndarray | None = None,
    *,
    check_stability: bool = True,
    store: bool = True,
) -> dict[str, float]:
    """Total arrival rate per queue from flow rates and path splits.

    With ``store`` the rates are also written onto the ``RoadQueue`` objects.
    Raises InstabilityError naming every queue with lambda >= mu unless
    ``check_stability`` is off.
    """
    if not topology.paths and topology.flows:
        raise TopologyError("paths not enumerated")
    lam = arrival_rate_vector(topology, splits)
    if check_stability:
        bad = unstable_queues(topology, lam)
        if bad:
            raise InstabilityError(bad)
    rates = {q: float(lam[i]) for i, q in enumerate(topology.queues)}
    if store:
        for q, v in rates.items():
            topology.queues[q].lam = v
    return rates


def check_flow_conservation(
    topology: Topology,
    alphas: Mapping[tuple[str, str], float] | None = None,
) -> dict[str, float]:
    """Per-queue residual between the transition-probability balance and the path-based rates.

    The balance is: external arrivals plus, for every upstream queue, the
    alpha-weighted share of its throughput that does not leave the topology
    there. Throughput is taken as mu * (1 - pi0). ``alphas`` defaults to the
    reconstruction from the current splits.
    """
    from .alphas import reconstruct_alphas

    lam = compute_arrival_rates(topology, check_stability=False, store=True)
    if alphas is None:
        alphas = reconstruct_alphas(topology).alphas
    residual = {}
    for qid in topology.queues:
        external = sum(f.rate for f in topology.flows.values() if f.ingress == qid)
        inflow = external
        for (h, i), a in alphas.items():
            if i != qid:
                continue
            up = topology.queues[h]
            exits = sum(f.egress_rate for f in topology.flows.values() if f.egress == h)
            inflow += a * (up.mu * (1.0 - up.pi0) - exits)
        residual[qid] = abs(inflow - lam[qid])
    return residual
