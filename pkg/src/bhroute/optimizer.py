"""Bottleneck Hunting over path splits, plus a brute-force grid search baseline.

BH repeatedly takes the flow with the worst exceedance probability and
shifts a fraction phi of its traffic from its worst path to its least loaded
one, keeping the move only if the min-max objective strictly improves and
halving phi otherwise. Service rates stay at their maxima throughout.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .alphas import reconstruct_alphas
from .errors import InfeasibleError, InstabilityError
from .model import Topology
from .traveltime import Evaluation, SolverConfig, evaluate

log = logging.getLogger(__name__)


class WPrimeRule(str, Enum):
    LITERAL = "literal"  # argmin over paths of the largest slack on the path
    MAXMIN = "maxmin"  # argmax over paths of the smallest slack on the path


@dataclass(frozen=True)
class BHConfig:
    phi0: float = 0.25
    phi_min: float = 1e-3
    wprime_rule: WPrimeRule = WPrimeRule.LITERAL
    max_iterations: int = 10_000
    improve_tol: float = 1e-12

    def __post_init__(self) -> None:
        if not 0 < self.phi_min < self.phi0 < 1:
            raise ValueError("need 0 < phi_min < phi0 < 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        object.__setattr__(self, "wprime_rule", WPrimeRule(self.wprime_rule))


@dataclass
class Policy:
    splits: dict[str, dict[str, float]]
    service_rates: dict[str, float]
    alphas: dict[tuple[str, str], float]
    objective_value: float
    delta_flows: dict[str, float] = field(default_factory=dict)
    alpha_error: float = 0.0
    split_vector: np.ndarray | None = None
    engine: str | None = None


@dataclass
class BHStep:
    iteration: int
    phi: float
    k_star: str
    w_star: int
    w_prime: int | None
    objective_before: float
    objective_after: float
    accepted: bool
    splits: np.ndarray


@dataclass
class BHTrace:
    steps: list[BHStep] = field(default_factory=list)
    policy: Policy | None = None
    notice: str | None = None

    @property
    def accepted_objectives(self) -> list[float]:
        return [s.objective_after for s in self.steps if s.accepted]


def make_policy(topology: Topology, ev: Evaluation, engine: str | None = None) -> Policy:
    rec = reconstruct_alphas(topology, ev.splits)
    return Policy(
        splits=topology.splits_by_flow(ev.splits),
        service_rates={q.id: float(q.mu) for q in topology.queues.values()},
        alphas=rec.alphas,
        objective_value=ev.objective,
        delta_flows=dict(ev.delta_flows),
        alpha_error=rec.max_error,
        split_vector=ev.splits.copy(),
        engine=engine,
    )


# ---------------------------------------------------------------------------
# building blocks


def critical_queues(topology: Topology, phi: float, lam: np.ndarray) -> set[str]:
    """Queues on two distinct paths w1, w2 whose slack is within phi * Lambda(w2) of the tightest other queue of w1."""
    slack = dict(zip(topology.queues, topology.service_rates() - lam))
    crit: set[str] = set()
    for qid in topology.queues:
        on = [w for w in topology.paths if qid in w]
        if len(on) < 2:
            continue
        for w1 in on:
            others = [slack[q] for q in w1.queues if q != qid]
            if not others:
                continue
            load = max(topology.flows[w2.flow].rate for w2 in on if w2.id != w1.id)
            if slack[qid] - min(others) <= phi * load:
                crit.add(qid)
                break
    return crit


def _argmax(items, key):
    best, best_val = None, -math.inf
    for it in items:
        v = key(it)
        if v > best_val:
            best, best_val = it, v
    return best


def _choose_w_prime(candidates, slack: dict[str, float], rule: WPrimeRule):
    if rule is WPrimeRule.LITERAL:
        return _argmax(candidates, lambda w: -max(slack[q] for q in w.queues))
    return _argmax(candidates, lambda w: min(slack[q] for q in w.queues))


def _attempt(
    topology: Topology,
    config: SolverConfig,
    current: Evaluation,
    w_star: int,
    w_prime: int,
    phi: float,
    tol: float = 1e-12,
) -> tuple[bool, Evaluation | None]:
    splits = current.splits
    moved = min(phi, splits[w_star])
    if moved <= 0 or w_star == w_prime:
        return False, None
    cand = splits.copy()
    cand[w_star] = 0.0 if moved == splits[w_star] else splits[w_star] - moved
    cand[w_prime] = splits[w_prime] + moved
    try:
        ev = evaluate(topology, config, cand)
    except InstabilityError:
        return False, None
    return ev.objective < current.objective - tol, ev


def does_improve(
    topology: Topology,
    k_star: str,
    w_star: int,
    w_prime: int,
    phi: float,
    config: SolverConfig,
    splits: np.ndarray | None = None,
) -> bool:
    """Whether moving phi of flow k_star from path w_star to w_prime strictly lowers the objective.

    The move is clamped to the split currently on w_star. Moves that make any
    queue unstable never improve. Nothing is modified.
    """
    owner = {topology.paths[w_star].flow, topology.paths[w_prime].flow}
    if owner != {k_star}:
        raise ValueError("both paths must belong to k_star")
    current = evaluate(topology, config, splits)
    ok, _ = _attempt(topology, config, current, w_star, w_prime, phi)
    return ok


# ---------------------------------------------------------------------------
# Bottleneck Hunting


def bh_optimize(
    topology: Topology,
    config: BHConfig | None = None,
    solver: SolverConfig | None = None,
    engine: str | None = None,
) -> tuple[Policy, BHTrace]:
    config = config or BHConfig()
    solver = solver or SolverConfig.for_topology(topology)
    splits = topology.splits()
    current = evaluate(topology, solver, splits)  # raises on unstable start
    trace = BHTrace()

    movable = topology.movable_flows()
    if not movable:
        trace.notice = "no degrees of freedom: every flow has a single path"
        log.info(trace.notice)
        trace.policy = make_policy(topology, current, engine)
        return trace.policy, trace

    by_flow = {k: topology.paths_of(k) for k in topology.flows}
    phi = config.phi0
    for it in range(1, config.max_iterations + 1):
        slack = dict(zip(topology.queues, topology.service_rates() - current.lam))
        cq = critical_queues(topology, phi, current.lam)
        cp = {w.id for w in topology.paths if any(q in cq for q in w.queues)}
        fa = [k for k in movable if any(w.id not in cp for w in by_flow[k])]
        if not fa:
            fa = movable
        k_star = _argmax(fa, lambda k: current.delta_flows[k])
        loaded = [w for w in by_flow[k_star] if current.splits[w.id] > 0]
        w_star = _argmax(loaded, lambda w: current.delta_paths[w.id])
        others = [w for w in by_flow[k_star] if w.id != w_star.id]
        w_prime = _choose_w_prime(others, slack, config.wprime_rule)

        ok, cand = _attempt(topology, solver, current, w_star.id, w_prime.id, phi, config.improve_tol)
        before = current.objective
        if ok:
            current = cand
        trace.steps.append(
            BHStep(it, phi, k_star, w_star.id, w_prime.id, before, current.objective, ok, current.splits.copy())
        )
        if not ok:
            phi /= 2
            if phi < config.phi_min:
                break
    else:
        log.warning("BH stopped at max_iterations=%d", config.max_iterations)

    trace.policy = make_policy(topology, current, engine)
    return trace.policy, trace


# ---------------------------------------------------------------------------
# grid search


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def grid_points(topology: Topology, resolution: float, max_dof: int = 3):
    """Every split vector on a uniform simplex grid, flows with one path held at 1."""
    movable = topology.movable_flows()
    dof = sum(len(topology.paths_of(k)) - 1 for k in movable)
    if dof > max_dof:
        raise InfeasibleError(f"grid search over {dof} split degrees of freedom exceeds the limit of {max_dof}")
    n = int(round(1.0 / resolution))
    if n < 1 or abs(n * resolution - 1.0) > 1e-9:
        raise ValueError("resolution must divide 1")
    base = topology.splits()
    for k in topology.flows:
        if k not in movable:
            for w in topology.paths_of(k):
                base[w.id] = 1.0
    per_flow = [[np.array(c) / n for c in _compositions(n, len(topology.paths_of(k)))] for k in movable]
    for combo in itertools.product(*per_flow):
        s = base.copy()
        for k, ps in zip(movable, combo):
            for w, p in zip(topology.paths_of(k), ps):
                s[w.id] = p
        yield s


def grid_search(
    topology: Topology,
    resolution: float,
    solver: SolverConfig | None = None,
    engine: str | None = None,
) -> Policy:
    """Exhaustive minimisation of the objective on a simplex grid (at most 3 degrees of freedom)."""
    solver = solver or SolverConfig.for_topology(topology)
    best: Evaluation | None = None
    for s in grid_points(topology, resolution):
        try:
            ev = evaluate(topology, solver, s)
        except InstabilityError:
            continue
        if best is None or ev.objective < best.objective:
            best = ev
    if best is None:
        raise InstabilityError([], "every grid point is unstable")
    return make_policy(topology, best, engine)


# ---------------------------------------------------------------------------
# one-dimensional sweep


@dataclass
class SweepPoint:
    value: float
    stable: bool
    objective: float
    delta_flows: dict[str, float]


def sweep_split(
    topology: Topology,
    flow_id: str,
    signature: str | None,
    values,
    solver: SolverConfig | None = None,
) -> list[SweepPoint]:
    """Objective as a function of the split on one path of a two-path flow.

    The other path of the flow takes the remainder; every other flow keeps
    its current splits. Unstable points are reported with NaN values.
    """
    own = topology.paths_of(flow_id)
    if len(own) != 2:
        raise InfeasibleError(f"flow {flow_id!r} has {len(own)} paths; a sweep needs exactly 2")
    target = own[1] if signature is None else topology.path_by_signature(flow_id, signature)
    other = own[0] if target is own[1] else own[1]
    solver = solver or SolverConfig.for_topology(topology)
    out = []
    for v in values:
        s = topology.splits()
        s[target.id], s[other.id] = float(v), 1.0 - float(v)
        try:
            ev = evaluate(topology, solver, s)
        except InstabilityError:
            out.append(SweepPoint(float(v), False, math.nan, {k: math.nan for k in topology.flows}))
            continue
        out.append(SweepPoint(float(v), True, ev.objective, dict(ev.delta_flows)))
    return out
