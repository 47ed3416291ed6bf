"""Acceptance checks shared by the ``validate`` command and the test suite.

Each check returns a CheckResult carrying the measured numbers, so callers
can print one pass/fail line per criterion.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .alphas import forward_splits, reconstruct_alphas
from .distributions import exponential
from .errors import InstabilityError
from .model import Topology, compute_arrival_rates, load_network
from .optimizer import BHConfig, WPrimeRule, bh_optimize, grid_search, sweep_split
from .simulator import SimConfig, ks_distance, simulate
from .traveltime import SolverConfig, evaluate, path_distribution

ENGINE_NAMES = ("mm1", "md1")


@dataclass
class CheckResult:
    criterion: str
    name: str
    passed: bool | None  # None: not applicable to this topology
    detail: str
    seconds: float = 0.0
    limit: float | None = None

    def line(self) -> str:
        status = {True: "PASS", False: "FAIL", None: "SKIP"}[self.passed]
        budget = f" (limit {self.limit:g} s)" if self.limit is not None else ""
        return f"[{status}] {self.criterion} {self.name}: {self.detail} [{self.seconds:.1f} s{budget}]"


def _timed(criterion: str, name: str, limit: float | None, fn) -> CheckResult:
    t0 = time.perf_counter()
    passed, detail = fn()
    passed = None if passed is None else bool(passed)
    elapsed = time.perf_counter() - t0
    if passed and limit is not None and elapsed > limit:
        passed, detail = False, detail + f"; exceeded time limit ({elapsed:.1f} s)"
    return CheckResult(criterion, name, passed, detail, elapsed, limit)


def two_path_flows(topology: Topology) -> list[str]:
    return [k for k in topology.flows if len(topology.paths_of(k)) == 2]


# ---------------------------------------------------------------------------
# 1. sweep shape


def check_sweep_shape(topology: Topology, values=None, engines=ENGINE_NAMES) -> CheckResult:
    values = np.linspace(0.05, 0.95, 19) if values is None else np.asarray(values)

    def run():
        flows = two_path_flows(topology)
        if not flows:
            return None, "no flow with exactly two paths"
        ok, parts = True, []
        for engine in engines:
            topo = topology.with_service_model(engine)
            for k in flows:
                pts = [p for p in sweep_split(topo, k, None, values) if p.stable]
                if not pts:
                    ok = False
                    parts.append(f"{engine}/flow {k}: every point unstable")
                    continue
                obj = np.array([p.objective for p in pts])
                i = int(np.argmin(obj))
                arg, low = pts[i].value, obj[i]
                inside = 0.25 < arg < 0.75
                ratio = min(obj[0], obj[-1]) / low if low > 0 else math.inf
                ok &= inside and ratio >= 1.2
                parts.append(f"{engine}/flow {k}: argmin={arg:.3f} endpoint/min={ratio:.3f}")
        return ok, "; ".join(parts)

    return _timed("1", "sweep minimum interior, endpoints >= 1.2 x min", 60.0, run)


# ---------------------------------------------------------------------------
# 2. BH against grid search


def check_bh_vs_grid(topology: Topology, resolution: float = 0.005, tol: float = 1e-3, engines=ENGINE_NAMES) -> CheckResult:
    def run():
        if not topology.movable_flows():
            return None, "no degrees of freedom"
        ok, parts = True, []
        for engine in engines:
            topo = topology.with_service_model(engine)
            grid = grid_search(topo, resolution)
            for rule in WPrimeRule:
                policy, _ = bh_optimize(topo, BHConfig(wprime_rule=rule))
                gap = policy.objective_value - grid.objective_value
                ok &= gap <= tol
                parts.append(f"{engine}/{rule.value}: BH-grid={gap:.3g}")
        return ok, "; ".join(parts)

    return _timed("2", f"BH objective <= grid({resolution}) min + {tol:g}", 30.0, run)


# ---------------------------------------------------------------------------
# 3. equalised paths at the optimum


def check_path_balance(topology: Topology, engine: str = "md1", tol: float = 0.05) -> CheckResult:
    def run():
        if not topology.movable_flows():
            return None, "no degrees of freedom"
        topo = topology.with_service_model(engine)
        policy, _ = bh_optimize(topo)
        ev = evaluate(topo, SolverConfig.for_topology(topo), policy.split_vector)
        ok, parts = True, []
        for k in topo.movable_flows():
            d = [ev.delta_paths[w.id] for w in topo.paths_of(k)]
            spread = max(d) - min(d)
            ok &= spread <= tol
            parts.append(f"flow {k}: spread={spread:.3g}")
        return ok, "; ".join(parts)

    return _timed("3", f"per-path delta spread <= {tol:g} at the {engine} optimum", None, run)


# ---------------------------------------------------------------------------
# 4. closed form against numerical convolution


def random_slacks(rng: np.random.Generator, low: float = 0.4, high: float = 4.0) -> list[float]:
    """2-4 distinct slacks, pairwise separated by at least 5%."""
    while True:
        r = sorted(rng.uniform(low, high, size=int(rng.integers(2, 5))))
        if all(b / a > 1.05 for a, b in zip(r, r[1:])):
            return list(rng.permutation(r))


def check_closed_vs_grid(n_paths: int = 50, seed: int = 2024, omega: float = 5.0, tol: float = 1e-3) -> CheckResult:
    def run():
        rng = np.random.default_rng(seed)
        solver = SolverConfig(step=1e-3 * omega, horizon=10 * omega)
        worst = 0.0
        for _ in range(n_paths):
            members = [exponential(r, solver.step, solver.horizon) for r in random_slacks(rng)]
            closed = path_distribution(["x"] * len(members), members, solver)
            grid = path_distribution(["x"] * len(members), members, solver, force_gridded=True)
            t = grid.times()
            worst = max(worst, float(np.max(np.abs(closed.cdf(t) - grid.cdf(t)))))
        return worst <= tol, f"{n_paths} paths, max sup-norm={worst:.3g}"

    return _timed("4", f"hypoexponential vs convolution within {tol:g}", 20.0, run)


# ---------------------------------------------------------------------------
# 5. simulation against the analytical engine


def single_queue(service: str, lam: float, mu: float, omega: float = 5.0) -> Topology:
    return load_network(
        {
            "queues": [{"id": "q", "mu_max": mu, "service": service}],
            "edges": [],
            "flows": [{"id": "1", "ingress": "q", "egress": "q", "rate": lam, "omega": omega}],
        }
    )


def check_simulation(
    topology: Topology,
    n_single: int = 100_000,
    n_network: int = 200_000,
    seed: int = 42,
    ks_tol: float = 0.02,
    delta_tol: float = 0.02,
    engines=ENGINE_NAMES,
) -> CheckResult:
    def run():
        ok, parts = True, []
        for service in ("M", "D"):
            topo = single_queue(service, 2.0, 3.0)
            ev = evaluate(topo, SolverConfig.for_topology(topo))
            res = simulate(topo, None, SimConfig(n_vehicles=n_single, seed=seed))
            ks = ks_distance(res.path_samples[0], ev.path_dists[0])
            ok &= ks <= ks_tol
            parts.append(f"single M/{service}/1 KS={ks:.4f}")
        for engine in engines:
            topo = topology.with_service_model(engine)
            policy, _ = bh_optimize(topo) if topo.movable_flows() else (None, None)
            splits = topo.splits() if policy is None else policy.split_vector
            ev = evaluate(topo, SolverConfig.for_topology(topo), splits)
            res = simulate(topo, splits, SimConfig(n_vehicles=n_network, seed=seed))
            gap = max(abs(res.delta_flows[k] - ev.delta_flows[k]) for k in topo.flows)
            ok &= gap <= delta_tol
            parts.append(f"network {engine} max|dhat-d|={gap:.4f}")
        return ok, "; ".join(parts)

    return _timed("5", "simulation vs analytical", 120.0, run)


# ---------------------------------------------------------------------------
# 6. alpha round trip


def random_feasible_splits(topology: Topology, rng: np.random.Generator) -> np.ndarray:
    s = np.zeros(len(topology.paths))
    for k in topology.flows:
        own = topology.paths_of(k)
        p = rng.dirichlet(np.ones(len(own)))
        for w, v in zip(own, p):
            s[w.id] = v
    return s


def check_alpha_roundtrip(topology: Topology, n: int = 100, seed: int = 7, tol: float = 1e-9) -> CheckResult:
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(n):
            s = random_feasible_splits(topology, rng)
            rec = reconstruct_alphas(topology, s)
            worst = max(worst, float(np.max(np.abs(forward_splits(topology, rec.alphas) - s))))
        return worst <= tol, f"{n} random splits, max |p - p_hat|={worst:.3g}"

    return _timed("6", f"alpha round trip within {tol:g}", None, run)


# ---------------------------------------------------------------------------
# 7. invariants on random small topologies


def random_topology_doc(rng: np.random.Generator, max_queues: int = 8, max_flows: int = 3, max_paths: int = 8) -> dict:
    """A random acyclic topology that is stable at uniform splits.

    Queues are chained q0 -> q1 -> ... with extra forward skip edges; each
    flow enters at one queue and leaves at a later one. Service rates are
    set so every used queue runs at 30-80% load under uniform splits, and
    the common deadline omega scales with the slowest mean path time.
    """
    while True:
        n = int(rng.integers(3, max_queues + 1))
        ids = [f"q{i}" for i in range(n)]
        edges = [(i, i + 1) for i in range(n - 1)]
        edges += [(i, j) for i in range(n) for j in range(i + 2, min(i + 4, n)) if rng.random() < 0.3]
        flows = []
        for f in range(int(rng.integers(1, max_flows + 1))):
            a = int(rng.integers(0, n - 1))
            b = int(rng.integers(a + 1, n))
            flows.append(
                {"id": str(f + 1), "ingress": ids[a], "egress": ids[b], "rate": float(rng.uniform(0.2, 1.0)),
                 "omega": float(rng.uniform(3.0, 8.0))}
            )
        doc = {
            "queues": [{"id": q, "mu_max": 1.0, "service": "D" if rng.random() < 0.25 else "M"} for q in ids],
            "edges": [{"from": ids[i], "to": ids[j]} for i, j in edges],
            "flows": flows,
        }
        topo = load_network(doc)
        if len(topo.paths) > max_paths:
            continue
        lam = compute_arrival_rates(topo, check_stability=False, store=False)
        for q in doc["queues"]:
            load = lam[q["id"]]
            q["mu_max"] = float(load / rng.uniform(0.3, 0.8)) if load > 0 else float(rng.uniform(1.0, 3.0))
        # one deadline for all flows, a little above the slowest mean path time,
        # so exceedances are informative and the default horizon is ample
        mean_sojourn = {q["id"]: 1.0 / (q["mu_max"] - lam[q["id"]]) for q in doc["queues"]}
        slowest = max(sum(mean_sojourn[q] for q in w.queues) for w in topo.paths)
        omega = float(slowest * rng.uniform(1.5, 3.0))
        for f in flows:
            f["omega"] = omega
        return doc


@dataclass
class InvariantReport:
    conservation_error: float
    splits_in_range: bool
    strictly_decreasing: bool
    cdf_monotone: bool
    little_residual: float

    def passed(self, little_tol: float = 0.03) -> bool:
        return (
            self.conservation_error <= 1e-12
            and self.splits_in_range
            and self.strictly_decreasing
            and self.cdf_monotone
            and self.little_residual <= little_tol
        )


def invariant_report(topology: Topology, n_vehicles: int = 100_000, seed: int = 0, simulate_network: bool = True) -> InvariantReport:
    solver = SolverConfig.for_topology(topology)
    start = evaluate(topology, solver)
    policy, trace = bh_optimize(topology, solver=solver)

    conservation, in_range = 0.0, True
    for step in trace.steps:
        for k in topology.flows:
            total = sum(step.splits[w.id] for w in topology.paths_of(k))
            conservation = max(conservation, abs(total - 1.0))
        in_range &= bool(np.all((step.splits >= 0) & (step.splits <= 1)))

    objs = [start.objective] + trace.accepted_objectives
    decreasing = all(b < a for a, b in zip(objs, objs[1:]))

    monotone = True
    for s in [start.splits] + [st.splits for st in trace.steps if st.accepted]:
        for d in evaluate(topology, solver, s).path_dists:
            monotone &= bool(np.all(np.diff(d.cdf(d.times())) >= 0))

    little = 0.0
    if simulate_network:
        res = simulate(topology, policy.split_vector, SimConfig(n_vehicles=n_vehicles, seed=seed))
        little = max((st.little_residual for st in res.queue_stats.values()), default=0.0)
    return InvariantReport(conservation, in_range, decreasing, monotone, little)


def check_invariants(topology: Topology | None = None, n_random: int = 3, seed: int = 11, n_vehicles: int = 100_000) -> CheckResult:
    def run():
        rng = np.random.default_rng(seed)
        cases = [load_network(random_topology_doc(rng)) for _ in range(n_random)]
        if topology is not None:
            cases.insert(0, topology)
        ok, worst_cons, worst_little = True, 0.0, 0.0
        for i, topo in enumerate(cases):
            try:
                rep = invariant_report(topo, n_vehicles=n_vehicles, seed=seed + i)
            except InstabilityError as exc:
                return False, f"case {i}: {exc}"
            ok &= rep.passed()
            worst_cons = max(worst_cons, rep.conservation_error)
            worst_little = max(worst_little, rep.little_residual)
        return ok, f"{len(cases)} topologies, conservation={worst_cons:.2g}, Little residual={worst_little:.4f}"

    return _timed("7", "invariants (conservation, monotone objective and CDFs, Little's law)", None, run)


def run_all(topology: Topology, quick: bool = False) -> list[CheckResult]:
    """Every criterion on ``topology``; ``quick`` shrinks sample sizes for smoke runs.

    The single-queue simulations keep their full size even in quick mode:
    they are cheap, and the KS tolerance is only meaningful at that size.
    """
    scale = 10 if quick else 1
    return [
        check_sweep_shape(topology),
        check_bh_vs_grid(topology, resolution=0.005 if not quick else 0.05),
        check_path_balance(topology),
        check_closed_vs_grid(n_paths=50 // scale),
        check_simulation(topology, n_single=100_000, n_network=200_000 // scale),
        check_alpha_roundtrip(topology, n=100 // scale),
        check_invariants(topology, n_random=3 if not quick else 1, n_vehicles=100_000 // scale),
    ]
