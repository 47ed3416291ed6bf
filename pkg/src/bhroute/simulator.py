"""Discrete-event simulation of the queue network under a split policy.

Vehicles of each flow enter as a Poisson process (optionally in batches),
draw their whole path at entry, and traverse FIFO single-server queues.
The empirical travel times are the ground truth the analytical engine is
checked against; in particular they carry whatever correlation successive
sojourn times have, which the analytical model ignores.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .distributions import TravelTimeDistribution
from .errors import InstabilityError
from .model import ServiceModel, Topology


@dataclass(frozen=True)
class SimConfig:
    n_vehicles: int = 100_000
    seed: int = 0
    warmup_fraction: float = 0.1
    batch: str = "constant"  # or "geometric"
    batch_mean: float = 1.0
    max_queue_length: int = 100_000

    def __post_init__(self) -> None:
        if self.n_vehicles < 1:
            raise ValueError("n_vehicles must be at least 1")
        if not 0 <= self.warmup_fraction <= 0.5:
            raise ValueError("warmup_fraction must lie in [0, 0.5]")
        if self.batch not in ("constant", "geometric"):
            raise ValueError("batch must be 'constant' or 'geometric'")
        if self.batch_mean < 1 or (self.batch == "constant" and self.batch_mean != int(self.batch_mean)):
            raise ValueError("batch_mean must be >= 1 (and integral for constant batches)")


@dataclass
class QueueStats:
    arrivals: int
    arrival_rate: float
    mean_sojourn: float
    mean_occupancy: float
    utilization: float

    @property
    def little_residual(self) -> float:
        """Relative gap between mean occupancy and arrival rate x mean sojourn."""
        if self.mean_occupancy == 0:
            return 0.0
        return abs(self.mean_occupancy - self.arrival_rate * self.mean_sojourn) / self.mean_occupancy


@dataclass
class SimResult:
    flow_ids: list[str]
    vehicle_flow: np.ndarray
    vehicle_path: np.ndarray
    entry: np.ndarray
    exit: np.ndarray
    kept: np.ndarray
    path_samples: dict[int, np.ndarray]
    flow_samples: dict[str, np.ndarray]
    delta_paths: dict[int, float]
    delta_flows: dict[str, float]
    queue_stats: dict[str, QueueStats] = field(default_factory=dict)

    @property
    def travel_times(self) -> np.ndarray:
        return self.exit - self.entry


def _entries(rate: float, n: int, config: SimConfig, rng: np.random.Generator) -> np.ndarray:
    if config.batch == "constant":
        b = int(config.batch_mean)
        sizes = np.full(math.ceil(n / b), b)
    else:
        sizes = rng.geometric(1.0 / config.batch_mean, size=math.ceil(n / config.batch_mean) + 16)
        while sizes.sum() < n:
            sizes = np.concatenate([sizes, rng.geometric(1.0 / config.batch_mean, size=16)])
    # epochs arrive at rate / mean batch so vehicles arrive at `rate`
    epochs = np.cumsum(rng.exponential(config.batch_mean / rate, size=sizes.size))
    return np.repeat(epochs, sizes)[:n]


def simulate(topology: Topology, splits: np.ndarray | None = None, config: SimConfig | None = None) -> SimResult:
    """Run the network for ``n_vehicles`` per flow and collect travel times."""
    config = config or SimConfig()
    splits = topology.splits() if splits is None else np.asarray(splits, dtype=float)
    rng = np.random.default_rng(config.seed)
    flow_ids = list(topology.flows)
    qindex = {q: i for i, q in enumerate(topology.queues)}
    mu = topology.service_rates()
    deterministic = [q.service_model is ServiceModel.DETERMINISTIC for q in topology.queues.values()]
    path_queues = [[qindex[q] for q in w.queues] for w in topology.paths]

    entry_parts, flow_parts, path_parts = [], [], []
    for fi, k in enumerate(flow_ids):
        own = topology.paths_of(k)
        p = np.array([splits[w.id] for w in own])
        n = config.n_vehicles
        entry_parts.append(_entries(topology.flows[k].rate, n, config, rng))
        flow_parts.append(np.full(n, fi))
        path_parts.append(np.array([own[i].id for i in rng.choice(len(own), size=n, p=p / p.sum())]))
    if not flow_ids:
        raise ValueError("topology has no flows")
    entry = np.concatenate(entry_parts)
    vflow = np.concatenate(flow_parts)
    vpath = np.concatenate(path_parts)
    order = np.lexsort((np.arange(entry.size), vflow, entry))
    entry, vflow, vpath = entry[order], vflow[order], vpath[order]
    n_total = entry.size

    hops = np.array([len(path_queues[w]) for w in vpath])
    offset = np.concatenate(([0], np.cumsum(hops)[:-1]))
    visit_queue = np.concatenate([path_queues[w] for w in vpath])
    raw = rng.standard_exponential(visit_queue.size)
    det = np.array(deterministic)[visit_queue]
    service = np.where(det, 1.0 / mu[visit_queue], raw / mu[visit_queue])

    arrive_at = np.zeros(visit_queue.size)
    depart_at = np.zeros(visit_queue.size)
    exit_at = np.zeros(n_total)

    # python lists for the hot loop
    entry_l = entry.tolist()
    hops_l = hops.tolist()
    offset_l = offset.tolist()
    vq_l = visit_queue.tolist()
    svc_l = service.tolist()
    arr_l = arrive_at.tolist()
    dep_l = depart_at.tolist()
    ext_l = exit_at.tolist()
    n_queues = len(qindex)
    waiting = [deque() for _ in range(n_queues)]
    in_service = [-1] * n_queues
    cap = config.max_queue_length
    names = list(topology.queues)

    events: list[tuple[float, int, int]] = []  # (time, insertion seq, queue)
    seq = 0

    def arrive(vehicle: int, visit: int, t: float) -> None:
        nonlocal seq
        arr_l[visit] = t
        q = vq_l[visit]
        if in_service[q] < 0:
            in_service[q] = vehicle
            service_visit[q] = visit
            seq += 1
            heapq.heappush(events, (t + svc_l[visit], seq, q))
        else:
            waiting[q].append((vehicle, visit))
            if len(waiting[q]) > cap:
                raise InstabilityError([names[q]], f"queue {names[q]} exceeded {cap} waiting vehicles at t={t:.6g}")

    service_visit = [-1] * n_queues
    nxt = 0
    inf = math.inf
    while nxt < n_total or events:
        t_ext = entry_l[nxt] if nxt < n_total else inf
        # external arrivals were scheduled first, so they win exact ties
        if events and events[0][0] < t_ext:
            t, _, q = heapq.heappop(events)
            v, visit = in_service[q], service_visit[q]
            dep_l[visit] = t
            if waiting[q]:
                nv, nvisit = waiting[q].popleft()
                in_service[q] = nv
                service_visit[q] = nvisit
                seq += 1
                heapq.heappush(events, (t + svc_l[nvisit], seq, q))
            else:
                in_service[q] = -1
            h = visit - offset_l[v] + 1
            if h < hops_l[v]:
                arrive(v, visit + 1, t)
            else:
                ext_l[v] = t
        else:
            arrive(nxt, offset_l[nxt], t_ext)
            nxt += 1

    arrive_at = np.array(arr_l)
    depart_at = np.array(dep_l)
    exit_at = np.array(ext_l)

    # warmup: drop each flow's earliest-departing vehicles
    kept = np.ones(n_total, dtype=bool)
    for fi in range(len(flow_ids)):
        idx = np.nonzero(vflow == fi)[0]
        idx = idx[np.argsort(exit_at[idx], kind="stable")]
        kept[idx[: int(config.warmup_fraction * idx.size)]] = False

    travel = exit_at - entry
    path_samples = {w.id: travel[kept & (vpath == w.id)] for w in topology.paths}
    flow_samples = {k: travel[kept & (vflow == fi)] for fi, k in enumerate(flow_ids)}
    delta_paths = {
        w.id: float(np.mean(path_samples[w.id] > topology.flows[w.flow].omega)) if path_samples[w.id].size else float("nan")
        for w in topology.paths
    }
    delta_flows = {k: float(np.mean(flow_samples[k] > topology.flows[k].omega)) for k in flow_ids}

    # observation window for per-queue statistics
    first_kept = int(config.warmup_fraction * n_total)
    t0, t1 = entry[min(first_kept, n_total - 1)], entry[-1]
    queue_stats = {}
    if t1 > t0:
        span = t1 - t0
        start = depart_at - service
        for qi, name in enumerate(topology.queues):
            sel = visit_queue == qi
            a, d, s = arrive_at[sel], depart_at[sel], start[sel]
            inside = (a >= t0) & (a <= t1)
            occupied = np.clip(np.minimum(d, t1) - np.maximum(a, t0), 0.0, None).sum()
            busy = np.clip(np.minimum(d, t1) - np.maximum(s, t0), 0.0, None).sum()
            count = int(inside.sum())
            queue_stats[name] = QueueStats(
                arrivals=count,
                arrival_rate=count / span,
                mean_sojourn=float(np.mean(d[inside] - a[inside])) if count else 0.0,
                mean_occupancy=occupied / span,
                utilization=busy / span,
            )

    return SimResult(
        flow_ids, vflow, vpath, entry, exit_at, kept, path_samples, flow_samples, delta_paths, delta_flows, queue_stats
    )


def ks_distance(samples: np.ndarray, dist: TravelTimeDistribution) -> float:
    """Two-sided Kolmogorov-Smirnov statistic of samples against an analytical CDF.

    Both one-sided limits are compared at every distinct sample value, so
    atoms in the analytical CDF (deterministic service has one) are handled;
    for a continuous CDF this equals the usual statistic. Samples within a
    relative 1e-9 of each other are treated as ties, absorbing the rounding
    left by computing travel time as exit minus entry.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.size < 1000:
        raise ValueError(f"need at least 1000 samples for a KS distance, got {samples.size}")
    v = np.sort(samples)
    n = v.size
    # values closer than the tolerance count as one tied value
    gap = np.diff(v) > 1e-9 * np.maximum(1.0, np.abs(v[1:]))
    starts = np.concatenate(([0], np.nonzero(gap)[0] + 1))
    ends = np.concatenate((starts[1:] - 1, [n - 1]))
    tol = 1e-9 * np.maximum(1.0, np.abs(v))
    f_at = np.asarray(dist.cdf(v[ends] + tol[ends]))
    f_before = np.asarray(dist.cdf(v[starts] - tol[starts]))
    return float(max(np.max(np.abs((ends + 1) / n - f_at)), np.max(np.abs(starts / n - f_before))))
