"""Per-queue sojourn times, per-path travel times and the min-max objective.

Sojourn times along a path are treated as independent, so a path's travel
time is the convolution of its queues' sojourn times. All-Markovian paths
with distinct slacks get the hypoexponential closed form; anything else is
convolved numerically on a uniform grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from .distributions import (
    TravelTimeDistribution,
    convolve,
    exponential,
    hypoexponential,
    md1_sojourn,
    rates_distinct,
)
from .errors import InstabilityError, NumericalError
from .model import Flow, Path, RoadQueue, ServiceModel, Topology, arrival_rate_vector, unstable_queues


@dataclass(frozen=True)
class SolverConfig:
    step: float
    horizon: float
    tail_tol: float = 1e-4
    md1_series_terms: int = 200

    def __post_init__(self) -> None:
        if not self.step > 0:
            raise ValueError("step must be positive")
        if not self.horizon > self.step:
            raise ValueError("horizon must exceed the step")
        if not 0 < self.tail_tol <= 0.01:
            raise ValueError("tail_tol must lie in (0, 0.01]")
        if self.md1_series_terms < 1:
            raise ValueError("md1_series_terms must be positive")

    @classmethod
    def for_topology(
        cls,
        topology: Topology,
        step: float | None = None,
        horizon: float | None = None,
        tail_tol: float = 1e-4,
        md1_series_terms: int = 200,
    ) -> "SolverConfig":
        """Defaults: step = min omega / 2000, horizon = 10 * max omega."""
        omegas = [f.omega for f in topology.flows.values()] or [1.0]
        step = min(omegas) / 2000 if step is None else step
        horizon = 10 * max(omegas) if horizon is None else horizon
        if horizon < 4 * max(omegas):
            raise ValueError(f"horizon {horizon} is shorter than 4 x the largest omega ({max(omegas)})")
        return cls(step, horizon, tail_tol, md1_series_terms)


# ---------------------------------------------------------------------------
# queues and paths


@lru_cache(maxsize=512)
def _sojourn(model: ServiceModel, lam: float, mu: float, config: SolverConfig) -> TravelTimeDistribution:
    if lam >= mu:
        raise InstabilityError({"?": (lam, mu)})
    if model is ServiceModel.MARKOVIAN:
        return exponential(mu - lam, config.step, config.horizon)
    return md1_sojourn(lam, mu, config.step, config.horizon, config.tail_tol, config.md1_series_terms)


def sojourn_distribution(queue: RoadQueue, config: SolverConfig, lam: float | None = None) -> TravelTimeDistribution:
    """Sojourn (wait + service) time at one queue.

    Markovian service gives an exponential with rate mu - lambda; deterministic
    service gives a gridded CDF built from the exact M/D/1 waiting time.
    """
    lam = queue.lam if lam is None else lam
    if lam >= queue.mu:
        raise InstabilityError({queue.id: (lam, queue.mu)})
    return _sojourn(queue.service_model, float(lam), float(queue.mu), config)


def path_distribution(
    path: Path | Sequence[str],
    dists: Mapping[str, TravelTimeDistribution] | Sequence[TravelTimeDistribution],
    config: SolverConfig,
    *,
    force_gridded: bool = False,
) -> TravelTimeDistribution:
    """Travel time over a path as the sum of independent sojourn times.

    ``dists`` is either a per-queue mapping or the member distributions in
    path order. Repeated or nearly repeated slacks fall back to the grid.
    """
    if isinstance(dists, Mapping):
        queues = path.queues if isinstance(path, Path) else tuple(path)
        members = [dists[q] for q in queues]
    else:
        members = list(dists)
    if len(members) == 1 and not force_gridded:
        return members[0]
    rates = [d.exponential_rate for d in members]
    if not force_gridded and all(r is not None for r in rates) and rates_distinct(rates):
        return hypoexponential(rates, config.step, config.horizon)
    return convolve(members, config.step, config.horizon, config.tail_tol)


@lru_cache(maxsize=256)
def _path_cached(keys: tuple[tuple[ServiceModel, float, float], ...], config: SolverConfig) -> TravelTimeDistribution:
    return path_distribution(list(keys), [_sojourn(m, lam, mu, config) for m, lam, mu in keys], config)


def clear_caches() -> None:
    _sojourn.cache_clear()
    _path_cached.cache_clear()


# ---------------------------------------------------------------------------
# exceedance probabilities


def delta_path(dist: TravelTimeDistribution, t_hat: float) -> float:
    """P(travel time > t_hat)."""
    if t_hat < 0:
        raise ValueError("t_hat must be nonnegative")
    if t_hat > dist.horizon:
        raise NumericalError(f"t_hat={t_hat} lies beyond the horizon {dist.horizon}; enlarge the horizon")
    return float(1.0 - dist.cdf(t_hat))


def delta_flow(flow: Flow, paths: Sequence[Path], dists: Sequence[TravelTimeDistribution]) -> float:
    """Split-weighted exceedance of the flow's target travel time."""
    return float(sum(w.p * delta_path(d, flow.omega) for w, d in zip(paths, dists)))


@dataclass
class Evaluation:
    """Everything the objective depends on, at one split vector."""

    splits: np.ndarray
    lam: np.ndarray
    path_dists: list[TravelTimeDistribution]
    delta_paths: np.ndarray  # each path at its own flow's omega
    delta_flows: dict[str, float]
    objective: float

    def slack(self, topology: Topology) -> np.ndarray:
        return topology.service_rates() - self.lam


def evaluate(topology: Topology, config: SolverConfig, splits: np.ndarray | None = None) -> Evaluation:
    """Rates, path distributions and exceedances at ``splits`` (default: current)."""
    splits = topology.splits() if splits is None else np.asarray(splits, dtype=float)
    lam = arrival_rate_vector(topology, splits)
    bad = unstable_queues(topology, lam)
    if bad:
        raise InstabilityError(bad)
    index = {q: i for i, q in enumerate(topology.queues)}
    dists = []
    deltas = np.empty(len(topology.paths))
    for j, w in enumerate(topology.paths):
        keys = tuple(
            (topology.queues[q].service_model, float(lam[index[q]]), float(topology.queues[q].mu)) for q in w.queues
        )
        d = _path_cached(keys, config)
        dists.append(d)
        deltas[j] = delta_path(d, topology.flows[w.flow].omega)
    flows = {k: 0.0 for k in topology.flows}
    for j, w in enumerate(topology.paths):
        flows[w.flow] += splits[j] * deltas[j]
    value = max(flows.values()) if flows else 0.0
    return Evaluation(splits, lam, dists, deltas, flows, float(value))


def objective(topology: Topology, config: SolverConfig, splits: np.ndarray | None = None) -> float:
    """Largest flow exceedance probability; the quantity the optimizer minimises."""
    return evaluate(topology, config, splits).objective
