"""Junction transition probabilities recovered from path splits.

A path's split is the product of the transition probabilities along its
edges. Taking logs turns that into a linear system in log(alpha), solved
here in the least-squares sense with the rank and null space reported.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import Topology

EdgeKey = tuple[str, str]


@dataclass
class AlphaReconstruction:
    alphas: dict[EdgeKey, float]
    max_error: float
    rank: int
    n_unknowns: int
    free_directions: list[dict[EdgeKey, float]] = field(default_factory=list)
    dropped_paths: list[int] = field(default_factory=list)

    @property
    def consistent(self) -> bool:
        return self.max_error <= 1e-9

    @property
    def determined(self) -> bool:
        return self.rank == self.n_unknowns


def forward_splits(topology: Topology, alphas: dict[EdgeKey, float]) -> np.ndarray:
    """Path splits implied by transition probabilities (product along each path)."""
    out = np.empty(len(topology.paths))
    for j, w in enumerate(topology.paths):
        prod = 1.0
        for e in w.edges:
            prod *= alphas.get(e, np.nan)
        out[j] = prod
    return out


def edge_flow_shares(topology: Topology, splits: np.ndarray | None = None) -> dict[EdgeKey, float]:
    """Fraction of the traffic leaving each queue along each used edge."""
    splits = topology.splits() if splits is None else np.asarray(splits, dtype=float)
    flow: dict[EdgeKey, float] = {}
    for w, p in zip(topology.paths, splits):
        for e in w.edges:
            flow[e] = flow.get(e, 0.0) + topology.flows[w.flow].rate * p
    out_total: dict[str, float] = {}
    for (h, _), f in flow.items():
        out_total[h] = out_total.get(h, 0.0) + f
    return {e: (f / out_total[e[0]] if out_total[e[0]] > 0 else 0.0) for e, f in flow.items()}


def reconstruct_alphas(topology: Topology, splits: np.ndarray | None = None) -> AlphaReconstruction:
    """Solve for alpha on every edge used by some path.

    Known values are taken out of the unknowns first: fixed edges, and edges
    that are the only used exit of their source queue (all traffic that does
    not leave the topology there must take them, so alpha is 1). A path with
    zero split contributes no equation; its first edge not shared with a
    positive path of the same flow gets alpha 0. When the system leaves
    directions free, the exact solution closest (in log space) to the
    observed edge-flow shares is returned, so that junction shares stay
    physical whenever the splits allow it.
    """
    splits = topology.splits() if splits is None else np.asarray(splits, dtype=float)
    paths = topology.paths

    used: dict[EdgeKey, None] = {}
    for w in paths:
        for e in w.edges:
            used.setdefault(e, None)
    out_edges: dict[str, list[EdgeKey]] = {}
    for e in used:
        out_edges.setdefault(e[0], []).append(e)

    known: dict[EdgeKey, float] = {}
    for e in used:
        edge_def = topology.edge(*e)
        if edge_def is not None and edge_def.alpha_fixed is not None:
            known[e] = edge_def.alpha_fixed
        elif len(out_edges[e[0]]) == 1:
            known[e] = 1.0

    positive = [j for j, p in enumerate(splits) if p > 0]
    positive_edges: dict[str, set[EdgeKey]] = {}
    all_positive_edges: set[EdgeKey] = set()
    for j in positive:
        positive_edges.setdefault(paths[j].flow, set()).update(paths[j].edges)
        all_positive_edges.update(paths[j].edges)

    dropped = [j for j, p in enumerate(splits) if p <= 0]
    for j in dropped:
        own = positive_edges.get(paths[j].flow, set())
        for e in paths[j].edges:
            if e not in own:
                if e not in known and e not in all_positive_edges:
                    known[e] = 0.0
                break

    unknowns = [e for e in used if e not in known and e in all_positive_edges]
    shares = edge_flow_shares(topology, splits)
    col = {e: i for i, e in enumerate(unknowns)}
    a = np.zeros((len(positive), len(unknowns)))
    b = np.zeros(len(positive))
    for r, j in enumerate(positive):
        rhs = np.log(splits[j])
        for e in paths[j].edges:
            if e in col:
                a[r, col[e]] += 1.0
            else:
                rhs -= np.log(known[e])  # zero-alpha edges never lie on a positive path
        b[r] = rhs

    alphas = dict(known)
    free: list[dict[EdgeKey, float]] = []
    rank = 0
    if unknowns:
        if positive:
            x, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
            _, _, vt = np.linalg.svd(a)
            null = vt[rank:]
            if null.size:
                # among equally good solutions take the one nearest the observed edge-flow shares
                target = np.log([shares[e] for e in unknowns])
                x = x + null.T @ (null @ (target - x))
            for v in null:
                free.append({e: float(v[col[e]]) for e in unknowns})
        else:
            x = np.zeros(len(unknowns))
        for e in unknowns:
            alphas[e] = float(np.exp(x[col[e]]))
    # edges reachable only through unused paths carry no traffic
    for e in used:
        alphas.setdefault(e, 0.0)

    err = float(np.max(np.abs(forward_splits(topology, alphas) - splits))) if paths else 0.0
    return AlphaReconstruction(alphas, err, int(rank), len(unknowns), free, dropped)
