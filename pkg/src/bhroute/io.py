"""File formats: policy JSON, CSV exports and the run manifest.

Every float written to CSV uses 17 significant digits so a reader recovers
the exact double.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as dt
import json
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

from . import __version__
from .errors import SchemaError
from .model import Topology, apply_splits

FLOAT_FMT = "{:.17g}"


def fmt(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return FLOAT_FMT.format(float(value))
    if value is None:
        return ""
    return str(value)


def write_csv(path: Path, header: list[str], rows: Iterable[Iterable[Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for row in rows:
            out.writerow([fmt(v) for v in row])
    return path


def _plain(obj: Any) -> Any:
    """Recursively turn dataclasses, enums and numpy scalars into JSON-friendly values."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------
# policy


def policy_document(policy, solver=None) -> dict:
    """JSON form of a Policy. ``initial_splits`` uses the topology file's layout."""
    doc = {
        "initial_splits": {k: {sig: float(p) for sig, p in v.items()} for k, v in policy.splits.items()},
        "alphas": [{"from": s, "to": t, "alpha": float(a)} for (s, t), a in sorted(policy.alphas.items())],
        "service_rates": {q: float(m) for q, m in policy.service_rates.items()},
        "objective": float(policy.objective_value),
        "delta_flows": {k: float(v) for k, v in policy.delta_flows.items()},
        "alpha_error": float(policy.alpha_error),
        "engine": policy.engine,
    }
    if solver is not None:
        doc["solver"] = _plain(solver)
    return doc


def write_policy(path: Path, policy, solver=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(policy_document(policy, solver), indent=2) + "\n", encoding="utf-8")
    return path


def read_policy(path: Path | str) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"policy file is not valid JSON: {exc}", element=str(path)) from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("initial_splits"), dict):
        raise SchemaError("policy file lacks an initial_splits block", element=str(path))
    return doc


def apply_policy(topology: Topology, doc: Mapping) -> Topology:
    """Install the policy's splits on ``topology`` as its initial condition."""
    return apply_splits(topology, doc["initial_splits"])


# ---------------------------------------------------------------------------
# CSV exports


def write_trace(path: Path, trace) -> Path:
    rows = (
        (s.iteration, s.phi, s.k_star, s.w_star, s.w_prime, s.objective_before, s.objective_after, int(s.accepted))
        for s in trace.steps
    )
    header = ["iteration", "phi", "k_star", "w_star", "w_prime", "objective_before", "objective", "accepted"]
    return write_csv(path, header, rows)


def path_label(path) -> str:
    return f"{path.flow}:{path.signature}"


def write_cdf(path: Path, topology: Topology, evaluation, stride: int = 1) -> Path:
    """Long-format per-path CDF samples (path_id, t, F) on the solver grid."""

    def rows():
        for w, d in zip(topology.paths, evaluation.path_dists):
            t = d.times()[::stride]
            for ti, fi in zip(t, d.cdf(t)):
                yield path_label(w), ti, fi

    return write_csv(path, ["path_id", "t", "F"], rows())


def write_cdf_summary(path: Path, topology: Topology, evaluation) -> Path:
    """One row per path and one per flow: omega, split, delta at omega."""
    rows = []
    for w in topology.paths:
        rows.append(
            ("path", w.flow, path_label(w), topology.flows[w.flow].omega, evaluation.splits[w.id], evaluation.delta_paths[w.id])
        )
    for k, flow in topology.flows.items():
        rows.append(("flow", k, "", flow.omega, 1.0, evaluation.delta_flows[k]))
    return write_csv(path, ["kind", "flow_id", "path_id", "omega", "split", "delta"], rows)


def write_samples(path: Path, topology: Topology, result) -> Path:
    sigs = {w.id: w.signature for w in topology.paths}
    idx = np.nonzero(result.kept)[0]
    rows = (
        (int(v), result.flow_ids[result.vehicle_flow[v]], sigs[int(result.vehicle_path[v])], result.entry[v], result.exit[v])
        for v in idx
    )
    return write_csv(path, ["vehicle_id", "flow_id", "path_signature", "entry_time", "exit_time"], rows)


# ---------------------------------------------------------------------------
# manifest


def write_manifest(out_dir: Path, *, input_path: str, command: str, config: Mapping, outputs: list[Path]) -> Path:
    out_dir = Path(out_dir)
    path = out_dir / "run_manifest.json"
    doc = {
        "input": str(input_path),
        "command": command,
        "config": _plain(config),
        "version": __version__,
        "timestamp": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
        "outputs": [str(Path(p).name) for p in outputs] + [path.name],
    }
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return path
