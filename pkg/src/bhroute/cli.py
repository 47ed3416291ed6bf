"""Command-line front end: optimize, sweep, cdf, simulate, validate.

Exit codes: 0 success, 1 validation check failed, 2 parse/topology error,
3 instability, 4 infeasibility, 5 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import acceptance
from .errors import BHRouteError, InfeasibleError, SchemaError
from .io import (
    apply_policy,
    path_label,
    read_policy,
    write_cdf,
    write_cdf_summary,
    write_csv,
    write_manifest,
    write_policy,
    write_samples,
    write_trace,
)
from .model import ENGINES, Topology, apply_splits, compute_arrival_rates, load_network
from .optimizer import BHConfig, bh_optimize, sweep_split
from .simulator import SimConfig, ks_distance, simulate
from .traveltime import SolverConfig, evaluate

log = logging.getLogger("bhroute")

SINGLE_QUEUE_KS = 0.02
MULTI_QUEUE_KS = 0.05  # reported only: successive sojourns are correlated
DELTA_TOL = 0.02


# ---------------------------------------------------------------------------
# shared plumbing


def _load(args) -> Topology:
    topo = load_network(args.topology)
    if getattr(args, "policy", None):
        doc = read_policy(args.policy)
        topo = apply_policy(topo, doc)
        # reuse the settings the policy was computed with unless overridden
        if getattr(args, "engine", None) is None:
            args.engine = doc.get("engine")
        solver = doc.get("solver") or {}
        if args.step is None:
            args.step = solver.get("step")
        if args.horizon is None:
            args.horizon = solver.get("horizon")
    if getattr(args, "split", None):
        override: dict[str, dict[str, float]] = {}
        for item in args.split:
            try:
                key, value = item.split("=")
                flow, sig = key.split(":")
                override.setdefault(flow, {})[sig] = float(value)
            except ValueError:
                raise SchemaError(f"bad --split {item!r}; expected FLOW:q1-q2-q3=P") from None
        merged = topo.splits_by_flow()
        for flow, values in override.items():
            if flow not in merged:
                raise SchemaError(f"--split names unknown flow {flow!r}")
            if len(values) < len(merged[flow]):
                # unnamed paths of a two-path flow take the remainder
                rest = [s for s in merged[flow] if s not in values]
                if len(rest) == 1:
                    values[rest[0]] = 1.0 - sum(values.values())
                else:
                    values.update({s: 0.0 for s in rest})
            merged[flow] = values
        topo = apply_splits(topo, merged)
    engine = getattr(args, "engine", None)
    return topo.with_service_model(engine) if engine else topo


def _solver(args, topo: Topology) -> SolverConfig:
    return SolverConfig.for_topology(topo, step=args.step, horizon=args.horizon)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _flow_table(rows: list[tuple]) -> str:
    return "\n".join("  " + "  ".join(f"{c:>14}" if i else f"{c:<10}" for i, c in enumerate(r)) for r in rows)


# ---------------------------------------------------------------------------
# commands


def cmd_optimize(args) -> int:
    topo = _load(args)
    solver = _solver(args, topo)
    config = BHConfig(phi0=args.phi0, phi_min=args.phi_min, wprime_rule=args.wprime_rule)
    policy, trace = bh_optimize(topo, config, solver, engine=args.engine)
    out = _out_dir(args)
    files = [write_policy(out / "policy.json", policy, solver), write_trace(out / "trace.csv", trace)]
    write_manifest(
        out, input_path=args.topology, command="optimize",
        config={"solver": solver, "bh": config}, outputs=files,
    )
    if trace.notice:
        print(f"notice: {trace.notice}")
    accepted = sum(s.accepted for s in trace.steps)
    print(f"objective {policy.objective_value:.10g} after {len(trace.steps)} iterations ({accepted} accepted)")
    print(_flow_table([("flow", "delta")] + [(k, f"{v:.6g}") for k, v in policy.delta_flows.items()]))
    for k, ps in policy.splits.items():
        for sig, p in ps.items():
            print(f"  p[{k}:{sig}] = {p:.6g}")
    return 0


def cmd_sweep(args) -> int:
    base = load_network(args.topology)
    flow = args.flow
    if flow is None:
        flows = acceptance.two_path_flows(base)
        if not flows:
            raise InfeasibleError("no flow with exactly two paths to sweep")
        flow = flows[-1]
    values = np.linspace(args.range[0], args.range[1], args.steps)
    engines = list(ENGINES) if args.engine == "both" else [args.engine]
    rows = []
    for engine in engines:
        topo = base.with_service_model(engine) if engine else base
        solver = _solver(args, topo)
        for pt in sweep_split(topo, flow, args.path, values, solver):
            rows.append(
                [pt.value, engine or "file", "stable" if pt.stable else "unstable", pt.objective]
                + [pt.delta_flows[k] for k in topo.flows]
            )
            print(f"  {engine or 'file'}  p={pt.value:.4f}  objective={pt.objective:.8g}")
    out = _out_dir(args)
    header = ["split_value", "engine", "status", "objective"] + [f"delta_{k}" for k in base.flows]
    files = [write_csv(out / "sweep.csv", header, rows)]
    write_manifest(
        out, input_path=args.topology, command="sweep",
        config={"flow": flow, "path": args.path, "values": values.tolist(), "engines": engines}, outputs=files,
    )
    return 0


def cmd_cdf(args) -> int:
    topo = _load(args)
    solver = _solver(args, topo)
    ev = evaluate(topo, solver)
    out = _out_dir(args)
    files = [write_cdf(out / "cdf.csv", topo, ev), write_cdf_summary(out / "cdf_summary.csv", topo, ev)]
    write_manifest(out, input_path=args.topology, command="cdf", config={"solver": solver}, outputs=files)
    print(f"objective {ev.objective:.10g}")
    rows = [("path", "split", "delta")]
    rows += [(path_label(w), f"{ev.splits[w.id]:.6g}", f"{ev.delta_paths[w.id]:.6g}") for w in topo.paths]
    print(_flow_table(rows))
    return 0


def cmd_simulate(args) -> int:
    topo = _load(args)
    compute_arrival_rates(topo, store=False)  # unstable policies abort here
    solver = _solver(args, topo)
    ev = evaluate(topo, solver)
    config = SimConfig(n_vehicles=args.n_vehicles, seed=args.seed, warmup_fraction=args.warmup)
    res = simulate(topo, None, config)

    out = _out_dir(args)
    summary = []
    ok = True
    print(_flow_table([("flow", "analytical", "empirical", "|diff|", "check")]))
    for k in topo.flows:
        diff = abs(res.delta_flows[k] - ev.delta_flows[k])
        passed = diff <= DELTA_TOL
        ok &= passed
        summary.append(("flow", k, "", ev.delta_flows[k], res.delta_flows[k], diff, "", "pass" if passed else "fail"))
        print(_flow_table([(k, f"{ev.delta_flows[k]:.6g}", f"{res.delta_flows[k]:.6g}", f"{diff:.3g}", "pass" if passed else "FAIL")]))
    for w, d in zip(topo.paths, ev.path_dists):
        samples = res.path_samples[w.id]
        if samples.size < 1000:
            summary.append(("path", w.flow, path_label(w), ev.delta_paths[w.id], res.delta_paths[w.id], "", "", "too few samples"))
            continue
        ks = ks_distance(samples, d)
        single = len(w.queues) == 1
        limit = SINGLE_QUEUE_KS if single else MULTI_QUEUE_KS
        verdict = ("pass" if ks <= limit else "fail") if single else ("within" if ks <= limit else "above") + " reference"
        ok &= ks <= limit or not single
        summary.append(("path", w.flow, path_label(w), ev.delta_paths[w.id], res.delta_paths[w.id], "", ks, verdict))
        print(f"  path {path_label(w)}: KS={ks:.4f} ({verdict}, threshold {limit:g})")
    header = ["kind", "flow_id", "path_id", "delta_analytical", "delta_empirical", "abs_diff", "ks", "verdict"]
    files = [
        write_samples(out / "samples.csv", topo, res),
        write_csv(out / "sim_summary.csv", header, summary),
    ]
    write_manifest(
        out, input_path=args.topology, command="simulate",
        config={"solver": solver, "sim": config}, outputs=files,
    )
    print("report:", "pass" if ok else "fail")
    return 0


def cmd_validate(args) -> int:
    topo = load_network(args.topology)
    results = acceptance.run_all(topo, quick=args.quick)
    for r in results:
        print(r.line(), flush=True)
    out = _out_dir(args)
    rows = [(r.criterion, r.name, {True: "pass", False: "fail", None: "skip"}[r.passed], r.detail, r.seconds) for r in results]
    files = [write_csv(out / "validation.csv", ["criterion", "name", "status", "detail", "seconds"], rows)]
    write_manifest(out, input_path=args.topology, command="validate", config={"quick": args.quick}, outputs=files)
    return 1 if any(r.passed is False for r in results) else 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bhroute", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, engine_choices=("mm1", "md1")):
        p.add_argument("topology", help="topology file, or the name of a bundled one (fig2, single_path)")
        p.add_argument("--engine", choices=engine_choices, help="override every queue's service model")
        p.add_argument("--step", type=float, help="grid step (default: min omega / 2000)")
        p.add_argument("--horizon", type=float, help="grid horizon (default: 10 x max omega)")
        p.add_argument("--out-dir", default=".", help="directory for outputs")

    def with_policy(p):
        p.add_argument("--policy", help="policy file whose splits are used as the initial condition")
        p.add_argument("--split", action="append", metavar="FLOW:SIG=P", help="override one path split (repeatable)")

    p = sub.add_parser("optimize", help="run Bottleneck Hunting and write the policy")
    common(p)
    with_policy(p)
    p.add_argument("--phi0", type=float, default=0.25)
    p.add_argument("--phi-min", type=float, default=1e-3)
    p.add_argument("--wprime-rule", choices=["literal", "maxmin"], default="literal")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("sweep", help="objective along the split of a two-path flow")
    common(p, engine_choices=("mm1", "md1", "both"))
    p.add_argument("--flow", help="flow to sweep (default: last flow with two paths)")
    p.add_argument("--path", help="path signature whose split is swept (default: the flow's second path)")
    p.add_argument("--range", type=float, nargs=2, default=(0.05, 0.95), metavar=("LO", "HI"))
    p.add_argument("--steps", type=int, default=19)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("cdf", help="per-path travel-time CDFs and exceedances")
    common(p)
    with_policy(p)
    p.set_defaults(func=cmd_cdf)

    p = sub.add_parser("simulate", help="simulate the network and compare with the analytical engine")
    common(p)
    with_policy(p)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--n-vehicles", type=int, default=200_000, help="vehicles per flow")
    p.add_argument("--warmup", type=float, default=0.1, help="fraction of earliest-departing vehicles dropped")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("validate", help="run every acceptance check on a topology")
    p.add_argument("topology")
    p.add_argument("--quick", action="store_true", help="smaller samples, for smoke runs")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except BHRouteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {exc!r}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
