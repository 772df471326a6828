"""Command-line pipeline: generate, validate, weight, measure, report.

Every command is deterministic given its flags (stochastic commands require
an explicit seed), emits canonical JSON (sorted keys, full round-trip float
precision), and embeds the sha256 hash of its resolved configuration.  The
environment variable CONFPACK_OUT_ROOT, when set, prefixes relative output
paths.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import extremal, graphs, packing, spectral, weights, wgraph
from .ambient import METRIC_L2, METRIC_LINF

OUT_ROOT_ENV = "CONFPACK_OUT_ROOT"


class UsageError(ValueError):
    pass


def _out_path(p) -> Path:
    path = Path(p)
    root = os.environ.get(OUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=False) + "\n"


def config_hash(command: str, params: dict) -> str:
    blob = canonical_json({"command": command, "params": params})
    return hashlib.sha256(blob.encode()).hexdigest()


def write_report(path, command: str, params: dict, payload: dict) -> None:
    body = dict(payload)
    body["command"] = command
    body["config_hash"] = config_hash(command, params)
    with open(_out_path(path), "w") as fh:
        fh.write(canonical_json(body))


def _params(args, skip=("func", "config")) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip and not callable(v)}


def _load_qpg(args) -> packing.QuasiPackedGraph:
    p = packing.load_packing(args.packing)
    return packing.load_graph(args.graph, p)


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    kind = args.kind
    if kind == "grid":
        if args.m is None:
            raise UsageError("gen grid requires --m")
        pk, g = packing.gen_grid(args.d, args.m, metric=args.metric)
    elif kind == "rsa":
        if args.count is None or args.seed is None:
            raise UsageError("gen rsa requires --count and --seed")
        pk, g = packing.gen_rsa(
            args.d, args.count, (args.r_min, args.r_max), seed=args.seed, metric=args.metric
        )
    elif kind == "accumulation":
        if args.levels is None:
            raise UsageError("gen accumulation requires --levels")
        pk, g = packing.gen_accumulation(args.d, args.levels)
    elif kind == "star":
        if args.leaves is None:
            raise UsageError("gen star requires --leaves")
        pk, g = packing.gen_star(args.d, args.leaves, leaf_radius=args.leaf_radius)
    else:
        raise UsageError(f"unknown generator {kind!r}")
    packing.save_packing(pk, _out_path(args.out))
    if args.graph_out:
        packing.save_graph(g, _out_path(args.graph_out))
    return 0


def cmd_graph(args) -> int:
    pk = packing.load_packing(args.packing)
    g = packing.extract_graph(pk, args.tau)
    if not args.keep_components:
        g = g.largest_component()
        if g.n_vertices != len(pk):
            if not args.packing_out:
                raise UsageError(
                    "graph is disconnected; pass --packing-out for the giant-component packing"
                )
            packing.save_packing(g.packing, _out_path(args.packing_out))
    packing.save_graph(g, _out_path(args.out))
    return 0


def cmd_validate(args) -> int:
    g = _load_qpg(args)
    rep = packing.validate(g)
    write_report(args.out, "validate", _params(args), rep.to_json_obj())
    return 0


def cmd_weight(args) -> int:
    g = _load_qpg(args)
    engine = weights.WeightEngine(g)
    if args.combined:
        w = engine.combined(args.k_max, mass_ceiling=args.mass_ceiling)
    else:
        if args.k is None:
            raise UsageError("weight requires --k (or --combined with --k-max)")
        w = engine.weight(args.k, mass_ceiling=args.mass_ceiling)
    weights.save_weight(w, _out_path(args.out), _out_path(args.meta_out) if args.meta_out else None)
    return 0


def cmd_growth(args) -> int:
    g = _load_qpg(args)
    om = weights.load_weight_values(args.weight)
    metric = wgraph.WeightedGraphMetric(g.adjacency(), om)
    ds = args.d_star if args.d_star else weights.d_star(g.packing.dimension)
    radii = [float(r) for r in args.radii.split(",")] if args.radii else None
    rep = wgraph.growth_profile(metric, ds, radii=radii, seed=args.seed)
    write_report(args.out, "growth", _params(args), rep.to_json_obj())
    return 0


def cmd_spectrum(args) -> int:
    g = _load_qpg(args)
    rep = spectral.spectrum(g.adjacency(), cap=args.cap)
    write_report(args.out, "spectrum", _params(args), rep.to_json_obj())
    return 0


def cmd_weyl_check(args) -> int:
    with open(args.spectrum) as fh:
        obj = json.load(fh)
    rep = spectral.SpectrumReport(
        eigenvalues=np.asarray(obj["eigenvalues"]), degrees=np.asarray(obj.get("degrees", []))
    )
    if len(rep.degrees) == 0:
        raise UsageError("spectrum report lacks degrees; re-run the spectrum command")
    res = spectral.weyl_check(rep, args.d)
    write_report(args.out, "weyl-check", _params(args), res)
    return 0


def cmd_bumps(args) -> int:
    g = _load_qpg(args)
    om = weights.load_weight_values(args.weight)
    metric = wgraph.WeightedGraphMetric(g.adjacency(), om)
    rep = spectral.ball_carving_bumps(metric, args.radius, args.ball_cap)
    payload = rep.summary()
    payload["rayleigh"] = [float(r) for r in rep.rayleigh]
    payload["support_sizes"] = [int(len(s)) for s in rep.supports]
    write_report(args.out, "bumps", _params(args), payload)
    return 0


def cmd_heat(args) -> int:
    g = _load_qpg(args)
    series = spectral.heat_kernel(
        g.adjacency(), args.x, args.horizon, method=args.method, walks=args.walks, seed=args.seed
    )
    with open(_out_path(args.out), "w") as fh:
        fh.write("t,p,stderr\n")
        for t, p, se in series.to_rows():
            fh.write(f"{t},{p!r},{se!r}\n")
    if args.fit_out:
        lo, hi = (int(v) for v in args.fit_window.split(","))
        fit = spectral.spectral_dim_fit(series, (lo, hi))
        write_report(args.fit_out, "heat-fit", _params(args), fit.to_json_obj())
    return 0


def cmd_vel(args) -> int:
    g = _load_qpg(args)
    adj = g.adjacency()
    sources = tuple(int(v) for v in args.source.split(","))
    if args.targets == "far":
        from scipy.sparse.csgraph import dijkstra

        hop = dijkstra(adj, directed=False, indices=list(sources), min_only=True, unweighted=True)
        targets = tuple(int(t) for t in np.flatnonzero(hop == np.max(hop)))
    else:
        targets = tuple(int(v) for v in args.targets.split(","))
    spec = extremal.PathFamilySpec(sources, targets)
    res = extremal.vel_solve(adj, spec, args.d, iterations=args.iterations)
    payload = res.to_json_obj()
    if args.omega_out:
        with open(_out_path(args.omega_out), "w") as fh:
            fh.write("vertex,omega\n")
            for i, val in enumerate(res.omega):
                fh.write(f"{i},{float(val)!r}\n")
        payload["omega_file"] = str(args.omega_out)
    write_report(args.out, "vel", _params(args), payload)
    return 0


def cmd_certify(args) -> int:
    g = _load_qpg(args)
    adj = g.adjacency()
    radii = [float(r) for r in args.radii.split(",")]
    base = np.ones(g.n_vertices)
    om = extremal.enforce_regularity(adj, base, args.cprime)
    res = extremal.parabolicity_certificate(
        adj, [(r, om) for r in radii], z=args.z, cprime=args.cprime, d=args.d
    )
    write_report(args.out, "certify", _params(args), res.to_json_obj())
    return 0


def cmd_report(args) -> int:
    root = Path(args.dir)
    entries = []
    ok = True
    for path in sorted(root.glob("*.json")):
        if path.name == Path(args.out).name:
            continue
        try:
            with open(path) as fh:
                obj = json.load(fh)
            status = "pass"
            if obj.get("tangency_violations"):
                status = "fail"
            if obj.get("converged") is False:
                status = "warn"
            entries.append(
                {
                    "file": path.name,
                    "command": obj.get("command"),
                    "config_hash": obj.get("config_hash"),
                    "status": status,
                }
            )
            ok = ok and status != "fail"
        except (json.JSONDecodeError, OSError) as exc:
            entries.append({"file": path.name, "status": "unreadable", "error": str(exc)})
            ok = False
    write_report(args.out, "report", _params(args), {"entries": entries, "all_pass": ok})
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="confpack", description=__doc__)
    ap.add_argument("--config", help="JSON file with default values for the command's flags")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a packing (and its declared graph)")
    g.add_argument("--kind", required=True, choices=["grid", "rsa", "accumulation", "star"])
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--m", type=int)
    g.add_argument("--count", type=int)
    g.add_argument("--r-min", type=float, default=0.1)
    g.add_argument("--r-max", type=float, default=1.0)
    g.add_argument("--levels", type=int)
    g.add_argument("--leaves", type=int)
    g.add_argument("--leaf-radius", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--metric", default=METRIC_L2, choices=[METRIC_L2, METRIC_LINF])
    g.add_argument("--out", required=True)
    g.add_argument("--graph-out")
    g.set_defaults(func=cmd_gen)

    g = sub.add_parser("graph", help="extract the quasi-tangency graph")
    g.add_argument("--packing", required=True)
    g.add_argument("--tau", type=float, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--packing-out", help="where to write the packing if restricted to the giant component")
    g.add_argument("--keep-components", action="store_true")
    g.set_defaults(func=cmd_graph)

    g = sub.add_parser("validate", help="check tangency and multiplicity")
    g.add_argument("--packing", required=True)
    g.add_argument("--graph", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_validate)

    g = sub.add_parser("weight", help="build the conformal weight")
    g.add_argument("--packing", required=True)
    g.add_argument("--graph", required=True)
    g.add_argument("--k", type=int)
    g.add_argument("--combined", action="store_true")
    g.add_argument("--k-max", type=int, default=10)
    g.add_argument("--mass-ceiling", type=float)
    g.add_argument("--out", required=True)
    g.add_argument("--meta-out")
    g.set_defaults(func=cmd_weight)

    g = sub.add_parser("growth", help="ball growth profile under a weight")
    g.add_argument("--packing", required=True)
    g.add_argument("--graph", required=True)
    g.add_argument("--weight", required=True)
    g.add_argument("--d-star", type=int)
    g.add_argument("--radii", help="comma-separated override of the radii grid")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_growth)

    g = sub.add_parser("spectrum", help="dense random-walk spectrum")
    g.add_argument("--packing", required=True)
    g.add_argument("--graph", required=True)
    g.add_argument("--cap", type=int, default=spectral.DENSE_SOLVE_CAP)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_spectrum)

    g = sub.add_parser("weyl-check", help="empirical eigenvalue-bound constants")
    g.add_argument("--spectrum", required=True)
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_weyl_check)

    g = sub.add_parser("bumps", help="disjointly supported test functions")
    g.add_argument("--packing", required=True)
    g.add_argument("--graph", required=True)
    g.add_argument("--weight", required=True)
    g.add_argument("--radius", type=float, required=True)
    g.add_argument("--ball-cap", type=float, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_bumps)

    g = sub.add_parser("heat", help="return probabilities and dimension fit")
    g.add_argument("--packing", required=True)
    g.add_argument("--graph", required=True)
    g.add_argument("--x", type=int, required=True)
    g.add_argument("--horizon", type=int, required=True)
    g.add_argument("--method", default="auto", choices=["auto", "exact", "mc"])
    g.add_argument("--walks", type=int, default=20000)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.add_argument("--fit-window", default="10,200")
    g.add_argument("--fit-out")
    g.set_defaults(func=cmd_heat)

    g = sub.add_parser("vel", help="vertex extremal length solve")
    g.add_argument("--packing", required=True)
    g.add_argument("--graph", required=True)
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--source", required=True, help="comma-separated source vertices")
    g.add_argument("--targets", required=True, help="comma-separated targets, or 'far'")
    g.add_argument("--iterations", type=int, default=2000)
    g.add_argument("--out", required=True)
    g.add_argument("--omega-out")
    g.set_defaults(func=cmd_vel)

    g = sub.add_parser("certify", help="annulus distance certificate around a vertex")
    g.add_argument("--packing", required=True)
    g.add_argument("--graph", required=True)
    g.add_argument("--z", type=int, required=True)
    g.add_argument("--cprime", type=float, default=2.0)
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--radii", required=True, help="comma-separated increasing radii")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_certify)

    g = sub.add_parser("report", help="aggregate all JSON reports in a directory")
    g.add_argument("--dir", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_report)
    return ap


def _apply_config(argv: list[str]) -> list[str]:
    """Inject config-file values as flags right after the subcommand.

    Explicit command-line flags stay later in argv, so they override the
    injected defaults (argparse keeps the last occurrence).
    """
    i = argv.index("--config")
    cfg_path = argv[i + 1]
    with open(cfg_path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    rest = argv[:i] + argv[i + 2 :]
    if not rest:
        raise UsageError("missing command")
    injected = []
    for key, val in sorted(cfg.items()):
        flag = "--" + str(key).replace("_", "-")
        if isinstance(val, bool):
            if val:
                injected.append(flag)
        else:
            injected.extend([flag, str(val)])
    return rest[:1] + injected + rest[1:]


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        if argv and "--config" in argv:
            argv = _apply_config(argv)
        args = ap.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (
        packing.PackingValidationError,
        weights.LevelCountError,
    ) as exc:
        print(f"hard check failed: {exc}", file=sys.stderr)
        return 1
    except (
        packing.PackingError,
        weights.WeightError,
        spectral.SpectralError,
        extremal.ExtremalError,
        wgraph.MetricError,
        FileNotFoundError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
