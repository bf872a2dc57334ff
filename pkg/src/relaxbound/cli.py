"""``relaxbound`` command line: bound, verify, compare.

Exit codes: 0 on success, 2 on usage or input errors, 3 when verification
runs out of budget. ``RELAXBOUND_LOG`` sets the log level.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .bab import Budget, Status, bab_verify
from .methods import METHODS, bab_solver, make_solver
from .network import FORMAT_VERSION, InputDomain, Network, load_network, network_from_dict, random_network
from .relaxation import BigMDual, IntervalOnly, LayerBounds, intermediate_bounds

log = logging.getLogger("relaxbound")

EXIT_OK, EXIT_USAGE, EXIT_TIMEOUT = 0, 2, 3


class UsageError(Exception):
    pass


# -- inputs ------------------------------------------------------------------------

def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def load_property(path):
    """Property JSON: network path (relative to the file), centre, epsilon, output spec, optional clamp."""
    path = Path(path)
    with open(path) as fh:
        data = json.load(fh)
    for key in ("center", "epsilon"):
        if key not in data:
            raise UsageError(f"property file {path} lacks {key!r}")
    spec = data.get("output_spec", {"kind": "scalar_positive"})
    if spec.get("kind") != "scalar_positive":
        raise UsageError(f"unsupported output_spec kind {spec.get('kind')!r}")
    net_path = data.get("network")
    if net_path is not None and not Path(net_path).is_absolute():
        net_path = str(path.parent / net_path)
    return {"network": net_path, "center": data["center"], "epsilon": float(data["epsilon"]),
            "index": spec.get("index"), "clamp": data.get("clamp")}


def resolve_inputs(args):
    prop = load_property(args.prop) if getattr(args, "prop", None) else None
    net_path = args.net or (prop and prop["network"])
    if not net_path:
        raise UsageError("no network given (use --net or a property file with 'network')")
    net = load_network(net_path)
    clamp = getattr(args, "clamp", None)
    if prop is not None:
        domain = InputDomain.linf_ball(prop["center"], prop["epsilon"], clamp or prop["clamp"])
    elif getattr(args, "center", None) is not None:
        if args.epsilon is None:
            raise UsageError("--center needs --epsilon")
        domain = InputDomain.linf_ball(args.center, args.epsilon, clamp)
    elif getattr(args, "lower", None) is not None and getattr(args, "upper", None) is not None:
        domain = InputDomain.box(args.lower, args.upper, clamp)
    else:
        raise UsageError("no input domain given (use --prop, --center/--epsilon or --lower/--upper)")
    if domain.dim != net.input_size:
        raise UsageError(f"domain has {domain.dim} entries, network expects {net.input_size}")
    return net, domain, prop


def _refinement(args):
    if args.intermediate == "bigm":
        return BigMDual(args.intermediate_iters)
    return IntervalOnly()


def _cache_key(net: Network, domain: InputDomain, args) -> str:
    payload = json.dumps({"net": net.to_dict(), "lower": domain.lower.tolist(), "upper": domain.upper.tolist(),
                          "intermediate": args.intermediate, "iters": args.intermediate_iters}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


def compute_bounds(net, domain, args) -> LayerBounds:
    path = getattr(args, "bounds_cache", None)
    key = _cache_key(net, domain, args) if path else None
    if path and os.path.exists(path):
        with open(path) as fh:
            data = json.load(fh)
        if data.get("key") == key and data.get("format_version") == FORMAT_VERSION:
            log.info("using cached bounds from %s", path)
            return LayerBounds.from_json(data)
        log.info("bounds cache %s is stale; recomputing", path)
    bounds = intermediate_bounds(net, domain, _refinement(args))
    if path:
        data = bounds.to_json()
        data["key"] = key
        with open(path, "w") as fh:
            json.dump(data, fh)
    return bounds


def solver_options(args) -> dict:
    opts = {"lr_start": args.lr_start, "lr_end": args.lr_end}
    for name in ("as_init_iters", "as_omega", "as_vars", "as_max_cuts", "sp_init", "sp_init_iters",
                 "sp_cap_const", "sp_primal_steps"):
        value = getattr(args, name, None)
        if value is not None:
            opts[name] = value
    return opts


# -- commands ---------------------------------------------------------------------

def _bound_output(task):
    net, bounds, index, method, iters, opts = task
    solver = make_solver(method, iters, **opts)
    target = net.select_output(index)
    t0 = time.perf_counter()
    low = solver.solve(target, bounds)
    high = solver.solve(target.negated(), bounds)
    elapsed = (time.perf_counter() - t0) * 1000.0
    return {"index": index, "lower": low.bound, "upper": -high.bound, "time_ms": elapsed,
            "iters": low.iters + high.iters}


def _map(fn, tasks, jobs):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


def cmd_bound(args) -> dict:
    net, domain, prop = resolve_inputs(args)
    bounds = compute_bounds(net, domain, args)
    if args.outputs:
        indices = args.outputs
    elif prop is not None and prop["index"] is not None:
        indices = [prop["index"]]
    else:
        indices = list(range(net.output_size))
    for i in indices:
        if not 0 <= i < net.output_size:
            raise UsageError(f"output index {i} out of range for {net.output_size} outputs")
    tasks = [(net, bounds, i, args.method, args.iters, solver_options(args)) for i in indices]
    rows = _map(_bound_output, tasks, args.jobs)
    if args.no_timings:
        for row in rows:
            row.pop("time_ms")
    report = {"format_version": FORMAT_VERSION, "command": "bound", "method": args.method,
              "intermediate": [{"layer": k, "pre_lower": bounds.pre_lower[k].tolist(),
                                "pre_upper": bounds.pre_upper[k].tolist()}
                               for k in range(1, net.n_layers)],
              "outputs": rows}
    return report


def cmd_verify(args) -> dict:
    net, domain, prop = resolve_inputs(args)
    index = prop["index"] if prop is not None else None
    if index is not None:
        net = net.select_output(index)
    elif net.output_size != 1:
        raise UsageError("multi-output network: set output_spec.index in the property file")
    result = bab_verify(net, domain, Budget(args.max_nodes, args.timeout_s), method=args.method,
                        stratified=args.stratify, intermediate=args.intermediate,
                        stratify_options={"cost_ratio": args.cost_ratio, "decay": args.ema_decay})
    stats = {k: v for k, v in result.stats.items() if k != "global_lb"}
    if args.no_timings:
        stats.pop("time_s", None)
    report = {"format_version": FORMAT_VERSION, "command": "verify", "method": args.method,
              "stratified": args.stratify, "status": result.status.value,
              "witness": None if result.counterexample is None else result.counterexample.tolist(),
              "lower_bound": _json_float(result.lower_bound), "stats": stats}
    return report


def _json_float(v):
    return v if np.isfinite(v) else None


def _compare_instances(args):
    if args.nets:
        out = []
        for path in args.nets:
            net = load_network(path)
            out.append((Path(path).stem, net))
        return out
    if args.random:
        rng = np.random.default_rng(args.seed)
        return [(f"random{i}", random_network(rng, args.sizes)) for i in range(args.random)]
    raise UsageError("compare needs --nets or --random")


def _compare_row(task):
    name, net, domain, methods, args_dict = task
    args = argparse.Namespace(**args_dict)
    target = net.select_output(0) if net.output_size > 1 else net
    bounds = intermediate_bounds(target, domain, _refinement(args))
    opts = solver_options(args)
    # tighter methods start from a Big-M phase identical to the standalone Big-M run
    opts.setdefault("as_init_iters", args.iters)
    opts.setdefault("sp_init_iters", args.iters)
    rows = []
    for method in methods:
        iters = args.iters if method in ("bigm",) else args.method_iters
        solver = make_solver(method, iters, **opts)
        t0 = time.perf_counter()
        res = solver.solve(target, bounds)
        ms = (time.perf_counter() - t0) * 1000.0
        rows.append([name, method, repr(float(res.bound)), "" if args.no_timings else f"{ms:.3f}", res.iters])
    return rows


def cmd_compare(args) -> str:
    methods = [m for m in (args.methods or "").split(",") if m]
    if not methods:
        raise UsageError("empty method list")
    for m in methods:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    instances = _compare_instances(args)
    tasks = []
    for name, net in instances:
        if args.epsilon is not None:
            domain = InputDomain.linf_ball(np.zeros(net.input_size) if args.center is None else args.center,
                                           args.epsilon)
        else:
            domain = InputDomain.box(-np.ones(net.input_size), np.ones(net.input_size))
        tasks.append((name, net, domain, methods, vars(args).copy()))
    for t in tasks:
        t[4].pop("func", None)
    rows = [r for chunk in _map(_compare_row, tasks, args.jobs) for r in chunk]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["instance", "method", "bound", "time_ms", "iters"])
    writer.writerows(rows)
    return buf.getvalue()


# -- parser -----------------------------------------------------------------------

def _add_domain(p):
    p.add_argument("--net", help="network JSON file")
    p.add_argument("--prop", help="property JSON file")
    p.add_argument("--center", type=_floats, help="centre of an l-infinity ball, comma-separated")
    p.add_argument("--epsilon", type=float, help="radius of the l-infinity ball")
    p.add_argument("--lower", type=_floats, help="box lower corner, comma-separated")
    p.add_argument("--upper", type=_floats, help="box upper corner, comma-separated")
    p.add_argument("--clamp", type=float, nargs=2, metavar=("LO", "HI"), help="global input range")


def _add_common(p):
    p.add_argument("--intermediate", choices=("interval", "bigm"), default="interval",
                   help="how intermediate bounds are computed")
    p.add_argument("--intermediate-iters", type=int, default=100)
    p.add_argument("--output", help="write the report here instead of stdout")
    p.add_argument("--no-timings", action="store_true", help="omit wall times for reproducible output")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")


def _add_solver(p):
    p.add_argument("--lr-start", type=float, default=1e-2)
    p.add_argument("--lr-end", type=float, default=1e-4)
    p.add_argument("--as-init-iters", type=int)
    p.add_argument("--as-omega", type=int)
    p.add_argument("--as-vars", type=int)
    p.add_argument("--as-max-cuts", type=int)
    p.add_argument("--sp-init", choices=("bigm", "activeset"))
    p.add_argument("--sp-init-iters", type=int)
    p.add_argument("--sp-cap-const", type=float)
    p.add_argument("--sp-primal-steps", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relaxbound", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bound", help="lower and upper bounds on every output")
    _add_domain(p)
    _add_common(p)
    _add_solver(p)
    p.add_argument("--method", choices=METHODS, default="bigm")
    p.add_argument("--iters", type=int, help="main iteration budget of the method")
    p.add_argument("--outputs", type=lambda s: [int(v) for v in s.split(",")], help="output indices")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--bounds-cache", help="JSON file caching intermediate bounds between runs")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("verify", help="branch and bound on a canonical property")
    _add_domain(p)
    _add_common(p)
    p.add_argument("--method", choices=METHODS[1:], default="bigm")
    p.add_argument("--stratify", action="store_true", help="loose Big-M bounding until a subtree looks hard")
    p.add_argument("--timeout-s", type=float, default=60.0)
    p.add_argument("--max-nodes", type=int, default=10_000)
    p.add_argument("--cost-ratio", type=float, default=5.0)
    p.add_argument("--ema-decay", type=float, default=0.5)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("compare", help="CSV table of bounds and runtimes per instance and method")
    p.add_argument("--methods", default="bigm,activeset", help="comma-separated method names")
    p.add_argument("--nets", nargs="*", help="network JSON files")
    p.add_argument("--random", type=int, help="generate this many random networks")
    p.add_argument("--sizes", type=lambda s: [int(v) for v in s.split(",")], default=[5, 16, 16, 1])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--center", type=_floats)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--iters", type=int, default=500, help="Big-M iterations (also the warm-up of other methods)")
    p.add_argument("--method-iters", type=int, default=500, help="iterations of the non-Big-M methods")
    _add_common(p)
    _add_solver(p)
    p.set_defaults(func=cmd_compare)
    return parser


def _bound_csv(report) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    cols = ["index", "lower", "upper", "iters"] + (["time_ms"] if "time_ms" in report["outputs"][0] else [])
    writer.writerow(cols)
    for row in report["outputs"]:
        writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in cols])
    return buf.getvalue()


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("RELAXBOUND_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        result = args.func(args)
    except (UsageError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"relaxbound: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if isinstance(result, str):
        text = result
    elif args.command == "bound" and args.format == "csv":
        text = _bound_csv(result)
    else:
        text = json.dumps(result, indent=1) + "\n"
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.command == "verify" and result["status"] == Status.TIMEOUT.value:
        return EXIT_TIMEOUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
