"""Command line front end: extract -> cluster -> inject -> evaluate, plus bench-gen and report.

Stages hand off through files in ``--out-dir``; each run merges its effective
parameters into ``run.json`` there.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from ._seeding import derive_seed
from .circuit import NetlistError, load_netlist
from .clustering import (ClusteringError, agglomerative, kmeans, mean_shift, pick_bandwidth,
                         read_clusters_csv, target_count)
from .evaluate import (EvaluationError, clustered_curve, curve_gap, curves_to_csv, ideal_curve,
                       quality_report, random_baseline, read_curves_csv)
from .faultsim import (DEFAULT_INJECTIONS, PER_CLUSTER, PER_FF, SimulationError, Simulator, load_workload,
                       per_cluster_campaign, per_ff_campaign, read_campaign_csv, simulate_golden)
from .features import FeatureError, extract_features, read_feature_csv, standardize
from .synthbench import BenchError, BenchSpec, generate
from .trace import VcdError, compute_activity, load_name_map, parse_vcd

log = logging.getLogger("seucluster")


class UsageError(Exception):
    """Bad input from the user; exit code 2."""


INPUT_ERRORS = (UsageError, NetlistError, VcdError, FeatureError, ClusteringError, SimulationError,
                EvaluationError, BenchError, json.JSONDecodeError)


def _read(path, what) -> str:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} file not found: {path}")
    return p.read_text(encoding="utf-8")


def _sidecar(path) -> str | None:
    p = Path(path).with_suffix(".json")
    return p.read_text(encoding="utf-8") if p.is_file() else None


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    p = out / name
    p.write_text(text, encoding="utf-8")
    log.info("wrote %s", p)
    return p


def _record(out: Path, stage: str, params: dict):
    p = out / "run.json"
    run = {}
    if p.is_file():
        try:
            run = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            run = {}
    run["tool"] = "seucluster"
    run["version"] = __version__
    run.setdefault("stages", {})[stage] = params
    _write(out, "run.json", json.dumps(run, sort_keys=True, indent=2) + "\n")


PATH_ARGS = {"netlist", "workload", "vcd", "name_map", "features", "clusters", "campaign", "cluster_campaign", "spec"}


def _params(args, **extra) -> dict:
    """Effective stage parameters; thread count and output location are left out."""
    skip = {"func", "threads", "verbose", "command", "out_dir"}
    out = Path(args.out_dir).resolve()
    d = {}
    for k, v in sorted(vars(args).items()):
        if k in skip:
            continue
        if k in PATH_ARGS and v is not None:
            p = Path(v).resolve()
            # inputs produced by earlier stages are recorded relative to the output directory
            v = p.relative_to(out).as_posix() if p.is_relative_to(out) else str(v)
        d[k] = v
    d.update(extra)
    return d


# ---------------------------------------------------------------------------

def cmd_extract(args) -> int:
    out = Path(args.out_dir)
    circuit = load_netlist_checked(args.netlist)
    if args.activity == "simulate":
        if not args.workload:
            raise UsageError("--activity simulate needs --workload")
        w = load_workload_checked(args.workload)
        golden = simulate_golden(circuit, w)
        timelines = golden.timelines()
        if args.dump_vcd:
            text, name_map = golden.to_vcd(circuit)
            _write(out, "golden.vcd", text)
            _write(out, "golden.namemap.json", json.dumps(name_map, sort_keys=True, indent=2) + "\n")
    else:
        if not (args.vcd and args.name_map):
            raise UsageError("--activity vcd needs --vcd and --name-map")
        _read(args.name_map, "name map")
        timelines = parse_vcd(_read(args.vcd, "VCD"), load_name_map(args.name_map), period=args.period)
    window = tuple(args.window) if args.window else None
    try:
        activity = {tl.ff: compute_activity(tl, window) for tl in timelines}
    except ValueError as e:
        raise UsageError(str(e)) from None
    raw = extract_features(circuit, activity)
    std = standardize(raw)
    _write(out, "features.raw.csv", raw.to_csv())
    _write(out, "features.std.csv", std.to_csv())
    _write(out, "features.scaling.json", json.dumps(
        {"mean": std.mean.tolist(), "std": std.std.tolist()}, sort_keys=True, indent=2) + "\n")
    _record(out, "extract", _params(args))
    print(f"extracted {len(raw)} flip-flops x 20 features")
    return 0


def cmd_cluster(args) -> int:
    out = Path(args.out_dir)
    m = read_feature_csv(_read(args.features or out / "features.std.csv", "features"), standardized=True)
    seed = derive_seed(args.seed, "cluster")
    k = args.k
    if k is None and args.target_frac is not None:
        k = target_count(len(m), args.target_frac)
    extra = {}
    if args.algo == "meanshift":
        w = args.bandwidth
        if w is None:
            if k is None:
                raise UsageError("mean shift needs --bandwidth or --target-frac/--k")
            choice = pick_bandwidth(m, k, max_iter=args.max_iter, shift_tol=args.shift_tol)
            if not choice.exact:
                log.warning("no window size gives exactly %d clusters; using %d", k, choice.n_clusters)
            w = choice.bandwidth
            extra = {"target_clusters": k, "bandwidth_exact": choice.exact}
        cl = mean_shift(m, w, max_iter=args.max_iter, shift_tol=args.shift_tol)
    else:
        if k is None:
            raise UsageError(f"{args.algo} needs --k or --target-frac")
        if args.algo == "kmeans":
            cl = kmeans(m, k, seed=seed, max_iter=args.max_iter, n_restarts=args.n_restarts, tol=args.tol)
        else:
            cl = agglomerative(m, k)
    if extra:
        cl = type(cl)(cl.ff_names, cl.labels, cl.algorithm, dict(cl.params, **extra), cl.seed)
    _write(out, f"{args.name}.csv", cl.to_csv())
    _write(out, f"{args.name}.json", cl.sidecar())
    _record(out, f"cluster:{args.name}", _params(args, derived_seed=seed))
    print(f"{cl.algorithm}: {cl.n_clusters} clusters over {len(m)} flip-flops")
    return 0


def cmd_inject(args) -> int:
    out = Path(args.out_dir)
    circuit = load_netlist_checked(args.netlist)
    w = load_workload_checked(args.workload)
    seed = derive_seed(args.seed, "inject")
    sim = Simulator(circuit)
    golden = simulate_golden(circuit, w, sim)
    n_ff = len(circuit.ffs)
    if args.granularity == "ff":
        res = per_ff_campaign(circuit, w, args.n, seed, threads=args.threads, golden=golden, sim=sim)
    else:
        if not args.clusters:
            raise UsageError("--granularity cluster needs --clusters")
        cl = read_clusters_csv(_read(args.clusters, "clusters"), _sidecar(args.clusters))
        res = per_cluster_campaign(circuit, w, cl, args.n, seed, threads=args.threads, golden=golden, sim=sim)
    factor = n_ff / len(res.targets)
    res = type(res)(res.granularity, res.targets, res.members, res.injections, res.failures, res.seed,
                    res.workload, res.circuit,
                    extra={"effort_injections": res.total_injections, "per_ff_effort": n_ff * args.n,
                           "reduction_factor": factor})
    name = args.name or ("campaign" if res.granularity == PER_FF else "campaign.cluster")
    _write(out, f"{name}.csv", res.to_csv())
    _write(out, f"{name}.json", res.sidecar())
    _record(out, f"inject:{name}", _params(args, derived_seed=seed))
    print(f"{res.granularity}: {len(res.targets)} targets x {args.n} injections, "
          f"overall failure rate {100 * res.overall_rate:.2f} %, effort reduction {factor:.2f}x")
    return 0


def cmd_evaluate(args) -> int:
    out = Path(args.out_dir)
    path = args.campaign or out / "campaign.csv"
    camp = read_campaign_csv(_read(path, "campaign"), _sidecar(path))
    if camp.granularity != PER_FF:
        raise UsageError("evaluate needs a PerFF campaign for the ideal baseline")
    rates = camp.per_ff_rates()
    seed = derive_seed(args.seed, "evaluate")
    curves = [ideal_curve(rates), random_baseline(rates, args.random_runs, seed)]
    if args.clusters:
        cl = read_clusters_csv(_read(args.clusters, "clusters"), _sidecar(args.clusters))
        group_rates = None
        if args.cluster_campaign:
            cc = read_campaign_csv(_read(args.cluster_campaign, "cluster campaign"), _sidecar(args.cluster_campaign))
            if cc.granularity != PER_CLUSTER or len(cc.targets) != cl.n_clusters:
                raise UsageError("cluster campaign does not match the clustering")
            by_label = cc.rate_of()
            group_rates = [by_label[str(i)] for i in range(cl.n_clusters)]
        curves.append(clustered_curve(cl, rates, group_rates))
        m = None
        if args.features:
            m = read_feature_csv(_read(args.features, "features"), standardized=True)
        _write(out, "quality.json", quality_report(cl, rates, m).dumps())
    for c in curves:
        if c.degenerate:
            log.warning("every failure rate is zero; curve %s is flat", c.strategy)
    _write(out, "curve.csv", curves_to_csv(curves))
    _record(out, "evaluate", _params(args, derived_seed=seed))
    print("; ".join(f"{c.strategy}: gap to ideal {curve_gap(c, curves[0]):+.4f}" for c in curves[1:]))
    return 0


def cmd_bench_gen(args) -> int:
    out = Path(args.out_dir)
    if args.spec:
        spec = BenchSpec.from_dict(json.loads(_read(args.spec, "bench spec")))
    else:
        d = {"seed": args.seed}
        for key, val in (("n_blocks", args.n_blocks), ("horizon", args.horizon), ("bus_fraction", args.bus_fraction)):
            if val is not None:
                d[key] = val
        if args.kinds:
            d["kinds"] = tuple(args.kinds.split(","))
        if args.ff_range:
            d["ff_range"] = tuple(args.ff_range)
        spec = BenchSpec.from_dict(d)
    bench = generate(spec)
    _write(out, "netlist.json", bench.netlist)
    _write(out, "workload.json", bench.workload.dumps())
    _write(out, "blocks.csv", bench.blocks_csv())
    _write(out, "bench.json", spec.dumps())
    _record(out, "bench-gen", _params(args))
    print(f"generated {len(bench.circuit.ffs)} flip-flops in {spec.n_blocks} blocks")
    return 0


def cmd_report(args) -> int:
    out = Path(args.out_dir)
    curves = read_curves_csv(_read(out / "curve.csv", "curve"))
    if "ideal" not in curves:
        raise UsageError("curve.csv has no ideal curve")
    ideal = curves["ideal"]
    rnd = next((c for s, c in curves.items() if s.startswith("random")), None)
    rows = {}
    for s, c in curves.items():
        rows[s] = {"gap_to_ideal": curve_gap(c, ideal)}
        if rnd is not None:
            rows[s]["gap_to_random"] = curve_gap(c, rnd)
    report = {"curves": rows}
    q = out / "quality.json"
    if q.is_file():
        report["quality"] = json.loads(q.read_text(encoding="utf-8"))
    for name in ("campaign", "campaign.cluster"):
        side = out / f"{name}.json"
        if side.is_file():
            meta = json.loads(side.read_text(encoding="utf-8"))
            report[name] = {k: meta[k] for k in ("granularity", "overall_rate", "total_injections",
                                                  "total_failures", "reduction_factor") if k in meta}
    _write(out, "report.json", json.dumps(report, sort_keys=True, indent=2) + "\n")
    for s, r in rows.items():
        print(f"{s:>24}  " + "  ".join(f"{k}={v:+.4f}" for k, v in r.items()))
    if "quality" in report:
        print("quality: " + ", ".join(f"{k}={v}" for k, v in report["quality"].items()))
    return 0


def load_netlist_checked(path):
    _read(path, "netlist")
    return load_netlist(path)


def load_workload_checked(path):
    _read(path, "workload")
    return load_workload(path)


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    def common(sub_default):
        p = argparse.ArgumentParser(add_help=False)
        d = argparse.SUPPRESS if sub_default else None
        p.add_argument("--seed", type=int, default=d if sub_default else 0, help="root seed for every stage")
        p.add_argument("--threads", type=int, default=d if sub_default else 1, help="worker threads")
        p.add_argument("--out-dir", default=d if sub_default else ".", help="directory for stage outputs")
        p.add_argument("-v", "--verbose", action="store_true", default=d if sub_default else False)
        return p

    parser = argparse.ArgumentParser(prog="seucluster", parents=[common(False)],
                                     description="Flip-flop clustering for selective SEU mitigation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    shared = common(True)

    p = sub.add_parser("extract", parents=[shared], help="compute the 20 features per flip-flop")
    p.add_argument("--netlist", required=True)
    p.add_argument("--activity", choices=("simulate", "vcd"), default="simulate")
    p.add_argument("--workload")
    p.add_argument("--vcd")
    p.add_argument("--name-map")
    p.add_argument("--period", type=int, default=None, help="clock period in VCD time units")
    p.add_argument("--window", type=int, nargs=2, metavar=("START", "END"), help="activity window in cycles")
    p.add_argument("--dump-vcd", action="store_true", help="also write the golden run as VCD")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("cluster", parents=[shared], help="group flip-flops")
    p.add_argument("--features", help="standardized feature CSV (default: OUT/features.std.csv)")
    p.add_argument("--algo", choices=("kmeans", "agglo", "meanshift"), required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--target-frac", type=float, help="cluster count as a fraction of flip-flops, e.g. 0.05")
    p.add_argument("--bandwidth", type=float)
    p.add_argument("--max-iter", type=int, default=300)
    p.add_argument("--n-restarts", type=int, default=10)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--shift-tol", type=float, default=1e-3)
    p.add_argument("--name", default="clusters", help="output file stem")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("inject", parents=[shared], help="run a statistical SEU campaign")
    p.add_argument("--netlist", required=True)
    p.add_argument("--workload", required=True)
    p.add_argument("--granularity", choices=("ff", "cluster"), default="ff")
    p.add_argument("--clusters")
    p.add_argument("--n", type=int, default=DEFAULT_INJECTIONS, help="injections per target")
    p.add_argument("--name", help="output file stem")
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("evaluate", parents=[shared], help="mitigation curves and cluster quality")
    p.add_argument("--campaign", help="PerFF campaign CSV (default: OUT/campaign.csv)")
    p.add_argument("--clusters")
    p.add_argument("--cluster-campaign", help="rank clusters by this per-cluster campaign")
    p.add_argument("--features", help="standardized features, for the Davies-Bouldin index")
    p.add_argument("--random-runs", type=int, default=100)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench-gen", parents=[shared], help="generate a synthetic benchmark")
    p.add_argument("--spec", help="bench spec JSON")
    p.add_argument("--n-blocks", type=int)
    p.add_argument("--kinds", help="comma separated block kinds")
    p.add_argument("--ff-range", type=int, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--bus-fraction", type=float)
    p.add_argument("--horizon", type=int)
    p.set_defaults(func=cmd_bench_gen)

    p = sub.add_parser("report", parents=[shared], help="summarize an output directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        return args.func(args)
    except INPUT_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
