"""Command-line entry points: ``run``, ``compare`` and ``analyze``.

Machine-readable output goes to stdout (or ``--output``); logs go to
stderr, with verbosity taken from the ``MAT_LOG`` environment variable.
"""

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional

from . import __version__
from .analysis import (
    AnalysisError,
    belady_boundary,
    classify,
    eviction_records,
    histogram_rows,
    tta_histogram,
    write_eviction_log,
)
from .cache import CacheConfig, HeuristicEngine, SimReport, simulate
from .gbdt import GbdtConfig
from .heuristics import make_policy
from .mat import MatConfig, MatEngine
from .oracle import BeladyEngine, SampledEngine, SamplerConfig, build_next_access
from .trace import SyntheticSpec, generate_zipf, load_trace, parse_synthetic, unique_bytes

log = logging.getLogger("matcache")

ENGINES = ("heuristic", "mat", "sampled", "belady")
ALGOS = ("lru", "fifo", "lfuda", "lruk", "2q")

_MAT_FLAGS = {
    "k": "k", "delta": "delta", "cap_L": "L", "batch_B": "batch_B", "train_batch": "train_batch",
    "stall_prob": "stall_prob", "label_horizon": "label_horizon", "edc_offset": "edc_offset",
}
_GBDT_FLAGS = {
    "gbdt_trees": "n_trees", "gbdt_leaves": "max_leaves", "gbdt_lr": "learning_rate",
    "gbdt_bagging_fraction": "bagging_fraction", "gbdt_bagging_freq": "bagging_frequency",
    "gbdt_bins": "n_bins", "gbdt_min_leaf": "min_samples_leaf",
}


@dataclass
class RunSpec:
    engine: str
    cache: CacheConfig
    algo: str = "lru"
    algo_params: dict = field(default_factory=dict)
    mat: MatConfig = field(default_factory=MatConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    gbdt: GbdtConfig = field(default_factory=GbdtConfig)
    dump_training: Optional[str] = None

    @property
    def label(self):
        return self.engine if self.engine in ("sampled", "belady") else f"{self.engine}-{self.algo}"


def build_engine(spec: RunSpec, requests):
    if spec.engine == "belady":
        return BeladyEngine(build_next_access(requests))
    if spec.engine == "sampled":
        return SampledEngine(spec.sampler, spec.mat, spec.gbdt, dump_path=spec.dump_training)
    policy = make_policy(spec.algo, spec.cache.capacity_bytes, spec.algo_params)
    if spec.engine == "heuristic":
        return HeuristicEngine(policy)
    if spec.engine == "mat":
        return MatEngine(policy, spec.mat, spec.gbdt, dump_path=spec.dump_training)
    raise ValueError(f"unknown engine {spec.engine!r}")


def run(spec: RunSpec, requests, with_log=False):
    """Replay ``requests`` under ``spec``; returns ``(report, engine, eviction log)``."""
    engine = build_engine(spec, requests)
    try:
        report, cache = simulate(requests, spec.cache, engine, log_evictions=with_log)
    finally:
        if hasattr(engine, "close"):
            engine.close()
    return report, engine, cache.log


def _run_row(args):
    spec, requests = args
    try:
        report, _, _ = run(spec, requests)
        return spec, report, ""
    except Exception as exc:  # a failed run is flagged in its row
        log.error("run %s failed: %s", spec.label, exc)
        return spec, None, f"{type(exc).__name__}: {exc}"


def compare(specs: List[RunSpec], requests, jobs=1):
    """Run every spec on the same trace; rows come back in input order."""
    work = [(s, requests) for s in specs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_row, work))
    return [_run_row(w) for w in work]


def compare_csv(rows, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["engine", "algo", "capacity_bytes"] + SimReport.csv_columns() + ["error"])
    for spec, report, error in rows:
        algo = spec.algo if spec.engine in ("heuristic", "mat") else ""
        values = report.csv_values() if report else [""] * len(SimReport.csv_columns())
        w.writerow([spec.engine, algo, spec.cache.capacity_bytes] + values + [error])


def filter_quality(requests, capacity_bytes, specs: List[RunSpec]):
    """Classify each engine's evictions against MIN's boundary.

    Returns ``(T, {label: FilterQuality}, {label: histogram})``.
    """
    nxt = build_next_access(requests)
    config = CacheConfig(capacity_bytes)
    _, cache = simulate(requests, config, BeladyEngine(nxt), log_evictions=True)
    min_records = eviction_records(cache.log, nxt)
    T = belady_boundary(min_records, len(requests))
    quality = {"belady": classify(min_records, T, len(min_records))}
    hists = {"belady": tta_histogram(min_records)}
    for spec in specs:
        spec = replace(spec, cache=config)
        _, _, elog = run(spec, requests, with_log=True)
        recs = eviction_records(elog, nxt)
        quality[spec.label] = classify(recs, T, len(min_records))
        hists[spec.label] = tta_histogram(recs)
    return T, quality, hists


# --------------------------------------------------------------------------
# argument handling


def _capacity(text, requests):
    text = text.strip()
    if text.endswith("%"):
        frac = float(text[:-1]) / 100.0
        if not 0 < frac:
            raise ValueError("capacity percentage must be > 0")
        return max(1, int(unique_bytes(requests) * frac))
    return int(text)


def _warmup(text, n):
    text = text.strip()
    if text.endswith("%"):
        return int(n * float(text[:-1]) / 100.0)
    return int(text)


def _params(items):
    out = {}
    for item in items or []:
        name, sep, value = item.partition("=")
        if not sep or not name:
            raise ValueError(f"--algo-param expects name=value, got {item!r}")
        out[name.strip()] = value.strip()
    return out


def synthetic_spec(args) -> SyntheticSpec:
    spec = parse_synthetic(args.synthetic)
    if "seed=" not in args.synthetic:
        spec = replace(spec, seed=args.seed)
    return spec


def load_requests(args):
    if args.trace:
        return load_trace(args.trace)
    return generate_zipf(synthetic_spec(args))


def _add_trace_args(p):
    src = p.add_argument_group("trace")
    one = src.add_mutually_exclusive_group(required=True)
    one.add_argument("--trace", metavar="PATH", help="three-column trace file: timestamp key size")
    one.add_argument("--synthetic", metavar="SPEC",
                     help="zipf:n=N,alpha=A,req=R[,size=fixed:B|lognormal:MU:SIGMA][,seed=S]")
    src.add_argument("--seed", type=int, default=0, help="master seed for every random substream")
    src.add_argument("--warmup", default="0", help="warm-up requests (count or percent of trace)")


def _add_engine_args(p):
    g = p.add_argument_group("heuristic")
    g.add_argument("--algo", choices=ALGOS, default="lru")
    g.add_argument("--algo-param", action="append", metavar="NAME=VALUE", default=[])
    m = p.add_argument_group("mat / learned engines")
    m.add_argument("--k", type=int, help="target predictions per eviction (2)")
    m.add_argument("--delta", type=float, help="threshold step (1e-4)")
    m.add_argument("--cap-L", dest="cap_L", type=int, help="candidate scan bound (10)")
    m.add_argument("--batch-B", dest="batch_B", type=int, help="prediction batch size (64)")
    m.add_argument("--train-batch", type=int, help="samples per retrain (65536)")
    m.add_argument("--stall-prob", type=float, help="probability an eviction bypasses ML (0)")
    m.add_argument("--label-horizon", type=int, help="ticks a training tag stays pending")
    m.add_argument("--edc-offset", type=int, help="EDC half-life exponent offset (5)")
    m.add_argument("--censored-labels", action="store_true", default=None)
    m.add_argument("--ghost-meta", action="store_true", default=None)
    m.add_argument("--raw-target", action="store_true", default=None,
                   help="regress the raw distance instead of log2(1 + distance)")
    m.add_argument("--dump-training", metavar="PATH")
    m.add_argument("--sample-n", type=int, help="sampled engine: candidates per eviction (64)")
    t = p.add_argument_group("gbdt")
    t.add_argument("--gbdt-trees", type=int)
    t.add_argument("--gbdt-leaves", type=int)
    t.add_argument("--gbdt-lr", type=float)
    t.add_argument("--gbdt-bagging-fraction", type=float)
    t.add_argument("--gbdt-bagging-freq", type=int)
    t.add_argument("--gbdt-bins", type=int)
    t.add_argument("--gbdt-min-leaf", type=int)


def _learned_configs(args):
    mat_kw = {dst: getattr(args, src) for src, dst in _MAT_FLAGS.items() if getattr(args, src) is not None}
    for flag in ("censored_labels", "ghost_meta"):
        if getattr(args, flag):
            mat_kw[flag] = True
    if args.raw_target:
        mat_kw["log_target"] = False
    gbdt_kw = {dst: getattr(args, src) for src, dst in _GBDT_FLAGS.items() if getattr(args, src) is not None}
    mat = MatConfig(seed=args.seed, **mat_kw)
    sampler = SamplerConfig(sample_n=args.sample_n or 64, seed=args.seed)
    return mat, sampler, GbdtConfig(seed=args.seed, **gbdt_kw), bool(mat_kw or gbdt_kw or args.dump_training)


def _check_combination(parser, engines, args):
    learned = {"mat", "sampled"} & set(engines)
    ml_flags = [f for f in list(_MAT_FLAGS) + list(_GBDT_FLAGS) + ["censored_labels", "ghost_meta", "raw_target", "dump_training"]
                if getattr(args, f) not in (None, False)]
    if ml_flags and not learned:
        parser.error(f"{', '.join('--' + f.replace('_', '-') for f in ml_flags)} only apply to the mat/sampled engines")
    if args.sample_n is not None and "sampled" not in engines:
        parser.error("--sample-n only applies to the sampled engine")
    if args.stall_prob is not None and "mat" not in engines:
        parser.error("--stall-prob only applies to the mat engine")
    if args.algo_param and set(engines) <= {"sampled", "belady"}:
        parser.error("--algo-param needs a heuristic-backed engine")


def _parse_engine_token(token, default_algo):
    token = token.strip().lower()
    if token in ALGOS:
        return "heuristic", token
    if token in ("sampled", "belady"):
        return token, default_algo
    if token == "mat":
        return "mat", default_algo
    if token.startswith("mat-") and token[4:] in ALGOS:
        return "mat", token[4:]
    raise ValueError(f"unknown engine token {token!r}")


def make_parser():
    parser = argparse.ArgumentParser(prog="matcache", description="Trace-driven learned-cache simulator.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="replay one trace under one engine")
    _add_trace_args(p)
    p.add_argument("--capacity", required=True, help="bytes, or percent of unique bytes (e.g. 10%%)")
    p.add_argument("--engine", choices=ENGINES, default="heuristic")
    _add_engine_args(p)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--output", metavar="PATH", help="write the report here instead of stdout")
    p.add_argument("--eviction-log", metavar="PATH", help="CSV evict_time,key,tta")
    p.add_argument("--model-out", metavar="PATH", help="save the final model as JSON")

    c = sub.add_parser("compare", help="sweep engines x capacities, one CSV row each")
    _add_trace_args(c)
    c.add_argument("--capacities", required=True, help="comma list of bytes or percents")
    c.add_argument("--engines", required=True,
                   help="comma list: lru,fifo,lfuda,lruk,2q,mat,mat-<algo>,sampled,belady")
    _add_engine_args(c)
    c.add_argument("--jobs", type=int, default=1)
    c.add_argument("--output", metavar="PATH")

    a = sub.add_parser("analyze", help="classify evictions against MIN's boundary")
    _add_trace_args(a)
    a.add_argument("--capacity", required=True)
    a.add_argument("--engines", default="lru,fifo,lfuda,lruk")
    _add_engine_args(a)
    a.add_argument("--histogram", metavar="PATH", help="write TTA histogram CSV engine,bucket,count")
    a.add_argument("--output", metavar="PATH")
    return parser


def _emit(text, path):
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
        sys.stdout.flush()


def _specs_for(parser, args, tokens, capacities, warmup):
    mat, sampler, gbdt_cfg, _ = _learned_configs(args)
    params = _params(args.algo_param)
    specs = []
    for cap in capacities:
        for engine, algo in tokens:
            specs.append(RunSpec(engine, CacheConfig(cap, warmup, args.seed), algo, params, mat, sampler, gbdt_cfg,
                                 getattr(args, "dump_training", None)))
    return specs


def main(argv=None):
    logging.basicConfig(level=os.environ.get("MAT_LOG", "WARNING").upper(), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            _check_combination(parser, [args.engine], args)
        else:
            tokens = [_parse_engine_token(t, args.algo) for t in args.engines.split(",") if t.strip()]
            if not tokens:
                parser.error("no engines given")
            _check_combination(parser, [e for e, _ in tokens], args)
            if args.dump_training:
                parser.error("--dump-training is only supported by run")
        if args.synthetic:
            synthetic_spec(args)
    except ValueError as exc:
        parser.error(str(exc))

    try:
        requests = load_requests(args)
    except (OSError, ValueError) as exc:
        print(f"matcache: cannot load trace: {exc}", file=sys.stderr)
        return 1
    try:
        warmup = _warmup(args.warmup, len(requests))
        if args.command == "run":
            spec = _specs_for(parser, args, [(args.engine, args.algo)], [_capacity(args.capacity, requests)], warmup)[0]
        elif args.command == "compare":
            caps = [_capacity(c, requests) for c in args.capacities.split(",") if c.strip()]
            specs = _specs_for(parser, args, tokens, caps, warmup)
        else:
            specs = _specs_for(parser, args, [t for t in tokens if t[0] != "belady"],
                               [_capacity(args.capacity, requests)], 0)
    except ValueError as exc:
        parser.error(str(exc))

    if args.command == "run":
        return _cmd_run(args, spec, requests)
    if args.command == "compare":
        buf = io.StringIO()
        rows = compare(specs, requests, jobs=args.jobs)
        compare_csv(rows, buf)
        _emit(buf.getvalue(), args.output)
        return 0 if all(not err for _, _, err in rows) else 1
    return _cmd_analyze(args, specs, requests)


def _cmd_run(args, spec, requests):
    report, engine, elog = run(spec, requests, with_log=bool(args.eviction_log))
    if args.format == "json":
        text = report.to_json(engine=spec.engine, algo=spec.algo if spec.engine in ("heuristic", "mat") else None,
                              capacity_bytes=spec.cache.capacity_bytes) + "\n"
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SimReport.csv_columns())
        w.writerow(report.csv_values())
        text = buf.getvalue()
    _emit(text, args.output)
    if args.eviction_log:
        with open(args.eviction_log, "w", newline="") as fh:
            write_eviction_log(eviction_records(elog, build_next_access(requests)), fh)
    if args.model_out:
        model = getattr(engine, "model", None)
        if model is None:
            log.warning("no model was trained; %s not written", args.model_out)
        else:
            with open(args.model_out, "w") as fh:
                fh.write(model.to_json())
    return 0


def _cmd_analyze(args, specs, requests):
    cap = specs[0].cache.capacity_bytes if specs else _capacity(args.capacity, requests)
    try:
        T, quality, hists = filter_quality(requests, cap, specs)
    except AnalysisError as exc:
        print(f"matcache: analysis inapplicable: {exc}", file=sys.stderr)
        return 1
    doc = {"T": T, "capacity_bytes": cap, "engines": {k: v.to_dict() for k, v in quality.items()}}
    _emit(json.dumps(doc, sort_keys=True) + "\n", args.output)
    if args.histogram:
        with open(args.histogram, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["engine", "bucket", "count"])
            w.writerows(histogram_rows(hists))
    return 0


if __name__ == "__main__":
    sys.exit(main())
