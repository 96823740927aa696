"""Command-line entry point: ``zswapsim <command> ...``.

Exit status is 0 on success, 1 for usage errors and 2 for bad or missing data.
"""

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import trace as tracefmt
from .analysis import (COVERAGE_HEADER, DECILES_HEADER, LOCALITY_HEADER, SIMILARITY_HEADER,
                       SWEEP_HEADER, chunk_sweep, coverage_accuracy, decile_rows,
                       eviction_deciles, fault_sector_stream, hot_similarity, load_audit,
                       pooled_locality, similarity_rows, sweep_rows, trace_locality, trace_uids,
                       write_csv)
from .codec import measure_codec
from .engine import SchemeConfig, dump_report, replay, trace_id
from .errors import SimError
from .generate import GeneratorSpec, generate, payload_corpus
from .hotness import LaunchIndex
from .metrics import COMPARE_HEADER, CostModel, compare, compare_csv_rows, format_table
from .sizes import parse_size, parse_size_range

USAGE = 1
DATA = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n\n{self.format_help()}")


# -- helpers ---------------------------------------------------------------------


def _load_trace(path):
    if path.endswith(".jsonl"):
        with open(path) as fh:
            return tracefmt.import_jsonl(fh)
    return tracefmt.load(path)


def _load_json(path):
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise SimError(f"{path}: {exc}") from exc


def _write_text(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _csv_out(path, header, rows):
    if path in (None, "-"):
        write_csv(sys.stdout, header, rows)
    else:
        write_csv(path, header, rows)


# -- generate / jsonl ------------------------------------------------------------


def cmd_generate(args):
    spec = GeneratorSpec.load(args.spec) if args.spec else GeneratorSpec()
    if args.seed is not None:
        spec.seed = args.seed
    events = generate(spec)
    n = tracefmt.save(events, args.out)
    print(f"wrote {len(events)} events ({n} bytes) to {args.out}")


def cmd_export_jsonl(args):
    events = tracefmt.load(args.trace)
    with open(args.out, "w") as fh:
        tracefmt.export_jsonl(events, fh)
    print(f"exported {len(events)} events to {args.out}")


def cmd_import_jsonl(args):
    with open(args.jsonl) as fh:
        events = tracefmt.import_jsonl(fh)
    tracefmt.check_windows(events)
    n = tracefmt.save(events, args.out)
    print(f"imported {len(events)} events ({n} bytes) to {args.out}")


# -- replay ----------------------------------------------------------------------

_SCHEME_FLAGS = ("scheme", "scenario", "sizes", "mem", "zpool", "buffer_pages",
                 "low_watermark", "high_watermark", "swap_capacity", "swap_path")


def effective_config(args, file_cfg=None):
    """Flags over config file over defaults; returns (SchemeConfig, CostModel)."""
    merged = dict(file_cfg or {})
    model_cfg = merged.pop("cost_model", None)
    for name in _SCHEME_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = value
    config = SchemeConfig.from_dict(merged)
    if getattr(args, "cost_model", None):
        model = CostModel.load(args.cost_model)
    elif model_cfg is not None:
        model = CostModel.from_dict(model_cfg)
    else:
        model = CostModel()
    return config, model


def _run_one(job):
    trace_path, cfg, model, audit_path, debug = job
    events = _load_trace(trace_path)
    config = SchemeConfig.from_dict(cfg)
    engine = replay(events, config, CostModel.from_dict(model), audit=audit_path is not None,
                    debug=debug)
    report = engine.report(trace_id(events))
    if audit_path is not None:
        _write_text(audit_path, engine.audit_jsonl())
    return report


def cmd_replay(args):
    file_cfg = _load_json(args.config) if args.config else {}
    if args.matrix:
        return _replay_matrix(args, file_cfg)
    config, model = effective_config(args, file_cfg)
    report = _run_one((args.trace, config.to_dict(), model.to_dict(), args.audit, args.debug))
    _write_text(args.out, dump_report(report))
    t = report["totals"]
    print(f"{config.label}: latency {t['relaunch_latency_ns']:.4g} ns over {t['relaunches']} "
          f"relaunches, cpu {t['cpu_ns']:.4g} ns, ratio {t['compression_ratio']}",
          file=sys.stderr if args.out in (None, "-") else sys.stdout)


def _replay_matrix(args, file_cfg):
    entries = _load_json(args.matrix)
    if not isinstance(entries, list) or not entries:
        raise SimError("matrix file must hold a non-empty JSON list of configs")
    jobs = []
    for i, entry in enumerate(entries):
        config, model = effective_config(args, {**file_cfg, **entry})
        audit = None
        if args.audit:
            audit = os.path.join(args.audit, f"{i:02d}-{config.label}.jsonl")
        jobs.append((args.trace, config.to_dict(), model.to_dict(), audit, args.debug))
    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    if args.audit:
        os.makedirs(args.audit, exist_ok=True)
    workers = args.jobs or min(len(jobs), os.cpu_count() or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_run_one, jobs))  # map keeps config order
    else:
        reports = [_run_one(j) for j in jobs]
    for i, report in enumerate(reports):
        label = report["config"]["label"]
        path = os.path.join(out_dir, f"{i:02d}-{label}.json")
        _write_text(path, dump_report(report))
        t = report["totals"]
        print(f"{path}: latency {t['relaunch_latency_ns']:.4g} ns, cpu {t['cpu_ns']:.4g} ns, "
              f"ratio {t['compression_ratio']}")


# -- analyze ---------------------------------------------------------------------


def cmd_analyze(args):
    events = _load_trace(args.trace)
    what = args.what
    if what == "similarity":
        index = LaunchIndex(events)
        stats = [s for uid in trace_uids(events) for s in hot_similarity(events, uid, index)]
        _csv_out(args.out, SIMILARITY_HEADER, similarity_rows(stats))
    elif what == "locality":
        rows = []
        stream = None
        if args.audit:
            stream = fault_sector_stream(load_audit(args.audit), events, args.uid)
        for n in args.n:
            if stream is not None:
                p = pooled_locality([stream], n)
            else:
                p = trace_locality(events, n, args.uid)
            rows.append((n, f"{p:.6f}"))
        _csv_out(args.out, LOCALITY_HEADER, rows)
    else:
        if not args.audit:
            raise UsageError(f"analyze {what} needs --audit")
        audit = load_audit(args.audit)
        if what == "deciles":
            _csv_out(args.out, DECILES_HEADER, decile_rows(eviction_deciles(audit, events)))
        else:
            index = LaunchIndex(events)
            rows = []
            for uid in trace_uids(events):
                for k in index.launches(uid):
                    if k < 1:
                        continue
                    r = coverage_accuracy(audit, events, uid, k, index)
                    rows.append((uid, k, _f(r["coverage"]), _f(r["accuracy"])))
            _csv_out(args.out, COVERAGE_HEADER, rows)


def _f(v):
    return "" if v is None else f"{v:.6f}"


# -- sweeps and calibration ------------------------------------------------------


def _corpus(args):
    if args.corpus:
        with open(args.corpus, "rb") as fh:
            return fh.read()
    return payload_corpus(args.model, parse_size(args.bytes), args.seed)


def cmd_sweep(args):
    sizes = parse_size_range(args.sizes)
    samples = chunk_sweep(_corpus(args), sizes, args.repetitions)
    _csv_out(args.out, SWEEP_HEADER, sweep_rows(samples))


def fit_costs(samples):
    """Least-squares (ns/op, ns/byte) for compress and decompress from codec samples."""
    a = np.array([[s.original_bytes / s.chunk, s.original_bytes] for s in samples], dtype=float)
    out = {}
    for key, attr in (("compress", "compress_ns"), ("decompress", "decompress_ns")):
        y = np.array([getattr(s, attr) for s in samples], dtype=float)
        (per_op, per_byte), *_ = np.linalg.lstsq(a, y, rcond=None)
        out[key] = (max(0.0, float(per_op)), max(0.0, float(per_byte)))
    return out


def cmd_calibrate(args):
    corpus = _corpus(args)
    sizes = parse_size_range(args.sizes)
    for s in sizes:  # warm the JIT so the first size is not charged for compilation
        measure_codec(corpus[:max(sizes)], s)
    samples = [measure_codec(corpus, s, args.repetitions) for s in sizes]
    fit = fit_costs(samples)
    model = CostModel(
        compress_ns_per_op=fit["compress"][0], compress_ns_per_byte=fit["compress"][1],
        decompress_ns_per_op=fit["decompress"][0], decompress_ns_per_byte=fit["decompress"][1])
    _write_text(args.out, json.dumps(model.to_dict(), indent=2, sort_keys=True) + "\n")
    if args.out not in (None, "-"):
        print(f"compress {fit['compress'][1]:.3f} ns/B + {fit['compress'][0]:.0f} ns/op; "
              f"decompress {fit['decompress'][1]:.3f} ns/B + {fit['decompress'][0]:.0f} ns/op")


# -- compare ---------------------------------------------------------------------


def cmd_compare(args):
    rows = compare(_load_json(args.a), _load_json(args.b))
    print(format_table(rows))
    if args.out:
        write_csv(args.out, COMPARE_HEADER, compare_csv_rows(rows))


# -- parser ----------------------------------------------------------------------


def _int_size(text):
    try:
        return parse_size(text)
    except SimError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def build_parser():
    p = _Parser(prog="zswapsim", description="Compressed-swap trace simulator")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="generate a synthetic trace")
    g.add_argument("--spec", help="generator spec JSON (defaults when omitted)")
    g.add_argument("--seed", type=int, help="override the spec's seed")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("replay", help="replay a trace under one scheme config")
    r.add_argument("--trace", required=True, help=".aswp trace or .jsonl export")
    r.add_argument("--config", help="JSON scheme config; flags take precedence")
    r.add_argument("--scheme", choices=["zram", "adaptive", "ariadne", "baseline", "hotness"])
    r.add_argument("--scenario", choices=["al", "ehl"])
    r.add_argument("--sizes", help="small-medium-large chunk classes, e.g. 1K-2K-16K")
    r.add_argument("--mem", type=_int_size)
    r.add_argument("--zpool", type=_int_size)
    r.add_argument("--buffer", dest="buffer_pages", type=int)
    r.add_argument("--low-watermark", type=_int_size)
    r.add_argument("--high-watermark", type=_int_size)
    r.add_argument("--swap-capacity", type=_int_size)
    r.add_argument("--swap-path", help="keep the swap log in this file")
    r.add_argument("--cost-model", help="cost model JSON (e.g. from calibrate)")
    r.add_argument("--out", help="report.json path (directory with --matrix); stdout if omitted")
    r.add_argument("--audit", help="audit JSONL path (directory with --matrix)")
    r.add_argument("--matrix", help="JSON list of configs to run in parallel")
    r.add_argument("--jobs", type=int, help="worker processes for --matrix")
    r.add_argument("--debug", action="store_true", help="check conservation after every event")
    r.set_defaults(func=cmd_replay)

    a = sub.add_parser("analyze", help="workload and policy analyses (CSV output)")
    a.add_argument("what", choices=["similarity", "deciles", "locality", "coverage"])
    a.add_argument("--trace", required=True)
    a.add_argument("--audit")
    a.add_argument("--uid", type=int)
    a.add_argument("--n", type=int, nargs="+", default=[2, 4], help="run lengths for locality")
    a.add_argument("--out")
    a.set_defaults(func=cmd_analyze)

    for name, func, default_sizes, reps in (("sweep-chunks", cmd_sweep, "128B..128K", 3),
                                            ("calibrate", cmd_calibrate, "1K..128K", 5)):
        s = sub.add_parser(name, help="codec timing and ratio per chunk class" if func is cmd_sweep
                           else "fit cost-model codec constants on this host")
        s.add_argument("--corpus", help="input file; a generated corpus when omitted")
        s.add_argument("--model", default="templated", choices=["random", "zero-runs", "templated"])
        s.add_argument("--bytes", default="8M")
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--sizes", default=default_sizes)
        s.add_argument("--repetitions", type=int, default=reps)
        s.add_argument("--out")
        s.set_defaults(func=func)

    c = sub.add_parser("compare", help="normalized table of report b against baseline report a")
    c.add_argument("a")
    c.add_argument("b")
    c.add_argument("--out", help="also write the rows as CSV")
    c.set_defaults(func=cmd_compare)

    e = sub.add_parser("export-jsonl", help="binary trace to JSONL")
    e.add_argument("trace")
    e.add_argument("out")
    e.set_defaults(func=cmd_export_jsonl)

    i = sub.add_parser("import-jsonl", help="JSONL to binary trace")
    i.add_argument("jsonl")
    i.add_argument("out")
    i.set_defaults(func=cmd_import_jsonl)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
    except UsageError as exc:
        print(f"zswapsim: {exc}", file=sys.stderr)
        return USAGE
    except (SimError, OSError) as exc:
        print(f"zswapsim: {exc}", file=sys.stderr)
        return DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
