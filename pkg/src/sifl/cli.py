"""Command-line harness.

Subcommands: ``run`` (experiment -> JSONL/traces/reports), ``gen-keys``,
``validate-keys``, ``dp-report``, ``equivalence``. Exit codes: 0 success,
1 validation or equivalence failure, 2 configuration error.
"""

import argparse
import os
import sys

from .coding import validate_keys
from .errors import ConfigError, KeyFormatError, ParseError, SiflError
from .harness import (
    build_keys,
    equivalence_report,
    load_config,
    run_experiment,
    timing_report,
)
from .dp import make_sensitivity, norm_profile, privacy_report
from .keyio import load_keys, save_keys
from .protocol import TrainingTrace

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    jsonl = args.output or os.path.splitext(args.config)[0] + ".jsonl"
    stem = os.path.splitext(jsonl)[0]
    trace_dir = args.traces
    if trace_dir:
        os.makedirs(trace_dir, exist_ok=True)
    result = run_experiment(cfg, jsonl_path=jsonl, trace_dir=trace_dir,
                            include_timings=not args.no_timing)
    print(f"wrote {jsonl} ({len(result.records)} metric records)")
    if trace_dir:
        for kind in result.traces:
            print(f"wrote {trace_dir}/trace-{kind}.npz")
    timing_csv = args.timing_csv
    if timing_csv is None and not args.no_timing:
        timing_csv = stem + ".timing.csv"
    if timing_csv:
        with open(timing_csv, "w", encoding="utf-8") as fh:
            fh.write(timing_report({os.path.basename(args.config): result.records}))
        print(f"wrote {timing_csv}")
    privacy_txt = args.privacy_txt or stem + ".privacy.txt"
    with open(privacy_txt, "w", encoding="utf-8") as fh:
        fh.write("\n".join(result.report.lines()) + "\n")
    print(f"wrote {privacy_txt}")
    for mode, trace in result.traces.items():
        print(f"{mode}: final loss={trace.losses[-1]:.6f} "
              f"accuracy={trace.accuracies[-1]:.4f}")
    return EXIT_OK


def _cmd_gen_keys(args) -> int:
    cfg = load_config(args.config)
    _, server, agg = build_keys(cfg)
    save_keys(args.output, server, agg)
    print(f"wrote {args.output} (n={server.n}, n_tilde={server.n_tilde}, p={agg.p})")
    return EXIT_OK


def _cmd_validate_keys(args) -> int:
    server, agg = load_keys(args.keyfile)
    report = validate_keys(server, agg)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_FAILED


def _cmd_dp_report(args) -> int:
    cfg = load_config(args.config)
    if args.keys:
        server, agg = load_keys(args.keys)
    else:
        _, server, agg = build_keys(cfg)
    sizes_local = cfg.data.samples // cfg.clients
    sens = make_sensitivity(cfg.clip, max(sizes_local, 1), cfg.data.samples,
                            order=1 if cfg.privacy.noise_kind == "laplace" else 2)
    report = privacy_report(norm_profile(server, agg), sens, cfg.privacy)
    print("\n".join(report.lines()))
    return EXIT_OK


def _cmd_equivalence(args) -> int:
    a = TrainingTrace.load_npz(args.trace_a)
    b = TrainingTrace.load_npz(args.trace_b)
    report = equivalence_report(a, b, args.tol)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sifl",
        description="Immersion-coded federated learning harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment from a config file")
    p.add_argument("config")
    p.add_argument("-o", "--output", help="JSONL metrics path")
    p.add_argument("--traces", help="directory for per-mode .npz traces")
    p.add_argument("--no-timing", action="store_true",
                   help="omit wall-clock fields (golden-output runs)")
    p.add_argument("--timing-csv", help="write a phase-timing CSV")
    p.add_argument("--privacy-txt", help="write the flat-text privacy report")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("gen-keys", help="generate keys and save the container")
    p.add_argument("config")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_gen_keys)

    p = sub.add_parser("validate-keys", help="load a key container and re-check invariants")
    p.add_argument("keyfile")
    p.set_defaults(func=_cmd_validate_keys)

    p = sub.add_parser("dp-report", help="print the privacy statement for a config")
    p.add_argument("config")
    p.add_argument("--keys", help="use a saved key container instead of regenerating")
    p.set_defaults(func=_cmd_dp_report)

    p = sub.add_parser("equivalence", help="compare two saved traces round by round")
    p.add_argument("trace_a")
    p.add_argument("trace_b")
    p.add_argument("--tol", type=float, default=1e-9)
    p.set_defaults(func=_cmd_equivalence)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (KeyFormatError, SiflError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
