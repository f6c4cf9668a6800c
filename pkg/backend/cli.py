"""
Command line for runs, sweeps, trace generation and the collector service.

    python -m backend.cli run --config configs/isp_synthetic.yaml --memory-bytes 8K
    python -m backend.cli sweep --config configs/isp_synthetic.yaml --axis memory --values 4K,8K,16K,32K
    python -m backend.cli generate --synthetic configs/synthetic/isp.yaml --out trace.csv
    python -m backend.cli serve --port 8000
"""

import argparse
import json
import logging
import sys
from typing import Dict, List, Optional

from pydantic import ValidationError

from backend.config import RunConfig, configure_logging, get_settings, load_run_config
from backend.core.errors import ElasticTrieError

logger = logging.getLogger(__name__)


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML run config; flags override its values")
    parser.add_argument("--mode", choices=["hhh", "spread", "ddos-victim"])
    parser.add_argument("--count-mode", choices=["packets", "bytes"])
    parser.add_argument("--threshold", help="absolute volume per window, or a percentage such as 5%%")
    parser.add_argument("--active-timeout", type=float, dest="active_timeout_s", help="seconds")
    parser.add_argument("--inactive-timeout", type=float, dest="inactive_timeout_s", help="seconds")
    parser.add_argument("--timeout-fn", help="fixed or f:<y>")
    parser.add_argument("--max-depth", type=int)
    parser.add_argument("--memory-bytes", help="trie memory budget, e.g. 8K (default unbounded)")
    parser.add_argument("--filter-bytes", help="Bloom filter size in spread modes, e.g. 32K")
    parser.add_argument("--alarm-threshold", type=int)
    parser.add_argument("--change-window", type=float, dest="change_window_s",
                        help="change-detector moving-average window, seconds (default level-0 active timeout)")
    parser.add_argument("--tick", type=float, dest="tick_s", help="change-detector sampling tick, seconds")
    parser.add_argument("--relax", type=int, choices=[0, 2])
    parser.add_argument("--warmup-windows", type=int)
    parser.add_argument("--nominal-rate", type=float, help="base rate for percentage thresholds")
    parser.add_argument("--report-hh-on-expand", action="store_true", default=None)
    parser.add_argument("--allow-reorder", action="store_true", default=None)
    source = parser.add_mutually_exclusive_group()
    source.add_argument("--trace", help="pcap or CSV trace, or builtin:hierarchy")
    source.add_argument("--synthetic", help="synthetic trace spec (YAML)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--events-out", help="JSONL event log path")
    parser.add_argument("--report-dir", help="directory for scores, time series and summary")


RUN_FIELDS = [
    "mode", "count_mode", "threshold", "active_timeout_s", "inactive_timeout_s", "timeout_fn",
    "max_depth", "memory_bytes", "filter_bytes", "alarm_threshold", "change_window_s", "tick_s",
    "relax", "warmup_windows", "nominal_rate", "report_hh_on_expand", "allow_reorder", "trace",
    "synthetic", "seed", "events_out", "report_dir",
]


def build_config(args: argparse.Namespace) -> RunConfig:
    """File config (if any) with command-line overrides applied."""
    overrides: Dict = {name: getattr(args, name) for name in RUN_FIELDS}
    if args.config:
        return load_run_config(args.config).with_overrides(overrides)
    return RunConfig.model_validate({k: v for k, v in overrides.items() if v is not None})


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="elastic-trie",
        description="Elastic Trie detection runs and accuracy experiments.",
    )
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING (default from environment)")
    commands = parser.add_subparsers(dest="command", required=True)

    run_parser = commands.add_parser("run", help="run one configuration and print its summary")
    _add_run_flags(run_parser)

    sweep_parser = commands.add_parser("sweep", help="repeat a run over one parameter axis")
    _add_run_flags(sweep_parser)
    sweep_parser.add_argument("--axis", required=True, choices=["memory", "threshold", "timeout_fn", "filter_size"])
    sweep_parser.add_argument("--values", required=True, help="comma separated, e.g. 4K,8K,16K")
    sweep_parser.add_argument("--workers", type=int, default=1)

    generate_parser = commands.add_parser("generate", help="write a synthetic trace to CSV")
    generate_parser.add_argument("--synthetic", required=True, help="synthetic trace spec (YAML)")
    generate_parser.add_argument("--seed", type=int, default=0)
    generate_parser.add_argument("--out", required=True, help="CSV output path")

    serve_parser = commands.add_parser("serve", help="start the collector API")
    serve_parser.add_argument("--host", default=None)
    serve_parser.add_argument("--port", type=int, default=None)
    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    from backend.services.simulation import run

    report = run(build_config(args))
    relax = report.summary["headline_relax"]
    output = {
        "report_hash": report.report_hash,
        "threshold": report.summary["threshold"],
        "scores": report.summary["scores"],
        "headline": {"relax": relax, **report.scores(relax)},
        "digests": report.summary["digests"],
        "learning_phase": report.summary["learning_phase"],
        "files": report.files,
    }
    print(json.dumps(output, indent=2))
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    from backend.services.simulation import sweep, sweep_csv

    values: List[str] = [v for v in (part.strip() for part in args.values.split(",")) if v]
    rows = sweep(build_config(args), args.axis, values, workers=args.workers)
    sys.stdout.write(sweep_csv(rows))
    return 0


def _cmd_generate(args: argparse.Namespace) -> int:
    from backend.services.traces import generate, load_synthetic_spec, write_csv

    count = write_csv(generate(load_synthetic_spec(args.synthetic), args.seed), args.out)
    logger.info(f"wrote {count} records to {args.out}")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    settings = get_settings()
    uvicorn.run("backend.main:app", host=args.host or settings.host, port=args.port or settings.port)
    return 0


COMMANDS = {
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "generate": _cmd_generate,
    "serve": _cmd_serve,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: invalid configuration\n{exc}", file=sys.stderr)
    except (ElasticTrieError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
