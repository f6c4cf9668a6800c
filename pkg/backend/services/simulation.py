"""
Simulation Harness
Wires a trace through the trie into a digest sink, scores the reported
events against the exact oracle and writes the run report; sweeps repeat a
run over one parameter axis.
"""

import csv
import hashlib
import io
import json
import logging
import threading
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

from backend.config import Mode, RunConfig, get_settings, parse_size
from backend.core.change_detector import ChangeDetector
from backend.core.errors import ConfigError
from backend.core.events import EventKind
from backend.core.lpm import LpmTables, default_budget
from backend.core.notify import Digest, DigestSink
from backend.core.prefix import Prefix
from backend.core.spread_filter import BloomFilter
from backend.core.trie import US_PER_SECOND, CountMode, ElasticTrie, TrieConfig, parse_timeout_fn

from .oracle import (
    WindowScore,
    WindowTruth,
    average,
    exact_spreaders,
    hh_from_volumes,
    hhh_from_volumes,
    prefix_volumes,
    reported_by_window,
    score_windows,
)
from .traces import (
    BUILTIN_HIERARCHY,
    PacketRecord,
    ReadStats,
    SyntheticSpec,
    generate,
    open_trace,
    prefetch,
)

logger = logging.getLogger(__name__)

SCORE_COLUMNS = ["window", "mode", "relax", "recall", "precision", "reported", "truth"]
TIMESERIES_COLUMNS = ["ts_us", "depth", "node_count", "memory_bits", "change_average"]
SWEEP_AXES = {
    "memory": "memory_bytes",
    "threshold": "threshold",
    "timeout_fn": "timeout_fn",
    "filter_size": "filter_bytes",
}
RELAX_LEVELS = (0, 2)
BUILTIN_DURATION_US = 8 * US_PER_SECOND


def seconds_to_us(seconds: float) -> int:
    return max(1, int(round(seconds * US_PER_SECOND)))


@dataclass
class RunReport:
    """Everything one run produced."""
    run_id: str
    summary: Dict
    window_scores: List[WindowScore]
    timeseries: List[Dict]
    digests: List[Digest]
    report_hash: str
    files: Dict[str, str] = field(default_factory=dict)

    def scores(self, relax: int) -> Dict[str, float]:
        return _scores(self.window_scores, relax)

    def reported(self, kind: Optional[EventKind] = None) -> List[Digest]:
        return [d for d in self.digests if kind is None or d.event.kind is kind]


# ============ Threshold conversion ============

def resolve_threshold(config: RunConfig, spec: Optional[SyntheticSpec]) -> Tuple[int, Dict]:
    """
    Absolute per-window threshold for the level-0 window.

    A percentage is taken of ``nominal_rate x active timeout``; the nominal
    rate defaults to the synthetic packet rate (times the mean length in
    byte mode).

    Returns:
        The threshold and a note describing the conversion
    """
    value, percent = config.threshold_value
    if not percent:
        return max(1, int(round(value))), {"given": config.threshold, "absolute": True}

    rate = config.nominal_rate
    if rate is None and spec is not None:
        rate = spec.rate_pps
        if config.count_mode == CountMode.BYTES:
            rate *= (spec.length_min + spec.length_max) / 2
    if rate is None:
        raise ConfigError(f"threshold {config.threshold!r} is a percentage; set nominal_rate for trace input")

    threshold = max(1, int(round(rate * config.active_timeout_s * value / 100)))
    unit = "bytes" if config.count_mode == CountMode.BYTES else "packets"
    return threshold, {
        "given": config.threshold,
        "absolute": False,
        "nominal_rate": rate,
        "conversion": f"{value}% of {rate:g} {unit}/s x {config.active_timeout_s:g}s = {threshold}",
    }


# ============ Run ============

def build_trie(config: RunConfig, threshold: int) -> ElasticTrie:
    """Trie, tables, filter and detector for ``config``."""
    scale = config.scale_thresholds
    if scale is None:
        scale = config.threshold_value[1]
    trie_config = TrieConfig.build(
        threshold=threshold,
        active_timeout=seconds_to_us(config.active_timeout_s),
        inactive_timeout=seconds_to_us(config.inactive_timeout_s),
        timeout_y=parse_timeout_fn(config.timeout_fn),
        scale_thresholds=scale,
        count_mode=config.count_mode,
        report_hh_on_expand=config.report_hh_on_expand,
        max_depth=config.max_depth,
    )
    budget = None
    if config.memory_bytes is not None:
        budget = default_budget(config.memory_bytes * 8, config.max_depth, config.identity_max_level)
    tables = LpmTables(budget, config.max_depth)

    spread_filter = None
    if config.mode != Mode.HHH:
        spread_filter = BloomFilter.from_bytes(config.filter_bytes, config.filter_hashes)

    window_us = (seconds_to_us(config.change_window_s) if config.change_window_s
                 else trie_config.active_timeout_per_level[0])
    tick_us = seconds_to_us(config.tick_s) if config.tick_s else None
    detector = ChangeDetector(config.alarm_threshold, window_us, tick_us)
    return ElasticTrie(trie_config, tables, spread_filter, detector)


def _records(config: RunConfig, spec: Optional[SyntheticSpec], stats: ReadStats) -> Iterator[PacketRecord]:
    if spec is not None:
        records = generate(spec, config.seed)
    else:
        records = open_trace(config.trace, config.allow_reorder, config.reorder_window, stats)
    return prefetch(records) if config.prefetch else records


def _window_truth(window: int, packets: List[PacketRecord], config: RunConfig,
                  threshold: int, key: str, element: str) -> WindowTruth:
    truth = WindowTruth(window)
    if config.mode == Mode.HHH:
        volumes = prefix_volumes(packets, config.max_depth, key, config.count_mode)
        truth.hhh_set = hhh_from_volumes(volumes, threshold)
        truth.hh_set = hh_from_volumes(volumes, threshold)
    else:
        truth.spreader_set = exact_spreaders(packets, threshold, config.max_depth, key, element)
    return truth


def _planted(config: RunConfig, spec: Optional[SyntheticSpec]) -> List[Prefix]:
    if spec is None:
        return []
    if config.mode == Mode.HHH:
        return [p.ancestor(min(p.length, config.max_depth)) for p in spec.planted_prefixes()]
    if config.mode == Mode.SPREAD:
        return [Prefix.parse(s.source).ancestor(min(spec.address_bits, config.max_depth)) for s in spec.spreaders]
    return []


def _csv_text(columns: Sequence[str], rows: List[Dict]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buffer.getvalue()


def run(config: RunConfig, run_id: str = "run") -> RunReport:
    """
    One deterministic end-to-end run.

    Events are scored per truth window of the level-0 active timeout; warmup
    windows and the last full window are left out of the averages, a
    trailing partial window is dropped.

    Raises:
        ConfigError: invalid configuration, before any packet is processed
        TraceFormatError: malformed trace input
        ClockError: timestamps going backwards
    """
    spec = config.resolve_synthetic()
    threshold, threshold_note = resolve_threshold(config, spec)
    trie = build_trie(config, threshold)
    window_us = seconds_to_us(config.active_timeout_s)
    key, element = ("dst", "src") if config.mode == Mode.DDOS_VICTIM else ("src", "dst")
    spread = config.mode != Mode.HHH
    byte_mode = config.count_mode == CountMode.BYTES

    report_dir = Path(config.report_dir) if config.report_dir else None
    events_path = config.events_out or (str(report_dir / "events.jsonl") if report_dir else None)
    sink = DigestSink(config.sink_capacity, events_path)
    detector = trie.change_detector
    logger.info(f"{run_id}: mode={config.mode.value} threshold={threshold} t_A={window_us}us "
                f"memory={config.memory_bytes or 'unbounded'}")

    read_stats = ReadStats()
    truths: List[WindowTruth] = []
    window_packets: List[PacketRecord] = []
    current_window = 0
    timeseries: List[Dict] = []
    next_tick = 0
    last_ts = -1

    def sample(ts: int) -> None:
        timeseries.append({
            "ts_us": ts,
            "depth": trie.depth(),
            "node_count": trie.node_count(),
            "memory_bits": trie.memory_bits(),
            "change_average": round(float(detector.moving_average(ts)), 6),
        })

    with sink:
        for record in _records(config, spec, read_stats):
            window = record.ts // window_us
            while window > current_window:
                truths.append(_window_truth(current_window, window_packets, config, threshold, key, element))
                window_packets = []
                current_window += 1
            window_packets.append(record)
            while record.ts >= next_tick:
                sample(next_tick)
                next_tick += detector.tick_us

            weight = record.length if byte_mode else 1
            item = getattr(record, element) if spread else None
            for event in trie.process_packet(getattr(record, key), record.ts, weight, item):
                sink.emit(event)
            last_ts = record.ts

    if spec is not None:
        duration_us = int(spec.duration_s * US_PER_SECOND)
    elif config.trace == BUILTIN_HIERARCHY:
        duration_us = BUILTIN_DURATION_US
    else:
        duration_us = last_ts + 1
    full_windows = duration_us // window_us
    if current_window < full_windows and window_packets:
        truths.append(_window_truth(current_window, window_packets, config, threshold, key, element))
    truths = [t for t in truths if t.window < full_windows]

    digests = sink.dump()
    reported = reported_by_window(digests, trie.keep_kind, window_us)
    window_scores: List[WindowScore] = []
    for relax in RELAX_LEVELS:
        window_scores.extend(score_windows(reported, truths, trie.keep_kind, relax,
                                           config.warmup_windows, full_windows - 1))

    first_reports: Dict[Prefix, int] = {}
    for digest in digests:
        event = digest.event
        if event.kind is trie.keep_kind and event.prefix not in first_reports:
            first_reports[event.prefix] = event.timestamp
    learning = {}
    for prefix in _planted(config, spec):
        ts = first_reports.get(prefix)
        learning[str(prefix)] = {"first_report_us": ts, "window": None if ts is None else ts // window_us}
    windows_seen = [entry["window"] for entry in learning.values()]
    learning_window = max(windows_seen) if windows_seen and None not in windows_seen else None

    filter_stats = None
    if trie.spread_filter is not None:
        bloom = trie.spread_filter
        filter_stats = {
            "size_bits": bloom.size,
            "hashes": bloom.hashes,
            "inserted": bloom.inserted,
            "fill_ratio": round(bloom.fill_ratio(), 4),
            "false_positive_rate": round(bloom.false_positive_rate(), 4),
        }

    summary = {
        "mode": config.mode.value,
        "config": config.model_dump(mode="json", exclude={"events_out", "report_dir"}),
        "threshold": {
            **threshold_note,
            "base": threshold,
            "per_level": list(trie.config.threshold_per_level),
        },
        "active_timeout_per_level_us": list(trie.config.active_timeout_per_level),
        "trace": {
            "records": trie.stats.packets,
            "skipped": read_stats.skipped,
            "truncated": read_stats.truncated,
            "duration_us": duration_us,
            "full_windows": full_windows,
        },
        "scored_windows": [config.warmup_windows, max(config.warmup_windows, full_windows - 1)],
        "scores": {f"relax{relax}": _scores(window_scores, relax) for relax in RELAX_LEVELS},
        "headline_relax": config.relax,
        "trie": trie.get_stats(),
        "digests": sink.get_stats(),
        "change": {
            "alarms": detector.alarms,
            "expansions": detector.expansions,
            "collapses": detector.collapses,
            "counter": detector.counter,
        },
        "filter": filter_stats,
        "learning_phase": {"planted": learning, "window": learning_window},
    }

    score_rows = [
        {"window": row.window, "mode": config.mode.value, "relax": row.relax,
         "recall": round(row.recall, 6), "precision": round(row.precision, 6),
         "reported": row.reported, "truth": row.truth}
        for row in window_scores
    ]
    events_text = "".join(digest.to_json() + "\n" for digest in digests)
    scores_text = _csv_text(SCORE_COLUMNS, score_rows)
    timeseries_text = _csv_text(TIMESERIES_COLUMNS, timeseries)
    digest = hashlib.sha256()
    for part in (events_text, scores_text, timeseries_text, json.dumps(summary, sort_keys=True)):
        digest.update(part.encode("utf-8"))
    report_hash = digest.hexdigest()
    summary["report_hash"] = report_hash

    files: Dict[str, str] = {}
    if events_path:
        files["events"] = events_path
    if report_dir is not None:
        report_dir.mkdir(parents=True, exist_ok=True)
        (report_dir / "scores.csv").write_text(scores_text, encoding="utf-8")
        (report_dir / "timeseries.csv").write_text(timeseries_text, encoding="utf-8")
        files.update({
            "scores": str(report_dir / "scores.csv"),
            "timeseries": str(report_dir / "timeseries.csv"),
            "summary": str(report_dir / "summary.json"),
        })
        (report_dir / "summary.json").write_text(
            json.dumps({**summary, "files": files}, indent=2, sort_keys=True), encoding="utf-8"
        )

    headline = summary["scores"][f"relax{config.relax}"]
    logger.info(f"{run_id}: {trie.stats.packets} packets, {sink.recorded} digests, "
                f"recall={headline['recall']} precision={headline['precision']} (relax {config.relax})")
    return RunReport(
        run_id=run_id,
        summary=summary,
        window_scores=window_scores,
        timeseries=timeseries,
        digests=digests,
        report_hash=report_hash,
        files=files,
    )


def _scores(rows: List[WindowScore], relax: int) -> Dict[str, float]:
    return average([row for row in rows if row.relax == relax])


# ============ Sweep ============

def parse_axis_value(axis: str, value: str):
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {', '.join(SWEEP_AXES)}")
    if axis in ("memory", "filter_size"):
        return parse_size(value)
    if axis == "timeout_fn":
        parse_timeout_fn(value)
        return value.strip().lower().replace("f_", "f:")
    return value


def _run_point(payload: Tuple[str, str, Dict]) -> Dict:
    axis, label, data = payload
    report = run(RunConfig.model_validate(data), run_id=f"sweep-{axis}-{label}")
    scores = report.summary["scores"]
    return {
        "axis": axis,
        "value": label,
        "recall_relax0": scores["relax0"]["recall"],
        "precision_relax0": scores["relax0"]["precision"],
        "recall_relax2": scores["relax2"]["recall"],
        "precision_relax2": scores["relax2"]["precision"],
        "learning_phase_window": report.summary["learning_phase"]["window"],
        "events": report.summary["digests"]["recorded"],
        "peak_memory_bits": max((row["memory_bits"] for row in report.timeseries), default=0),
        "report_hash": report.report_hash,
    }


SWEEP_COLUMNS = [
    "axis", "value", "recall_relax0", "precision_relax0", "recall_relax2", "precision_relax2",
    "learning_phase_window", "events", "peak_memory_bits", "report_hash",
]


def sweep(base: RunConfig, axis: str, values: Sequence[str], workers: int = 1) -> List[Dict]:
    """
    One run per axis value with the base seed; one row per value, in order.

    Points run in separate processes when ``workers > 1``. With a base
    ``report_dir`` each point reports into its own subdirectory and the
    table is written as ``sweep_<axis>.csv``.

    Raises:
        ConfigError: unknown axis, no values or an invalid value
    """
    if not values:
        raise ConfigError(f"sweep over {axis!r} needs at least one value")
    field_name = SWEEP_AXES.get(axis)
    if field_name is None:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {', '.join(SWEEP_AXES)}")

    payloads = []
    for value in values:
        label = str(value).strip()
        data = base.model_dump()
        data[field_name] = parse_axis_value(axis, label)
        data["events_out"] = None
        data["report_dir"] = str(Path(base.report_dir) / f"{axis}-{label.replace(':', '_')}") if base.report_dir else None
        RunConfig.model_validate(data)
        payloads.append((axis, label, data))

    logger.info(f"sweep {axis}: {len(payloads)} points, {workers} worker(s)")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            rows = list(executor.map(_run_point, payloads))
    else:
        rows = [_run_point(payload) for payload in payloads]

    if base.report_dir:
        path = Path(base.report_dir) / f"sweep_{axis}.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(sweep_csv(rows), encoding="utf-8")
    return rows


def sweep_csv(rows: List[Dict]) -> str:
    return _csv_text(SWEEP_COLUMNS, rows)


# ============ Run registry ============

class RunRegistry:
    """
    Runs launched through the collector, kept in memory by id.

    A run without its own ``report_dir`` writes its report files under
    ``report_root/<run_id>``; ``report_root`` defaults to the
    ``ELASTIC_TRIE_REPORT_DIR`` setting.

    Usage:
        registry = get_registry()
        report = registry.submit(config)
        registry.get(report.run_id)
    """

    def __init__(self, report_root: Optional[Path] = None):
        self.report_root = Path(report_root) if report_root is not None else Path(get_settings().report_dir)
        self._runs: Dict[str, RunReport] = {}
        self._lock = threading.Lock()
        self._counter = 0

    def submit(self, config: RunConfig) -> RunReport:
        with self._lock:
            self._counter += 1
            run_id = f"run-{self._counter:04d}"
        if config.report_dir is None:
            config = config.with_overrides({"report_dir": str(self.report_root / run_id)})
        report = run(config, run_id=run_id)
        with self._lock:
            self._runs[run_id] = report
        return report

    def get(self, run_id: str) -> Optional[RunReport]:
        return self._runs.get(run_id)

    def list(self) -> List[RunReport]:
        return list(self._runs.values())

    def clear(self) -> None:
        with self._lock:
            self._runs.clear()
            self._counter = 0


_registry_instance: Optional[RunRegistry] = None


def get_registry() -> RunRegistry:
    """Get or create the singleton run registry."""
    global _registry_instance
    if _registry_instance is None:
        _registry_instance = RunRegistry()
    return _registry_instance
