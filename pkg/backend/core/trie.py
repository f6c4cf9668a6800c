"""
Elastic Trie
Self-adjusting prefix trie that refines towards heavy prefixes and pushes
HHH / HH / superspreader events while packets stream through it.
"""

import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from .change_detector import ChangeDetector, StructureChange
from .errors import ClockError, ConfigError
from .events import DetectionEvent, EventKind
from .lpm import LEVELS, InsertStatus, LpmTables, NodeRecord
from .prefix import KEY_BITS, Prefix, key_bit
from .spread_filter import BloomFilter

logger = logging.getLogger(__name__)

COUNTER_MAX = (1 << 32) - 1
TIMESTAMP_LIMIT = 1 << 48
US_PER_SECOND = 1_000_000


class CountMode(str, Enum):
    """What a node counter accumulates."""
    PACKETS = "packets"
    BYTES = "bytes"


class Action(Enum):
    """The five per-packet outcomes."""
    INVALIDATE = "invalidate"
    EXPAND = "expand"
    KEEP = "keep"
    COLLAPSE = "collapse"
    UPDATE = "update"


@dataclass(frozen=True, slots=True)
class Classification:
    action: Action
    side: int = 0


def active_timeout_fn(y: int, x: int, base_ta: int) -> int:
    """
    Per-level active timeout.

    Returns ``(y / (32 - x)) * base_ta`` while that ratio is below 1 and
    ``base_ta`` otherwise. Level 32 always gets ``base_ta``. Durations are
    integer microseconds, rounded down.

    Examples:
        >>> active_timeout_fn(1, 0, 20_000_000)
        625000
        >>> active_timeout_fn(16, 16, 20_000_000)
        20000000
    """
    if not 1 <= y <= KEY_BITS:
        raise ConfigError(f"timeout function parameter y={y} outside 1..32")
    if not 0 <= x <= KEY_BITS:
        raise ConfigError(f"level {x} outside 0..32")
    remaining = KEY_BITS - x
    if remaining == 0 or y >= remaining:
        return base_ta
    return base_ta * y // remaining


def parse_timeout_fn(text: str) -> Optional[int]:
    """``"fixed"`` -> None, ``"f:8"`` -> 8."""
    text = text.strip().lower()
    if text == "fixed":
        return None
    if text.startswith("f:") or text.startswith("f_"):
        try:
            y = int(text[2:])
        except ValueError as exc:
            raise ConfigError(f"invalid timeout function {text!r}") from exc
        if not 1 <= y <= KEY_BITS:
            raise ConfigError(f"timeout function parameter y={y} outside 1..32")
        return y
    raise ConfigError(f"invalid timeout function {text!r}; expected 'fixed' or 'f:<y>'")


class TrieConfig(BaseModel):
    """
    Per-level thresholds and timeouts plus counting options.

    Durations are integer microseconds. Use ``TrieConfig.build`` to derive
    the 33-entry arrays from a single threshold and timeout.
    """

    model_config = ConfigDict(frozen=True)

    threshold_per_level: Tuple[int, ...]
    active_timeout_per_level: Tuple[int, ...]
    inactive_timeout: int
    count_mode: CountMode = CountMode.PACKETS
    report_hh_on_expand: bool = False
    max_depth: int = KEY_BITS

    @field_validator("threshold_per_level")
    @classmethod
    def _check_thresholds(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if len(value) != LEVELS:
            raise ValueError(f"threshold_per_level needs {LEVELS} entries, got {len(value)}")
        if any(t <= 0 for t in value):
            raise ValueError("every per-level threshold must be positive")
        return value

    @field_validator("active_timeout_per_level")
    @classmethod
    def _check_timeouts(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if len(value) != LEVELS:
            raise ValueError(f"active_timeout_per_level needs {LEVELS} entries, got {len(value)}")
        if any(t <= 0 for t in value):
            raise ValueError("every active timeout must be positive")
        return value

    @field_validator("max_depth")
    @classmethod
    def _check_depth(cls, value: int) -> int:
        if not 0 <= value <= KEY_BITS:
            raise ValueError(f"max_depth {value} outside 0..32")
        return value

    @model_validator(mode="after")
    def _check_ordering(self) -> "TrieConfig":
        longest = max(self.active_timeout_per_level)
        if longest > self.inactive_timeout:
            raise ValueError(
                f"active timeout {longest}us exceeds inactive timeout {self.inactive_timeout}us"
            )
        return self

    @classmethod
    def build(
        cls,
        threshold: int,
        active_timeout: int,
        inactive_timeout: int,
        timeout_y: Optional[int] = None,
        scale_thresholds: bool = False,
        count_mode: CountMode = CountMode.PACKETS,
        report_hh_on_expand: bool = False,
        max_depth: int = KEY_BITS,
    ) -> "TrieConfig":
        """
        Expand one threshold and one active timeout to all levels.

        Args:
            threshold: Volume threshold for a full active window
            active_timeout: Base active timeout in microseconds
            inactive_timeout: Inactive timeout in microseconds
            timeout_y: Variable-timeout parameter, None for a fixed timeout
            scale_thresholds: Scale each level's threshold with its timeout
        """
        if threshold <= 0:
            raise ConfigError("threshold must be positive")
        if active_timeout <= 0:
            raise ConfigError("active timeout must be positive")
        timeouts = [
            active_timeout if timeout_y is None else active_timeout_fn(timeout_y, level, active_timeout)
            for level in range(LEVELS)
        ]
        if scale_thresholds:
            thresholds = [max(1, round(threshold * t / active_timeout)) for t in timeouts]
        else:
            thresholds = [threshold] * LEVELS
        return cls(
            threshold_per_level=tuple(thresholds),
            active_timeout_per_level=tuple(max(1, t) for t in timeouts),
            inactive_timeout=inactive_timeout,
            count_mode=count_mode,
            report_hh_on_expand=report_hh_on_expand,
            max_depth=max_depth,
        )


def classify_action(node: NodeRecord, level: int, pkt_ts: int, pkt_subbit: int,
                    cfg: TrieConfig, weight: int = 1) -> Classification:
    """
    Pick the single action for a packet whose LPM result is ``node``.

    The ranges over the node's age are disjoint: inactive first, then an
    expired active window, then the threshold check that includes this
    packet's weight.
    """
    if pkt_ts < node.ts:
        raise ClockError(f"packet timestamp {pkt_ts} precedes node timestamp {node.ts}")
    age = pkt_ts - node.ts
    if age >= cfg.inactive_timeout:
        return Classification(Action.INVALIDATE)
    threshold = cfg.threshold_per_level[level]
    if age >= cfg.active_timeout_per_level[level]:
        if node.total >= threshold:
            return Classification(Action.KEEP)
        return Classification(Action.COLLAPSE)
    if node.counter(pkt_subbit) + weight >= threshold:
        return Classification(Action.EXPAND, pkt_subbit)
    return Classification(Action.UPDATE, pkt_subbit)


@dataclass
class TrieStats:
    """Running tallies, one action per processed packet."""
    packets: int = 0
    updates: int = 0
    expansions: int = 0
    keeps: int = 0
    collapses: int = 0
    invalidations: int = 0
    root_resets: int = 0
    blocked_expansions: int = 0
    table_full: int = 0
    events: Dict[str, int] = field(default_factory=dict)

    def as_dict(self) -> Dict:
        return asdict(self)


class ElasticTrie:
    """
    The Elastic Trie.

    Every packet is matched to its longest stored prefix and causes exactly
    one of five actions:
    - Invalidate: the node was idle for the inactive timeout and is dropped
    - Expand: a child counter reached the threshold, so the child is stored
    - Keep: the active window expired above threshold, the node is reported
    - Collapse: the window expired below threshold, the node folds into its parent
    - Update: otherwise, the matching child counter grows

    The root is permanent; where it would be invalidated or collapsed it is
    reset in place instead.

    Usage:
        trie = ElasticTrie(TrieConfig.build(threshold=100, active_timeout=2_000_000,
                                            inactive_timeout=30_000_000))
        for record in packets:
            for event in trie.process_packet(record.src, record.ts):
                sink.emit(event)
    """

    def __init__(
        self,
        config: TrieConfig,
        tables: Optional[LpmTables] = None,
        spread_filter: Optional[BloomFilter] = None,
        change_detector: Optional[ChangeDetector] = None,
    ):
        self.config = config
        self.tables = tables or LpmTables(max_depth=config.max_depth)
        if self.tables.max_depth != config.max_depth:
            raise ConfigError("LPM tables and trie config disagree on max_depth")
        self.spread_filter = spread_filter
        self.change_detector = change_detector
        self.keep_kind = EventKind.SUPERSPREADER if spread_filter is not None else EventKind.HHH
        self.stats = TrieStats()
        self.last_classification: Optional[Classification] = None
        self._last_ts = 0
        self._filter_epoch = 0
        self._pending: List[DetectionEvent] = []

    # ------------------------------------------------------------------
    # Packet path
    # ------------------------------------------------------------------

    def process_packet(self, key: int, pkt_ts: int, weight: int = 1,
                       element: Optional[int] = None) -> List[DetectionEvent]:
        """
        Run one packet through lookup, classification and the chosen action.

        Args:
            key: 32-bit flow key the trie is built over
            pkt_ts: Microseconds since trace start
            weight: 1 in packet mode, the IP length in byte mode
            element: Spread mode only, the value whose distinctness is counted

        Returns:
            Events emitted by this packet, in emission order
        """
        self._check_clock(pkt_ts)
        prefix, node = self.tables.lookup_lpm(key)

        if self.spread_filter is not None:
            if element is None:
                raise ConfigError("spread mode needs a filter element for every packet")
            self._roll_filter_epoch(pkt_ts)
            weight = 1 if self.spread_filter.test_and_set(prefix, element) else 0

        decision = classify_action(node, prefix.length, pkt_ts, key_bit(key, prefix.length),
                                   self.config, weight)
        self.last_classification = decision
        self.stats.packets += 1

        if decision.action is Action.INVALIDATE:
            self.apply_invalidate(prefix, pkt_ts)
        elif decision.action is Action.EXPAND:
            if prefix.length >= self.config.max_depth:
                self.stats.updates += 1
                self.stats.blocked_expansions += 1
                self._account(prefix, node, key, weight)
            else:
                crossed = node.counter(decision.side) + weight
                window_start = node.ts
                target = self.apply_expand(prefix, decision.side, pkt_ts)
                if self.config.report_hh_on_expand:
                    self._emit(EventKind.HH, prefix.child(decision.side), crossed, pkt_ts, window_start)
                self._account(target, self.tables.get(target), key, weight)
        elif decision.action is Action.KEEP:
            self._pending.append(self.apply_keep(prefix, pkt_ts))
            self._account(prefix, node, key, weight)
        elif decision.action is Action.COLLAPSE:
            target = self.apply_collapse(prefix, pkt_ts)
            self._account(target, self.tables.get(target), key, weight)
        else:
            self.stats.updates += 1
            self._account(prefix, node, key, weight)

        events, self._pending = self._pending, []
        return events

    def apply_invalidate(self, prefix: Prefix, pkt_ts: Optional[int] = None) -> None:
        """Drop an idle node; descendants stay and no parent is touched."""
        if prefix.is_root:
            self.tables.root.reset(self._last_ts if pkt_ts is None else pkt_ts)
            self.stats.root_resets += 1
            return
        self.tables.delete(prefix)
        self.stats.invalidations += 1

    def apply_expand(self, prefix: Prefix, side: int, pkt_ts: int) -> Prefix:
        """
        Store the child on ``side`` and clear the parent counter that triggered it.

        Returns the prefix that now owns the packet: the child, or ``prefix``
        itself when the child table is full. The full-table case counts as an
        update at ``prefix``.
        """
        node = self._require(prefix)
        if side:
            node.c1 = 0
        else:
            node.c0 = 0
        child = prefix.child(side)
        if self.tables.insert(child, NodeRecord(ts=pkt_ts)) is InsertStatus.TABLE_FULL:
            self.stats.table_full += 1
            self.stats.updates += 1
            return prefix
        self.stats.expansions += 1
        self._structure_changed(StructureChange.EXPAND, pkt_ts, child)
        return child

    def apply_keep(self, prefix: Prefix, pkt_ts: int) -> DetectionEvent:
        """Report the node and open a fresh window for it."""
        node = self._require(prefix)
        event = self._event(self.keep_kind, prefix, node.total, pkt_ts, node.ts)
        node.reset(pkt_ts)
        self.stats.keeps += 1
        return event

    def apply_collapse(self, prefix: Prefix, pkt_ts: int) -> Prefix:
        """
        Fold the node into its one-bit-shorter parent.

        The parent is inserted if absent or renewed if present, both with
        zeroed counters. If the parent table is full the packet goes to the
        nearest stored ancestor, which is left as is.
        """
        if prefix.is_root:
            self.tables.root.reset(pkt_ts)
            self.stats.root_resets += 1
            return prefix

        self.tables.delete(prefix)
        self.stats.collapses += 1
        self._structure_changed(StructureChange.COLLAPSE, pkt_ts, prefix)

        parent = prefix.parent()
        record = self.tables.get(parent)
        if record is not None:
            record.reset(pkt_ts)
            return parent
        if self.tables.insert(parent, NodeRecord(ts=pkt_ts)) is InsertStatus.OK:
            return parent

        self.stats.table_full += 1
        for length in range(parent.length - 1, -1, -1):
            ancestor = parent.ancestor(length)
            if self.tables.get(ancestor) is not None:
                return ancestor
        return Prefix.root()

    # ------------------------------------------------------------------
    # Introspection
    # ------------------------------------------------------------------

    def depth(self) -> int:
        return self.tables.depth()

    def node_count(self) -> int:
        return self.tables.node_count()

    def memory_bits(self) -> int:
        return self.tables.memory_bits()

    def snapshot(self) -> List[Dict]:
        """Stored nodes, shortest prefix first."""
        return [
            {"prefix": str(prefix), "c0": record.c0, "c1": record.c1, "ts": record.ts}
            for prefix, record in sorted(self.tables.items(), key=lambda item: (item[0].length, item[0].bits))
        ]

    def get_stats(self) -> Dict:
        stats = self.stats.as_dict()
        stats["nodes"] = self.node_count()
        stats["depth"] = self.depth()
        stats["memory_bits"] = self.memory_bits()
        return stats

    # ------------------------------------------------------------------
    # Internals
    # ------------------------------------------------------------------

    def _check_clock(self, pkt_ts: int) -> None:
        if not 0 <= pkt_ts < TIMESTAMP_LIMIT:
            raise ClockError(f"timestamp {pkt_ts} outside the 48-bit microsecond range")
        if pkt_ts < self._last_ts:
            raise ClockError(f"packet timestamp {pkt_ts} precedes previous packet at {self._last_ts}")
        self._last_ts = pkt_ts

    def _roll_filter_epoch(self, pkt_ts: int) -> None:
        epoch = pkt_ts // self.config.active_timeout_per_level[0]
        if epoch != self._filter_epoch:
            self.spread_filter.clear()
            self._filter_epoch = epoch

    def _require(self, prefix: Prefix) -> NodeRecord:
        record = self.tables.get(prefix)
        if record is None:
            raise KeyError(f"{prefix} is not stored")
        return record

    def _account(self, prefix: Prefix, record: NodeRecord, key: int, weight: int) -> None:
        if not weight:
            return
        if key_bit(key, prefix.length):
            record.c1 = min(record.c1 + weight, COUNTER_MAX)
        else:
            record.c0 = min(record.c0 + weight, COUNTER_MAX)

    def _structure_changed(self, kind: StructureChange, ts: int, prefix: Prefix) -> None:
        if self.change_detector is None:
            return
        alarm = self.change_detector.on_structure_change(kind, ts, prefix)
        if alarm is not None:
            self._count_event(alarm.kind)
            self._pending.append(alarm)

    def _event(self, kind: EventKind, prefix: Prefix, volume: int, ts: int, window_start: int) -> DetectionEvent:
        self._count_event(kind)
        return DetectionEvent(kind=kind, prefix=prefix, volume=volume, timestamp=ts, window_start=window_start)

    def _emit(self, kind: EventKind, prefix: Prefix, volume: int, ts: int, window_start: int) -> None:
        self._pending.append(self._event(kind, prefix, volume, ts, window_start))

    def _count_event(self, kind: EventKind) -> None:
        self.stats.events[kind.value] = self.stats.events.get(kind.value, 0) + 1
