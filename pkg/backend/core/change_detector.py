"""
Traffic-change detection from trie churn.
Expansions count up, collapses count down; a steady trace keeps the counter
near zero and a regime change pushes it past the alarm threshold.
"""

import logging
from collections import deque
from enum import Enum
from fractions import Fraction
from typing import Deque, List, Optional, Tuple

from .errors import ConfigError
from .events import DetectionEvent, EventKind
from .prefix import Prefix

logger = logging.getLogger(__name__)


class StructureChange(Enum):
    EXPAND = 1
    COLLAPSE = -1


class ChangeDetector:
    """
    Global expand/collapse counter with a threshold alarm and a moving average.

    The counter resets after every alarm. The moving average is the sum of
    counter deltas over the trailing window divided by the number of ticks
    in that window, so a burst of +N inside one window reads N / window_ticks.
    """

    def __init__(self, alarm_threshold: int = 50, window_us: int = 20_000_000,
                 tick_us: Optional[int] = None, history_size: int = 4096):
        """
        Initialize detector.

        Args:
            alarm_threshold: Counter magnitude that raises a Change event
            window_us: Length of the moving-average window
            tick_us: Reporting tick, defaults to a tenth of the window
            history_size: Samples kept in the history ring
        """
        if alarm_threshold <= 0:
            raise ConfigError("alarm threshold must be positive")
        if window_us <= 0:
            raise ConfigError("change window must be positive")
        self.alarm_threshold = alarm_threshold
        self.window_us = window_us
        self.tick_us = tick_us or max(1, window_us // 10)
        if self.tick_us > window_us:
            raise ConfigError("change tick cannot exceed the change window")
        self.window_ticks = max(1, window_us // self.tick_us)

        self.counter = 0
        self.last_reset_ts = 0
        self.alarms = 0
        self.expansions = 0
        self.collapses = 0

        # (tick index, summed delta) for ticks still inside the window
        self._deltas: Deque[List[int]] = deque()
        # (timestamp, counter) samples for reporting
        self.history: Deque[Tuple[int, int]] = deque(maxlen=history_size)

    def on_structure_change(self, kind: StructureChange, ts: int,
                            prefix: Optional[Prefix] = None) -> Optional[DetectionEvent]:
        """
        Record one expansion or collapse.

        Returns a Change event when the counter magnitude reaches the alarm
        threshold; the counter is then reset.
        """
        delta = kind.value
        if kind is StructureChange.EXPAND:
            self.expansions += 1
        else:
            self.collapses += 1
        self.counter += delta
        self._add_delta(ts, delta)
        self.history.append((ts, self.counter))

        if abs(self.counter) < self.alarm_threshold:
            return None

        event = DetectionEvent(
            kind=EventKind.CHANGE,
            prefix=prefix if prefix is not None else Prefix.root(),
            volume=abs(self.counter),
            timestamp=ts,
            window_start=self.last_reset_ts,
            counter=self.counter,
        )
        logger.info(f"change alarm at {ts}us: counter {self.counter} since {self.last_reset_ts}us")
        self.alarms += 1
        self.counter = 0
        self.last_reset_ts = ts
        return event

    def moving_average(self, ts: int) -> Fraction:
        """Mean counter delta per tick over the window ending at ``ts``."""
        self._expire(ts // self.tick_us)
        return Fraction(sum(delta for _, delta in self._deltas), self.window_ticks)

    def _add_delta(self, ts: int, delta: int) -> None:
        tick = ts // self.tick_us
        self._expire(tick)
        if self._deltas and self._deltas[-1][0] == tick:
            self._deltas[-1][1] += delta
        else:
            self._deltas.append([tick, delta])

    def _expire(self, tick: int) -> None:
        oldest = tick - self.window_ticks
        while self._deltas and self._deltas[0][0] <= oldest:
            self._deltas.popleft()
