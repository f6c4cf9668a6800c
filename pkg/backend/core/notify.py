"""
Digest channel from the trie to the collector.
Emission never blocks packet processing: a full buffer drops the digest
and counts the drop.
"""

import json
import logging
import threading
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Deque, Dict, List, Optional, TextIO, Union

from .errors import ConfigError
from .events import DetectionEvent

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class Digest:
    """One pushed event with its per-run sequence number."""
    event: DetectionEvent
    sequence: int
    emitted_at: int

    def to_dict(self) -> Dict:
        payload = self.event.to_dict()
        payload["seq"] = self.sequence
        if self.event.counter is not None:
            payload["counter"] = self.event.counter
        return payload

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


class DigestSink:
    """
    Bounded single-producer/single-consumer digest buffer.

    Every emit consumes a sequence number, so drops show up as gaps.
    ``dump`` copies the buffered digests; ``drain`` hands them to a consumer
    and frees their slots. With ``path`` set, every recorded digest is also
    written as one JSON line.
    """

    def __init__(self, capacity: int = 1_000_000, path: Optional[Union[str, Path]] = None):
        if capacity <= 0:
            raise ConfigError("sink capacity must be positive")
        self.capacity = capacity
        self.path = Path(path) if path else None
        self.emitted = 0
        self.recorded = 0
        self.dropped = 0
        self._buffer: Deque[Digest] = deque()
        self._lock = threading.Lock()
        self._file: Optional[TextIO] = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._file = self.path.open("w", encoding="utf-8")

    def emit(self, event: DetectionEvent) -> Optional[Digest]:
        """Append an event; returns the digest, or None when it was dropped."""
        with self._lock:
            digest = Digest(event=event, sequence=self.emitted, emitted_at=event.timestamp)
            self.emitted += 1
            if len(self._buffer) >= self.capacity:
                self.dropped += 1
                if self.dropped == 1:
                    logger.warning(f"digest buffer full ({self.capacity}); dropping further digests")
                return None
            self._buffer.append(digest)
            self.recorded += 1
            if self._file is not None:
                self._file.write(digest.to_json() + "\n")
            return digest

    def dump(self) -> List[Digest]:
        """Buffered digests in emission order, left in place."""
        with self._lock:
            return list(self._buffer)

    def drain(self, limit: Optional[int] = None) -> List[Digest]:
        """Remove and return up to ``limit`` digests, oldest first."""
        with self._lock:
            count = len(self._buffer) if limit is None else min(limit, len(self._buffer))
            return [self._buffer.popleft() for _ in range(count)]

    def get_stats(self) -> Dict:
        return {
            "emitted": self.emitted,
            "recorded": self.recorded,
            "dropped": self.dropped,
            "buffered": len(self._buffer),
        }

    def close(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None

    def __enter__(self) -> "DigestSink":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
