"""
Detection events pushed from the trie towards the collector.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional

from .prefix import Prefix


class EventKind(Enum):
    """Kinds of push notification."""
    HHH = "HHH"
    HH = "HH"
    CHANGE = "Change"
    SUPERSPREADER = "Superspreader"


@dataclass(frozen=True, slots=True)
class DetectionEvent:
    """
    A push notification for one detected prefix.

    ``volume`` is the sum of both node counters at report time. Change
    events carry the signed churn counter in ``counter`` and its magnitude
    in ``volume``.
    """

    kind: EventKind
    prefix: Prefix
    volume: int
    timestamp: int
    window_start: int
    counter: Optional[int] = None

    def to_dict(self) -> Dict:
        return {
            "kind": self.kind.value,
            "prefix": str(self.prefix),
            "volume": self.volume,
            "ts": self.timestamp,
            "window_start": self.window_start,
        }
