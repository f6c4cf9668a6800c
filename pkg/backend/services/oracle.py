"""
Exact ground truth and accuracy metrics.
Computes HH / HHH / spreader sets for a window of packets and scores a
reported event stream against them (recall, precision, optional relaxation).
"""

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Set, Tuple

from backend.core.events import EventKind
from backend.core.notify import Digest
from backend.core.prefix import KEY_BITS, Prefix
from backend.core.trie import CountMode

from .traces import PacketRecord


@dataclass
class WindowTruth:
    """Ground truth for one aligned window."""
    window: int
    hh_set: Set[Prefix] = field(default_factory=set)
    hhh_set: Set[Prefix] = field(default_factory=set)
    spreader_set: Set[Prefix] = field(default_factory=set)


@dataclass(frozen=True)
class WindowScore:
    window: int
    relax: int
    recall: float
    precision: float
    reported: int
    truth: int


def prefix_volumes(packets: Iterable[PacketRecord], depth: int, key: str = "src",
                   count_mode: CountMode = CountMode.PACKETS) -> List[Dict[int, int]]:
    """
    Volume of every non-empty prefix, indexed ``volumes[length][value]``.

    ``value`` is the prefix's leading ``length`` bits as an integer.
    """
    leaves: Dict[int, int] = defaultdict(int)
    shift = KEY_BITS - depth
    for packet in packets:
        weight = packet.length if count_mode == CountMode.BYTES else 1
        leaves[getattr(packet, key) >> shift] += weight
    volumes: List[Dict[int, int]] = [dict() for _ in range(depth + 1)]
    volumes[depth] = dict(leaves)
    for length in range(depth - 1, -1, -1):
        level: Dict[int, int] = defaultdict(int)
        for value, volume in volumes[length + 1].items():
            level[value >> 1] += volume
        volumes[length] = dict(level)
    return volumes


def _prefix(value: int, length: int) -> Prefix:
    return Prefix(value << (KEY_BITS - length), length) if length else Prefix.root()


def hh_from_volumes(volumes: List[Dict[int, int]], threshold: int) -> Set[Prefix]:
    return {
        _prefix(value, length)
        for length, level in enumerate(volumes)
        for value, volume in level.items()
        if volume >= threshold
    }


def exact_hh(packets: Iterable[PacketRecord], threshold: int, depth: int, key: str = "src",
             count_mode: CountMode = CountMode.PACKETS) -> Set[Prefix]:
    """Every prefix of length 0..depth whose window volume is at least ``threshold``."""
    return hh_from_volumes(prefix_volumes(packets, depth, key, count_mode), threshold)


def hhh_from_volumes(volumes: List[Dict[int, int]], threshold: int) -> Set[Prefix]:
    """
    Bottom-up HHH pass.

    ``covered`` holds, per prefix, the volume already attributed to HHH at or
    below it; a prefix is HHH when its volume minus its children's covered
    volume still reaches the threshold.
    """
    depth = len(volumes) - 1
    result: Set[Prefix] = set()
    covered: Dict[int, int] = {}
    for length in range(depth, -1, -1):
        next_covered: Dict[int, int] = defaultdict(int)
        for value, volume in volumes[length].items():
            below = covered.get(value << 1, 0) + covered.get((value << 1) | 1, 0) if length < depth else 0
            if volume - below >= threshold:
                result.add(_prefix(value, length))
                next_covered[value] = volume
            elif below:
                next_covered[value] = below
        covered = next_covered
    return result


def exact_hhh(packets: Iterable[PacketRecord], threshold: int, depth: int, key: str = "src",
              count_mode: CountMode = CountMode.PACKETS) -> Set[Prefix]:
    """Prefixes whose volume after excluding HHH descendants is at least ``threshold``."""
    return hhh_from_volumes(prefix_volumes(packets, depth, key, count_mode), threshold)


def exact_spreaders(packets: Iterable[PacketRecord], threshold: int, depth: int,
                    key: str = "src", element: str = "dst") -> Set[Prefix]:
    """
    Hierarchical spreaders over distinct elements.

    A prefix is a spreader when the distinct elements reached by its keys,
    excluding keys already under a spreader descendant, number at least
    ``threshold``. With the defaults, keys are sources and elements are
    destinations.
    """
    shift = KEY_BITS - depth
    uncovered: Dict[int, Set[int]] = defaultdict(set)
    for packet in packets:
        uncovered[getattr(packet, key) >> shift].add(getattr(packet, element))

    result: Set[Prefix] = set()
    for length in range(depth, -1, -1):
        merged: Dict[int, Set[int]] = defaultdict(set)
        for value, elements in uncovered.items():
            if len(elements) >= threshold:
                result.add(_prefix(value, length))
                merged.setdefault(value >> 1, set())
            else:
                merged[value >> 1] |= elements
        if length == 0:
            break
        uncovered = merged
    return result


def score(reported: Iterable[Prefix], truth: Iterable[Prefix], relax_bits: int = 0) -> Tuple[float, float]:
    """
    Recall and precision of ``reported`` against ``truth``.

    A reported prefix matches a truth prefix it equals or covers from at
    most ``relax_bits`` bits above. Matching is one-to-one and greedy, longest
    reported prefix first, preferring the closest truth prefix. Empty
    denominators score 1.
    """
    reported = sorted(set(reported), key=lambda p: (-p.length, p.bits))
    unmatched = set(truth)
    truth_total = len(unmatched)
    matched = 0
    for candidate in reported:
        options = [
            t for t in unmatched
            if candidate.covers(t) and t.length - candidate.length <= relax_bits
        ]
        if not options:
            continue
        best = min(options, key=lambda t: (t.length - candidate.length, t.bits, t.length))
        unmatched.discard(best)
        matched += 1
    recall = matched / truth_total if truth_total else 1.0
    precision = matched / len(reported) if reported else 1.0
    return recall, precision


def window_of(ts: int, window_us: int) -> int:
    return ts // window_us


def reported_by_window(digests: Iterable[Digest], kind: EventKind, window_us: int) -> Dict[int, Set[Prefix]]:
    """Distinct reported prefixes per truth window, keyed by each event's window start."""
    windows: Dict[int, Set[Prefix]] = defaultdict(set)
    for digest in digests:
        event = digest.event
        if event.kind is kind:
            windows[window_of(event.window_start, window_us)].add(event.prefix)
    return windows


def score_windows(reported: Dict[int, Set[Prefix]], truths: List[WindowTruth], kind: EventKind,
                  relax_bits: int, first_window: int = 0,
                  last_window: Optional[int] = None) -> List[WindowScore]:
    """Score each truth window in ``[first_window, last_window)``."""
    rows = []
    for truth in truths:
        if truth.window < first_window or (last_window is not None and truth.window >= last_window):
            continue
        expected = truth.spreader_set if kind is EventKind.SUPERSPREADER else truth.hhh_set
        got = reported.get(truth.window, set())
        recall, precision = score(got, expected, relax_bits)
        rows.append(WindowScore(truth.window, relax_bits, recall, precision, len(got), len(expected)))
    return rows


def average(rows: List[WindowScore]) -> Dict[str, float]:
    if not rows:
        return {"recall": 1.0, "precision": 1.0, "windows": 0}
    return {
        "recall": round(sum(r.recall for r in rows) / len(rows), 6),
        "precision": round(sum(r.precision for r in rows) / len(rows), 6),
        "windows": len(rows),
    }
