"""Tests for the exact oracle and the scoring helpers."""

import random

import pytest

from backend.core.events import DetectionEvent, EventKind
from backend.core.notify import Digest
from backend.core.prefix import Prefix
from backend.core.trie import CountMode
from backend.services.oracle import (
    WindowScore,
    WindowTruth,
    average,
    exact_hh,
    exact_hhh,
    exact_spreaders,
    prefix_volumes,
    reported_by_window,
    score,
    score_windows,
)
from backend.services.traces import HIERARCHY_EXAMPLE_THRESHOLD, PacketRecord, hierarchy_example_trace

from .conftest import bits_key


def _p(bitstring: str) -> Prefix:
    return Prefix.from_bitstring(bitstring)


@pytest.fixture
def one_window():
    return hierarchy_example_trace(windows=1)


# ============ Volumes / HH / HHH ============

def test_prefix_volumes_of_example(one_window):
    volumes = prefix_volumes(one_window, depth=3)
    assert volumes[0] == {0: 50}
    assert volumes[1] == {0: 24, 1: 26}
    assert volumes[2] == {0: 7, 1: 17, 2: 13, 3: 13}
    assert volumes[3][0b010] == 12


def test_prefix_volumes_in_bytes():
    packets = [PacketRecord(0, bits_key("1"), 0, 100), PacketRecord(1, bits_key("0"), 0, 40)]
    volumes = prefix_volumes(packets, depth=1, count_mode=CountMode.BYTES)
    assert volumes[0] == {0: 140}
    assert volumes[1] == {0: 40, 1: 100}


def test_exact_hh_of_example(one_window):
    hh = exact_hh(one_window, HIERARCHY_EXAMPLE_THRESHOLD, depth=3)
    assert hh == {Prefix.root(), _p("0"), _p("1"), _p("01"), _p("10"), _p("11"), _p("010"), _p("100")}


def test_exact_hhh_of_example(one_window):
    hhh = exact_hhh(one_window, HIERARCHY_EXAMPLE_THRESHOLD, depth=3)
    assert hhh == {_p("0"), _p("11"), _p("010"), _p("100")}


def test_hhh_keyed_on_destination():
    packets = [PacketRecord(i, 0, bits_key("1"), 60) for i in range(5)]
    assert exact_hhh(packets, 5, depth=1, key="dst") == {_p("1")}
    assert exact_hhh(packets, 5, depth=1, key="src") == {_p("0")}


def _brute_hh(leaves, threshold, depth):
    totals = {}
    for leaf, v in leaves.items():
        for length in range(depth + 1):
            ancestor = leaf.ancestor(length)
            totals[ancestor] = totals.get(ancestor, 0) + v
    return {prefix for prefix, v in totals.items() if v >= threshold}


def _brute_hhh(leaves, threshold, depth):
    found = set()
    for length in range(depth, -1, -1):
        residual = {}
        for leaf, v in leaves.items():
            if not any(h.covers(leaf) for h in found):
                ancestor = leaf.ancestor(length)
                residual[ancestor] = residual.get(ancestor, 0) + v
        found |= {prefix for prefix, v in residual.items() if v >= threshold}
    return found


def test_matches_brute_force_on_random_windows():
    rng = random.Random(2024)
    depth = 8
    for _ in range(100):
        hot = [rng.getrandbits(depth) for _ in range(3)]
        packets = []
        for i in range(rng.randint(50, 300)):
            value = rng.choice(hot) if rng.random() < 0.5 else rng.getrandbits(depth)
            packets.append(PacketRecord(i, value << (32 - depth), 0, 60))
        leaves = {}
        for packet in packets:
            leaf = Prefix.of(packet.src, depth)
            leaves[leaf] = leaves.get(leaf, 0) + 1
        threshold = rng.randint(10, 40)

        assert exact_hhh(packets, threshold, depth) == _brute_hhh(leaves, threshold, depth)
        assert exact_hh(packets, threshold, depth) == _brute_hh(leaves, threshold, depth)


def _maximal_below(prefix, found):
    below = [h for h in found if h != prefix and prefix.covers(h)]
    return [h for h in below if not any(g != h and g.covers(h) for g in below)]


def test_hhh_satisfies_residual_definition_at_every_prefix():
    rng = random.Random(77)
    depth = 8
    for _ in range(30):
        hot = [rng.getrandbits(depth) for _ in range(4)]
        packets = []
        for i in range(rng.randint(100, 400)):
            value = rng.choice(hot) if rng.random() < 0.6 else rng.getrandbits(depth)
            packets.append(PacketRecord(i, value << (32 - depth), 0, 60))
        threshold = rng.randint(8, 30)
        volumes = prefix_volumes(packets, depth)
        found = exact_hhh(packets, threshold, depth)

        def volume(prefix):
            return volumes[prefix.length].get(prefix.bits >> (32 - prefix.length), 0)

        checked = 0
        for length in range(depth + 1):
            for value in range(1 << length):
                prefix = Prefix.of(value << (32 - length), length)
                residual = volume(prefix) - sum(volume(h) for h in _maximal_below(prefix, found))
                assert (prefix in found) == (residual >= threshold), prefix
                checked += 1
        assert checked == (1 << (depth + 1)) - 1


# ============ Spreaders ============

def test_spreaders_exclude_covered_sources():
    packets = [PacketRecord(0, bits_key("010"), dst, 60) for dst in range(1, 13)]
    packets += [PacketRecord(0, bits_key("011"), dst, 60) for dst in range(1, 6)]
    packets += [PacketRecord(0, bits_key("001"), dst, 60) for dst in range(100, 106)]

    assert exact_spreaders(packets, 10, depth=3) == {_p("010"), _p("0")}


def test_repeated_destinations_do_not_spread():
    packets = [PacketRecord(i, bits_key("1"), 7, 60) for i in range(50)]
    assert exact_spreaders(packets, 2, depth=1) == set()


# ============ Scoring ============

def test_exact_match():
    assert score({_p("010"), _p("11")}, {_p("010"), _p("11")}) == (1.0, 1.0)


def test_half_match():
    assert score({_p("010"), _p("100")}, {_p("010"), _p("111")}) == (0.5, 0.5)


def test_relaxation_accepts_close_ancestor():
    reported, truth = {_p("0")}, {_p("010")}
    assert score(reported, truth, relax_bits=2) == (1.0, 1.0)
    assert score(reported, truth, relax_bits=1) == (0.0, 0.0)
    assert score(reported, truth, relax_bits=0) == (0.0, 0.0)


def test_relaxation_never_accepts_descendants():
    assert score({_p("010")}, {_p("0")}, relax_bits=2) == (0.0, 0.0)


def test_matching_is_one_to_one():
    assert score({_p("0")}, {_p("000"), _p("001")}, relax_bits=2) == (0.5, 1.0)


def test_relaxation_never_lowers_scores():
    rng = random.Random(4242)

    def random_prefixes(count):
        return {Prefix.of(rng.getrandbits(32), rng.randint(0, 6)) for _ in range(count)}

    for _ in range(2000):
        reported, truth = random_prefixes(rng.randint(0, 8)), random_prefixes(rng.randint(0, 8))
        strict_recall, strict_precision = score(reported, truth, relax_bits=0)
        loose_recall, loose_precision = score(reported, truth, relax_bits=2)
        assert loose_recall >= strict_recall
        assert loose_precision >= strict_precision


def test_empty_sets_score_one():
    assert score(set(), set()) == (1.0, 1.0)
    assert score(set(), {_p("1")}) == (0.0, 1.0)
    assert score({_p("1")}, set()) == (1.0, 0.0)


# ============ Windows ============

def _digest(seq, prefix, window_start, kind=EventKind.HHH):
    event = DetectionEvent(kind=kind, prefix=prefix, volume=10, timestamp=window_start + 5, window_start=window_start)
    return Digest(event=event, sequence=seq, emitted_at=event.timestamp)


def test_reported_by_window_dedups_and_filters_kind():
    digests = [
        _digest(0, _p("0"), 0),
        _digest(1, _p("0"), 500),
        _digest(2, _p("1"), 1000),
        _digest(3, _p("11"), 1000, kind=EventKind.HH),
    ]
    windows = reported_by_window(digests, EventKind.HHH, window_us=1000)
    assert dict(windows) == {0: {_p("0")}, 1: {_p("1")}}


def test_score_windows_respects_range():
    truths = [WindowTruth(w, hhh_set={_p("1")}) for w in range(4)]
    reported = {1: {_p("1")}, 2: {_p("0")}}
    rows = score_windows(reported, truths, EventKind.HHH, relax_bits=0, first_window=1, last_window=3)
    assert [(r.window, r.recall, r.precision) for r in rows] == [(1, 1.0, 1.0), (2, 0.0, 0.0)]
    assert average(rows) == {"recall": 0.5, "precision": 0.5, "windows": 2}


def test_score_windows_uses_spreader_truth():
    truths = [WindowTruth(0, hhh_set={_p("0")}, spreader_set={_p("1")})]
    rows = score_windows({0: {_p("1")}}, truths, EventKind.SUPERSPREADER, relax_bits=0)
    assert rows == [WindowScore(0, 0, 1.0, 1.0, 1, 1)]


def test_average_of_nothing():
    assert average([]) == {"recall": 1.0, "precision": 1.0, "windows": 0}
