"""
Seeded randomized checks of trie, filter and LPM invariants.

Each test drives at least ten thousand random packets or lookups.
"""

import random

import pytest

from backend.core.change_detector import ChangeDetector
from backend.core.lpm import LpmTables, NodeRecord, default_budget
from backend.core.prefix import KEY_BITS, Prefix
from backend.core.spread_filter import BloomFilter
from backend.core.trie import Action, ElasticTrie, TrieConfig

CASES = 10_000
DEPTH = 6
ACTIONS = ("updates", "expansions", "keeps", "collapses", "invalidations", "root_resets")


def _config() -> TrieConfig:
    return TrieConfig.build(threshold=5, active_timeout=1000, inactive_timeout=5000, max_depth=DEPTH)


def _stream(seed: int, count: int = CASES):
    """(key, ts) pairs: half from a few hot /6 prefixes, gaps of 0-400us."""
    rng = random.Random(seed)
    hot = [rng.getrandbits(DEPTH) << (KEY_BITS - DEPTH) for _ in range(4)]
    ts = 0
    for _ in range(count):
        ts += rng.randint(0, 400)
        if rng.random() < 0.5:
            key = rng.choice(hot) | rng.getrandbits(KEY_BITS - DEPTH)
        else:
            key = rng.getrandbits(KEY_BITS)
        yield key, ts


def _volume(trie: ElasticTrie) -> int:
    return sum(record.total for _, record in trie.tables.items())


def _counts(trie: ElasticTrie):
    return {name: getattr(trie.stats, name) for name in ACTIONS}


# ============ Trie ============

@pytest.mark.parametrize("seed", [1, 2])
@pytest.mark.parametrize("budget_bits", [None, 16 * 144])
def test_one_action_per_packet(seed, budget_bits):
    budget = default_budget(budget_bits, max_depth=DEPTH) if budget_bits else None
    trie = ElasticTrie(_config(), LpmTables(budget, max_depth=DEPTH))
    names = {
        Action.INVALIDATE: ("invalidations", "root_resets"),
        Action.EXPAND: ("expansions", "updates"),
        Action.KEEP: ("keeps",),
        Action.COLLAPSE: ("collapses", "root_resets"),
        Action.UPDATE: ("updates",),
    }
    for key, ts in _stream(seed):
        before = _counts(trie)
        trie.process_packet(key, ts)
        after = _counts(trie)
        moved = [name for name in ACTIONS if after[name] != before[name]]
        assert len(moved) == 1
        assert after[moved[0]] == before[moved[0]] + 1
        assert moved[0] in names[trie.last_classification.action]
    assert sum(_counts(trie).values()) == CASES
    if budget_bits:
        assert trie.stats.table_full > 0


@pytest.mark.parametrize("seed", [3, 4])
def test_counter_conservation(seed):
    trie = ElasticTrie(_config())
    for key, ts in _stream(seed):
        prefix, node = trie.tables.lookup_lpm(key)
        c0, c1, total = node.c0, node.c1, node.total
        parent_total = 0
        if not prefix.is_root:
            parent = trie.tables.get(prefix.parent())
            parent_total = parent.total if parent is not None else 0
        volume = _volume(trie)

        trie.process_packet(key, ts)
        decision = trie.last_classification

        weight = 1
        discarded = 0
        if decision.action is Action.INVALIDATE:
            weight = 0
            discarded = total
        elif decision.action is Action.EXPAND and prefix.length < DEPTH:
            discarded = c1 if decision.side else c0
        elif decision.action is Action.KEEP:
            discarded = total
        elif decision.action is Action.COLLAPSE:
            discarded = total + parent_total
        assert _volume(trie) == volume + weight - discarded


@pytest.mark.parametrize("seed", [5, 6])
def test_change_counter_tracks_structure(seed):
    detector = ChangeDetector(alarm_threshold=10**9, window_us=10_000)
    trie = ElasticTrie(_config(), change_detector=detector)
    for key, ts in _stream(seed):
        trie.process_packet(key, ts)
        assert detector.counter == trie.stats.expansions - trie.stats.collapses
    assert detector.expansions == trie.stats.expansions
    assert detector.collapses == trie.stats.collapses
    assert trie.stats.expansions > 0 and trie.stats.collapses > 0


def test_identical_streams_give_identical_tries():
    first, second = ElasticTrie(_config()), ElasticTrie(_config())
    for key, ts in _stream(7):
        assert first.process_packet(key, ts) == second.process_packet(key, ts)
    assert first.snapshot() == second.snapshot()
    assert first.get_stats() == second.get_stats()


def test_bounded_tables_stay_within_budget():
    budget = default_budget(16 * 144, max_depth=DEPTH)
    trie = ElasticTrie(_config(), LpmTables(budget, max_depth=DEPTH))
    for key, ts in _stream(8):
        trie.process_packet(key, ts)
        assert trie.memory_bits() <= budget.total_bits
        assert trie.tables.root is not None


# ============ Bloom filter ============

def test_bloom_filter_has_no_false_negatives():
    rng = random.Random(9)
    bloom = BloomFilter(1 << 16, hashes=4)
    items = [
        (Prefix.of(rng.getrandbits(KEY_BITS), rng.randint(0, KEY_BITS)), rng.getrandbits(KEY_BITS))
        for _ in range(CASES)
    ]
    for prefix, element in items:
        bloom.test_and_set(prefix, element)
    for prefix, element in items:
        assert bloom.test_and_set(prefix, element) is False


# ============ LPM ============

def _linear_lpm(tables: LpmTables, key: int) -> Prefix:
    return max((prefix for prefix, _ in tables.items() if prefix.contains(key)), key=lambda p: p.length)


@pytest.mark.parametrize("budget_bits", [None, 64 * 144])
def test_lpm_matches_linear_scan(budget_bits):
    rng = random.Random(10)
    depth = 8
    budget = default_budget(budget_bits, max_depth=depth) if budget_bits else None
    tables = LpmTables(budget, max_depth=depth)
    for step in range(CASES):
        prefix = Prefix.of(rng.getrandbits(KEY_BITS), rng.randint(1, depth))
        if rng.random() < 0.6:
            tables.insert(prefix, NodeRecord(ts=step))
        else:
            tables.delete(prefix)
        key = rng.getrandbits(KEY_BITS)
        assert tables.lookup_lpm(key)[0] == _linear_lpm(tables, key)
