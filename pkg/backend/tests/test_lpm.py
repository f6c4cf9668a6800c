"""Tests for the per-length LPM tables and the memory budget."""

import pytest

from backend.core.errors import ConfigError
from backend.core.lpm import (
    NODE_BITS,
    DeleteStatus,
    HashKind,
    InsertStatus,
    LevelTable,
    LpmTables,
    NodeRecord,
    default_budget,
)
from backend.core.prefix import Prefix


def test_empty_tables_resolve_to_root():
    tables = LpmTables()
    prefix, record = tables.lookup_lpm(0xDEADBEEF)
    assert prefix == Prefix.root()
    assert record is tables.root
    assert tables.node_count() == 1
    assert tables.depth() == 0


def test_longest_match_wins():
    tables = LpmTables()
    tables.insert(Prefix.parse("10.0.0.0/8"), NodeRecord())
    tables.insert(Prefix.parse("10.1.0.0/16"), NodeRecord())

    assert tables.lookup_lpm(0x0A010203)[0] == Prefix.parse("10.1.0.0/16")
    assert tables.lookup_lpm(0x0A020304)[0] == Prefix.parse("10.0.0.0/8")
    assert tables.lookup_lpm(0x0B000000)[0] == Prefix.root()
    assert tables.depth() == 16
    assert tables.memory_bits() == 3 * NODE_BITS


def test_membership_vector_matches_lookup():
    tables = LpmTables()
    for text in ("10.0.0.0/8", "10.1.0.0/16", "10.1.2.0/24"):
        tables.insert(Prefix.parse(text), NodeRecord())
    vector = tables.membership_vector(0x0A010203)
    assert vector == (1 | 1 << 8 | 1 << 16 | 1 << 24)
    assert vector.bit_length() - 1 == tables.lookup_lpm(0x0A010203)[0].length


def test_delete_is_local():
    tables = LpmTables()
    parent = Prefix.from_bitstring("10")
    child = Prefix.from_bitstring("100")
    tables.insert(parent, NodeRecord())
    tables.insert(child, NodeRecord())

    assert tables.delete(parent) is DeleteStatus.OK
    assert tables.lookup_lpm(child.bits)[0] == child
    assert tables.delete(parent) is DeleteStatus.NOT_FOUND


def test_insert_sets_stored_key():
    tables = LpmTables()
    record = NodeRecord()
    tables.insert(Prefix.parse("10.1.0.0/16"), record)
    assert record.key == 0x0A010000


def test_insert_beyond_max_depth_rejected():
    tables = LpmTables(max_depth=8)
    with pytest.raises(ConfigError):
        tables.insert(Prefix.parse("10.1.0.0/16"), NodeRecord())


def test_identity_table_for_short_levels():
    table = LevelTable(2, capacity=4)
    assert table.hash_kind is HashKind.IDENTITY
    assert table.slot_of(Prefix.from_bitstring("11").bits) == 3


def test_collision_refuses_second_key():
    table = LevelTable(16, capacity=1)
    assert table.hash_kind is HashKind.CRC32
    first = Prefix.parse("10.1.0.0/16").bits
    second = Prefix.parse("10.2.0.0/16").bits

    assert table.insert(first, NodeRecord()) is InsertStatus.OK
    assert table.insert(second, NodeRecord()) is InsertStatus.TABLE_FULL
    assert table.get(second) is None
    assert table.get(first) is not None
    assert table.delete(second) is DeleteStatus.NOT_FOUND
    assert table.occupancy == 1


def test_reinsert_same_key_keeps_occupancy():
    table = LevelTable(16, capacity=1)
    bits = Prefix.parse("10.1.0.0/16").bits
    table.insert(bits, NodeRecord())
    assert table.insert(bits, NodeRecord(c0=3)) is InsertStatus.OK
    assert table.occupancy == 1
    assert table.get(bits).c0 == 3


def test_capacity_must_be_power_of_two():
    with pytest.raises(ConfigError):
        LevelTable(4, capacity=6)


def test_default_budget_at_8kb():
    budget = default_budget(8 * 1024 * 8, max_depth=16)
    capacities = budget.capacities
    assert capacities[:6] == [1, 2, 4, 8, 16, 32]
    assert capacities[6:17] == [32] * 11
    assert capacities[17:] == [0] * 16
    assert sum(budget.per_level_bits) <= budget.total_bits


@pytest.mark.parametrize("max_depth", [16, 32])
def test_default_budget_capacity_grows_with_budget(max_depth):
    previous = default_budget(192, max_depth=max_depth).capacities
    for total_bits in range(256, 300_000, 64):
        capacities = default_budget(total_bits, max_depth=max_depth).capacities
        assert all(now >= before for now, before in zip(capacities, previous)), total_bits
        previous = capacities


@pytest.mark.parametrize("smaller,larger,max_depth", [
    (17_792, 17_856, 16),
    (73_088, 73_152, 32),
    (146_816, 146_880, 32),
    (294_272, 294_336, 32),
])
def test_default_budget_no_shrink_when_identity_level_fills(smaller, larger, max_depth):
    before = default_budget(smaller, max_depth=max_depth)
    after = default_budget(larger, max_depth=max_depth)
    for level in range(1, max_depth + 1):
        assert after.per_level_bits[level] >= before.per_level_bits[level]
        assert after.capacity(level) >= before.capacity(level)


def test_default_budget_fills_every_level_when_room():
    budget = default_budget(1 << 20, max_depth=8)
    assert budget.capacities[:9] == [1 << level for level in range(9)]
    assert budget.capacities[9:] == [0] * 24


def test_default_budget_without_identity_levels_splits_evenly():
    budget = default_budget(144 + 4 * 1000, max_depth=4, identity_max_level=0)
    assert budget.per_level_bits[1:5] == (1000, 1000, 1000, 1000)


def test_default_budget_needs_room_for_root():
    with pytest.raises(ConfigError):
        default_budget(100)


def test_bounded_tables_report_table_full():
    tables = LpmTables(default_budget(NODE_BITS * 4, max_depth=4), max_depth=4)
    statuses = [
        tables.insert(Prefix.from_bitstring(bits), NodeRecord())
        for bits in ("0000", "0001", "0010", "0011", "0100")
    ]
    assert InsertStatus.TABLE_FULL in statuses
    assert tables.node_count() <= 4
