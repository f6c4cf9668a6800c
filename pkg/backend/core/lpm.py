"""
LPM Classification Stage
Software model of a switch pipeline that keeps one hash table per prefix
length, reads them all for every packet and picks the longest hit.
"""

import logging
import zlib
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterator, List, Optional, Tuple

from .errors import ConfigError
from .prefix import KEY_BITS, Prefix, prefix_mask

logger = logging.getLogger(__name__)

LEVELS = KEY_BITS + 1
NODE_BITS = 144  # 2 x 32-bit counters + 48-bit timestamp + 32-bit key
HASH_SEED = 0x5EED1E55  # CRC-32 (IEEE 802.3 polynomial) initial value


@dataclass(slots=True)
class NodeRecord:
    """Per-node state: left/right child counters, timestamp and stored key."""
    c0: int = 0
    c1: int = 0
    ts: int = 0
    key: int = 0

    @property
    def total(self) -> int:
        return self.c0 + self.c1

    def counter(self, side: int) -> int:
        return self.c1 if side else self.c0

    def reset(self, ts: int) -> None:
        self.c0 = 0
        self.c1 = 0
        self.ts = ts


class HashKind(Enum):
    IDENTITY = "identity"
    CRC32 = "crc32"


class InsertStatus(Enum):
    OK = "ok"
    TABLE_FULL = "table-full"


class DeleteStatus(Enum):
    OK = "ok"
    NOT_FOUND = "not-found"


def prefix_hash(bits: int) -> int:
    """32-bit CRC of the big-endian prefix value with the fixed seed."""
    return zlib.crc32(bits.to_bytes(4, "big"), HASH_SEED)


class LevelTable:
    """
    Fixed-capacity table for one prefix length.

    A bounded table maps each prefix to exactly one slot and never probes:
    inserting over a slot held by a different key is refused. With
    ``capacity=None`` the table is unbounded and collision free, which models
    the unlimited-memory configuration.
    """

    def __init__(self, level: int, capacity: Optional[int] = None):
        if capacity is not None and (capacity < 0 or capacity & (capacity - 1)):
            raise ConfigError(f"level {level}: capacity {capacity} is not a power of two")
        self.level = level
        self.capacity = capacity
        self.occupancy = 0
        if capacity is None:
            self.hash_kind = HashKind.IDENTITY
            self._entries: Dict[int, NodeRecord] = {}
        else:
            self.hash_kind = HashKind.IDENTITY if (1 << level) <= capacity else HashKind.CRC32
            self._slots: List[Optional[NodeRecord]] = [None] * capacity

    @property
    def bounded(self) -> bool:
        return self.capacity is not None

    def slot_of(self, bits: int) -> int:
        if self.hash_kind is HashKind.IDENTITY:
            return bits >> (KEY_BITS - self.level) if self.level else 0
        return prefix_hash(bits) % self.capacity

    def get(self, bits: int) -> Optional[NodeRecord]:
        """Stored record for ``bits``, or None when empty or held by another key."""
        if self.capacity is None:
            return self._entries.get(bits)
        if not self.capacity:
            return None
        record = self._slots[self.slot_of(bits)]
        if record is None or record.key != bits:
            return None
        return record

    def insert(self, bits: int, record: NodeRecord) -> InsertStatus:
        if self.capacity is None:
            record.key = bits
            if bits not in self._entries:
                self.occupancy += 1
            self._entries[bits] = record
            return InsertStatus.OK
        if not self.capacity:
            return InsertStatus.TABLE_FULL
        slot = self.slot_of(bits)
        current = self._slots[slot]
        if current is not None and current.key != bits:
            return InsertStatus.TABLE_FULL
        if current is None:
            self.occupancy += 1
        record.key = bits
        self._slots[slot] = record
        return InsertStatus.OK

    def delete(self, bits: int) -> DeleteStatus:
        if self.capacity is None:
            if self._entries.pop(bits, None) is None:
                return DeleteStatus.NOT_FOUND
            self.occupancy -= 1
            return DeleteStatus.OK
        if not self.capacity:
            return DeleteStatus.NOT_FOUND
        slot = self.slot_of(bits)
        current = self._slots[slot]
        if current is None or current.key != bits:
            return DeleteStatus.NOT_FOUND
        self._slots[slot] = None
        self.occupancy -= 1
        return DeleteStatus.OK

    def records(self) -> Iterator[NodeRecord]:
        if self.capacity is None:
            yield from self._entries.values()
        else:
            yield from (record for record in self._slots if record is not None)


@dataclass(frozen=True)
class MemoryBudget:
    """Bit budget for node storage, split per prefix length."""
    total_bits: int
    per_level_bits: Tuple[int, ...]

    def __post_init__(self):
        if len(self.per_level_bits) != LEVELS:
            raise ConfigError(f"per-level budget needs {LEVELS} entries")
        if sum(self.per_level_bits) > self.total_bits:
            raise ConfigError("per-level budgets exceed the total budget")
        if self.per_level_bits[0] < NODE_BITS:
            raise ConfigError("the budget must hold at least the root node")

    def capacity(self, level: int) -> int:
        """Slots at ``level``: floor(bits / 144) rounded down to a power of two."""
        slots = self.per_level_bits[level] // NODE_BITS
        return 1 << (slots.bit_length() - 1) if slots else 0

    @property
    def capacities(self) -> List[int]:
        return [self.capacity(level) for level in range(LEVELS)]


def default_budget(total_bits: int, max_depth: int = KEY_BITS, identity_max_level: int = 8) -> MemoryBudget:
    """
    Split ``total_bits`` over the prefix levels by water-filling.

    Levels 1..``identity_max_level`` are capped at a full identity-indexed
    table (``2**level`` nodes). Shallow levels are filled first while the
    even share of the remaining bits still covers their full table; every
    other level up to ``max_depth`` gets that even share. Levels beyond
    ``max_depth`` get nothing. A larger budget never gives a level fewer bits.
    """
    if total_bits < NODE_BITS:
        raise ConfigError(f"memory budget of {total_bits} bits cannot hold the root node")
    if not 0 <= max_depth <= KEY_BITS:
        raise ConfigError(f"max_depth {max_depth} outside 0..32")
    if not 0 <= identity_max_level <= KEY_BITS:
        raise ConfigError(f"identity_max_level {identity_max_level} outside 0..32")

    per_level = [0] * LEVELS
    per_level[0] = NODE_BITS
    remaining = total_bits - NODE_BITS
    open_levels = list(range(1, max_depth + 1))

    # filled levels leave the even share unchanged or larger
    while open_levels and open_levels[0] <= identity_max_level:
        level = open_levels[0]
        full = (1 << level) * NODE_BITS
        if full * len(open_levels) > remaining:
            break
        per_level[level] = full
        remaining -= full
        open_levels.pop(0)

    if open_levels:
        share = remaining // len(open_levels)
        for level in open_levels:
            per_level[level] = share
    return MemoryBudget(total_bits=total_bits, per_level_bits=tuple(per_level))


class LpmTables:
    """
    The 33 per-length tables (level 0 holds only the root).

    Lookups build the per-level membership vector and select its highest set
    bit, the software equivalent of the ternary priority encoder.
    """

    def __init__(self, budget: Optional[MemoryBudget] = None, max_depth: int = KEY_BITS):
        self.budget = budget
        self.max_depth = max_depth
        if budget is None:
            self.levels = [LevelTable(level) for level in range(LEVELS)]
        else:
            self.levels = [LevelTable(level, budget.capacity(level)) for level in range(LEVELS)]
        self.levels[0].insert(0, NodeRecord())

    @property
    def root(self) -> NodeRecord:
        return self.levels[0].get(0)

    def membership_vector(self, key: int) -> int:
        """Bit x set when the /x prefix of ``key`` is stored at level x."""
        vector = 1
        for level in range(1, self.max_depth + 1):
            table = self.levels[level]
            if table.occupancy and table.get(key & prefix_mask(level)) is not None:
                vector |= 1 << level
        return vector

    def lookup_lpm(self, key: int) -> Tuple[Prefix, NodeRecord]:
        """
        Longest stored prefix of ``key`` and its record.

        Scans from the deepest level down, which selects the same level as the
        highest set bit of ``membership_vector``.
        """
        for level in range(self.max_depth, 0, -1):
            table = self.levels[level]
            if not table.occupancy:
                continue
            bits = key & prefix_mask(level)
            record = table.get(bits)
            if record is not None:
                return Prefix(bits, level), record
        return Prefix.root(), self.root

    def get(self, prefix: Prefix) -> Optional[NodeRecord]:
        return self.levels[prefix.length].get(prefix.bits)

    def insert(self, prefix: Prefix, record: NodeRecord) -> InsertStatus:
        if prefix.length > self.max_depth:
            raise ConfigError(f"{prefix} is deeper than max_depth {self.max_depth}")
        status = self.levels[prefix.length].insert(prefix.bits, record)
        if status is InsertStatus.TABLE_FULL:
            logger.debug(f"table full at level {prefix.length} for {prefix}")
        return status

    def delete(self, prefix: Prefix) -> DeleteStatus:
        return self.levels[prefix.length].delete(prefix.bits)

    # ------------------------------------------------------------------
    # Introspection
    # ------------------------------------------------------------------

    def node_count(self) -> int:
        return sum(table.occupancy for table in self.levels)

    def memory_bits(self) -> int:
        return self.node_count() * NODE_BITS

    def depth(self) -> int:
        """Length of the longest stored prefix."""
        for level in range(KEY_BITS, -1, -1):
            if self.levels[level].occupancy:
                return level
        return 0

    def items(self) -> Iterator[Tuple[Prefix, NodeRecord]]:
        """Stored prefixes, shortest first."""
        for table in self.levels:
            for record in table.records():
                yield Prefix(record.key, table.level), record
