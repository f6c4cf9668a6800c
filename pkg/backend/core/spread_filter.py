"""
Bloom filter gating counter updates in superspreader mode.
A node counter only grows when the (source prefix, destination) pair has
not been seen in the current epoch.
"""

import math
import struct

import mmh3
from bitarray import bitarray

from .errors import ConfigError
from .prefix import Prefix

# Two base hashes; hash i is h1 + i * h2 (double hashing)
BASE_SEED_1 = 0
BASE_SEED_2 = 0x9747B28C


def flow_element(prefix: Prefix, element: int) -> bytes:
    """Filter key: prefix bits, prefix length and the counted address."""
    return struct.pack(">IBI", prefix.bits, prefix.length, element)


class BloomFilter:
    """
    Standard Bloom filter over a bitarray with mmh3-derived indexes.

    Usage:
        bloom = BloomFilter.from_bytes(32 * 1024)
        bloom.test_and_set(Prefix.parse("10.0.0.1/32"), dst)  # True the first time
    """

    def __init__(self, size_bits: int, hashes: int = 4):
        if size_bits <= 0:
            raise ConfigError("bloom filter size must be positive")
        if hashes <= 0:
            raise ConfigError("bloom filter needs at least one hash function")
        self.size = size_bits
        self.hashes = hashes
        self.bits = bitarray(size_bits)
        self.bits.setall(0)
        self.inserted = 0

    @classmethod
    def from_bytes(cls, size_bytes: int, hashes: int = 4) -> "BloomFilter":
        return cls(size_bytes * 8, hashes)

    def _indexes(self, item: bytes):
        h1 = mmh3.hash(item, BASE_SEED_1, signed=False)
        h2 = mmh3.hash(item, BASE_SEED_2, signed=False) | 1
        return [(h1 + i * h2) % self.size for i in range(self.hashes)]

    def add(self, item: bytes) -> bool:
        """Set the item's bits; True when at least one bit was clear."""
        new = False
        for index in self._indexes(item):
            if not self.bits[index]:
                new = True
                self.bits[index] = 1
        if new:
            self.inserted += 1
        return new

    def __contains__(self, item: bytes) -> bool:
        return all(self.bits[index] for index in self._indexes(item))

    def test_and_set(self, prefix: Prefix, element: int) -> bool:
        """True when (prefix, element) is a new flow for this epoch."""
        return self.add(flow_element(prefix, element))

    def clear(self) -> None:
        self.bits.setall(0)
        self.inserted = 0

    def fill_ratio(self) -> float:
        return self.bits.count(1) / self.size

    def false_positive_rate(self) -> float:
        """Estimated (1 - e^(-k n / m))^k for the current insert count."""
        if not self.inserted:
            return 0.0
        return (1.0 - math.exp(-self.hashes * self.inserted / self.size)) ** self.hashes
