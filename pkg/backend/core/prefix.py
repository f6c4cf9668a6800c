"""
Prefix value type for 32-bit flow keys.

Prefix bits are left-aligned: bit 31 is the first prefix bit, and every bit
below position (32 - length) is zero.
"""

from dataclasses import dataclass
import ipaddress

from .errors import ConfigError

KEY_BITS = 32
KEY_MASK = 0xFFFFFFFF


def prefix_mask(length: int) -> int:
    """Network mask for a prefix length, as a 32-bit integer."""
    if length <= 0:
        return 0
    return (KEY_MASK << (KEY_BITS - length)) & KEY_MASK


def key_bit(key: int, position: int) -> int:
    """
    Bit of ``key`` that follows a prefix of length ``position``.

    Position 32 has no following bit; it reads as 0 so a full address always
    accounts to its left counter.
    """
    if position >= KEY_BITS:
        return 0
    return (key >> (KEY_BITS - 1 - position)) & 1


@dataclass(frozen=True, slots=True, order=True)
class Prefix:
    """
    A flow-key prefix: up to 32 value bits plus an explicit length.

    Ordering is (bits, length), which keeps sorted output stable across runs.
    """

    bits: int
    length: int

    def __post_init__(self):
        if not 0 <= self.length <= KEY_BITS:
            raise ConfigError(f"prefix length {self.length} outside 0..32")
        if self.bits & ~prefix_mask(self.length) & KEY_MASK or not 0 <= self.bits <= KEY_MASK:
            raise ConfigError(f"prefix bits {self.bits:#010x} not aligned to /{self.length}")

    # ------------------------------------------------------------------
    # Construction
    # ------------------------------------------------------------------

    @classmethod
    def root(cls) -> "Prefix":
        return cls(0, 0)

    @classmethod
    def of(cls, key: int, length: int) -> "Prefix":
        """Prefix of ``key`` truncated to ``length`` bits."""
        return cls(key & prefix_mask(length), length)

    @classmethod
    def parse(cls, text: str) -> "Prefix":
        """
        Parse ``a.b.c.d/len``, a bare dotted address (/32) or ``*`` (root).

        Host bits below the length are rejected rather than silently dropped.
        """
        text = text.strip()
        if text == "*":
            return cls.root()
        try:
            network = ipaddress.IPv4Network(text, strict=True)
        except ValueError as exc:
            raise ConfigError(f"invalid prefix {text!r}: {exc}") from exc
        return cls(int(network.network_address), network.prefixlen)

    @classmethod
    def from_bitstring(cls, bitstring: str) -> "Prefix":
        """Build a prefix from leading bits, e.g. ``"10"`` is ``128.0.0.0/2``."""
        if not bitstring:
            return cls.root()
        if len(bitstring) > KEY_BITS or set(bitstring) - {"0", "1"}:
            raise ConfigError(f"invalid bit string {bitstring!r}")
        value = int(bitstring, 2) << (KEY_BITS - len(bitstring))
        return cls(value, len(bitstring))

    # ------------------------------------------------------------------
    # Navigation
    # ------------------------------------------------------------------

    @property
    def is_root(self) -> bool:
        return self.length == 0

    def child(self, side: int) -> "Prefix":
        """Prefix extended by one bit."""
        if self.length >= KEY_BITS:
            raise ConfigError("a /32 prefix has no children")
        return Prefix(self.bits | (side << (KEY_BITS - 1 - self.length)), self.length + 1)

    def parent(self) -> "Prefix":
        """The one-bit-shorter prefix."""
        if self.is_root:
            raise ConfigError("the root prefix has no parent")
        return Prefix.of(self.bits, self.length - 1)

    def ancestor(self, length: int) -> "Prefix":
        return Prefix.of(self.bits, min(length, self.length))

    def contains(self, key: int) -> bool:
        return (key & prefix_mask(self.length)) == self.bits

    def covers(self, other: "Prefix") -> bool:
        """True when ``other`` equals this prefix or is one of its descendants."""
        return other.length >= self.length and self.contains(other.bits)

    # ------------------------------------------------------------------
    # Formatting
    # ------------------------------------------------------------------

    def bitstring(self, width: int = 0) -> str:
        """
        Leading bits as text, padded with ``*`` up to ``width``.

        ``Prefix.from_bitstring("01").bitstring(3) == "01*"``.
        """
        bits = format(self.bits >> (KEY_BITS - self.length), f"0{self.length}b") if self.length else ""
        return bits + "*" * max(width - self.length, 0)

    def __str__(self) -> str:
        return f"{ipaddress.IPv4Address(self.bits)}/{self.length}"
