"""
Error types raised by the detection engine and the harness around it.
"""


class ElasticTrieError(Exception):
    """Base class for every error raised by this package."""


class ClockError(ElasticTrieError, ValueError):
    """Packet timestamp went backwards or left the 48-bit timestamp space."""


class ConfigError(ElasticTrieError, ValueError):
    """Configuration rejected before any packet is processed."""


class TraceFormatError(ElasticTrieError, ValueError):
    """A capture or CSV trace could not be parsed."""
