"""Dataplane model: prefix trie, LPM tables, spread filter, change detector and digests"""

from .errors import ClockError, ConfigError, ElasticTrieError, TraceFormatError
from .prefix import Prefix
from .events import DetectionEvent, EventKind
from .lpm import LpmTables, MemoryBudget, NodeRecord, default_budget
from .spread_filter import BloomFilter
from .change_detector import ChangeDetector, StructureChange
from .trie import Action, CountMode, ElasticTrie, TrieConfig, active_timeout_fn, classify_action
from .notify import Digest, DigestSink

__all__ = [
    "ClockError",
    "ConfigError",
    "ElasticTrieError",
    "TraceFormatError",
    "Prefix",
    "DetectionEvent",
    "EventKind",
    "LpmTables",
    "MemoryBudget",
    "NodeRecord",
    "default_budget",
    "BloomFilter",
    "ChangeDetector",
    "StructureChange",
    "Action",
    "CountMode",
    "ElasticTrie",
    "TrieConfig",
    "active_timeout_fn",
    "classify_action",
    "Digest",
    "DigestSink",
]
