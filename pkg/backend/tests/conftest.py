"""Shared fixtures for the backend test suite."""

from pathlib import Path

import pytest

from backend.config import load_run_config
from backend.core.lpm import LpmTables
from backend.core.prefix import Prefix
from backend.core.trie import ElasticTrie, TrieConfig
from backend.services.simulation import get_registry
from backend.services.traces import hierarchy_example_trace

SECOND = 1_000_000
CONFIG_DIR = Path(__file__).resolve().parents[2] / "configs"


def bits_key(bitstring: str) -> int:
    """Left-aligned key whose leading bits are ``bitstring``."""
    return Prefix.from_bitstring(bitstring).bits


def make_trie(threshold: int = 10, active_s: float = 20, inactive_s: float = 300,
              max_depth: int = 32, **kwargs) -> ElasticTrie:
    config = TrieConfig.build(
        threshold=threshold,
        active_timeout=int(active_s * SECOND),
        inactive_timeout=int(inactive_s * SECOND),
        max_depth=max_depth,
        **kwargs,
    )
    return ElasticTrie(config, LpmTables(max_depth=max_depth))


@pytest.fixture
def trie():
    """T=10, t_A=20s, t_I=300s, unbounded tables."""
    return make_trie()


@pytest.fixture
def hierarchy_trace():
    return hierarchy_example_trace()


@pytest.fixture
def hierarchy_config():
    """Three-bit example run: T=10, t_A=1s, depth 3, relax 0."""
    return load_run_config(CONFIG_DIR / "hierarchy_example.yaml")


@pytest.fixture
def registry(tmp_path):
    """The collector registry, clean and writing its reports under ``tmp_path``."""
    registry = get_registry()
    registry.clear()
    root, registry.report_root = registry.report_root, tmp_path / "reports"
    yield registry
    registry.clear()
    registry.report_root = root
