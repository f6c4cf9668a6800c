"""
Elastic Trie Monitor Backend
Self-adjusting prefix trie for HHH, superspreader and change detection, with a trace-driven accuracy harness.
"""

__version__ = "1.0.0"
