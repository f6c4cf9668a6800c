"""Services package."""

from .oracle import exact_hh, exact_hhh, exact_spreaders, score
from .traces import PacketRecord, SyntheticSpec, generate, open_trace

__all__ = [
    "exact_hh",
    "exact_hhh",
    "exact_spreaders",
    "score",
    "PacketRecord",
    "SyntheticSpec",
    "generate",
    "open_trace",
]
