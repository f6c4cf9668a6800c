"""
Trace Ingestion and Synthesis
Normalizes captures and CSV files to PacketRecord streams and generates
synthetic workloads with planted heavy prefixes, spreaders and attacks.
"""

import csv
import heapq
import ipaddress
import logging
import queue
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, List, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, Field, model_validator
from scapy.error import Scapy_Exception
from scapy.layers.inet import IP
from scapy.utils import PcapNgReader, PcapReader

from backend.core.errors import ConfigError, TraceFormatError
from backend.core.prefix import KEY_BITS, Prefix, prefix_mask

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["ts_us", "src", "dst", "len"]
BUILTIN_HIERARCHY = "builtin:hierarchy"

# Leaf volumes per window of the three-bit worked example
HIERARCHY_EXAMPLE_VOLUMES = {
    "000": 3, "001": 4, "010": 12, "011": 5,
    "100": 11, "101": 2, "110": 6, "111": 7,
}
HIERARCHY_EXAMPLE_THRESHOLD = 10


@dataclass(frozen=True, slots=True)
class PacketRecord:
    """Normalized packet: microsecond timestamp, IPv4 addresses as integers, IP length."""
    ts: int
    src: int
    dst: int
    length: int


@dataclass
class ReadStats:
    """Counters filled in while a reader is consumed."""
    records: int = 0
    skipped: int = 0
    truncated: bool = False


# ============ Synthetic spec ============

class SourcePopulation(BaseModel):
    """Background sources drawn with Zipf weights over a fixed population."""
    population: int = Field(default=4096, ge=1)
    zipf_exponent: float = Field(default=1.0, ge=0.0)
    fanout: int = Field(default=2, ge=1)
    dst_population: int = Field(default=4096, ge=1)


class PlantedHeavy(BaseModel):
    prefix: str
    share: float = Field(gt=0.0, le=1.0)


class PlantedSpreader(BaseModel):
    source: str
    fanout: int = Field(ge=1)
    share: float = Field(gt=0.0, le=1.0)


class AttackSpec(BaseModel):
    """DoS (one source to one victim) or scan (one source to random destinations)."""
    kind: Literal["dos", "scan"]
    start_s: float = Field(ge=0.0)
    duration_s: Optional[float] = Field(default=None, gt=0.0)
    rate_pps: float = Field(gt=0.0)
    source: str
    dst: Optional[str] = None

    @model_validator(mode="after")
    def _victim_for_dos(self) -> "AttackSpec":
        if self.kind == "dos" and not self.dst:
            raise ValueError("a dos attack needs a victim 'dst'")
        return self


class SyntheticSpec(BaseModel):
    """
    Declarative synthetic workload.

    Addresses live in the top ``address_bits`` bits of the 32-bit key; the
    remaining bits are zero, so a 16-bit space pairs with ``max_depth: 16``.
    Planted heavies and spreaders take their share of the base packet rate,
    background sources take the rest; attack packets come on top.
    """

    duration_s: float = Field(gt=0.0)
    rate_pps: float = Field(gt=0.0)
    address_bits: int = Field(default=KEY_BITS, ge=8, le=KEY_BITS)
    sources: SourcePopulation = SourcePopulation()
    planted: List[PlantedHeavy] = []
    spreaders: List[PlantedSpreader] = []
    attack: Optional[AttackSpec] = None
    length_min: int = Field(default=64, ge=20)
    length_max: int = Field(default=1500, le=65535)

    @model_validator(mode="after")
    def _check_shares(self) -> "SyntheticSpec":
        total = sum(p.share for p in self.planted) + sum(s.share for s in self.spreaders)
        if total > 1.0 + 1e-9:
            raise ValueError(f"planted shares sum to {total:.3f} > 1")
        if self.length_min > self.length_max:
            raise ValueError("length_min exceeds length_max")
        space = prefix_mask(self.address_bits)
        for heavy in self.planted:
            prefix = Prefix.parse(heavy.prefix)
            if prefix.bits & ~space:
                raise ValueError(f"planted prefix {heavy.prefix} lies outside the {self.address_bits}-bit space")
        for spreader in self.spreaders:
            if parse_address(spreader.source) & ~space:
                raise ValueError(f"spreader {spreader.source} lies outside the {self.address_bits}-bit space")
        return self

    def planted_prefixes(self) -> List[Prefix]:
        """Planted heavies at the depth the address space allows."""
        prefixes = []
        for heavy in self.planted:
            prefix = Prefix.parse(heavy.prefix)
            prefixes.append(prefix.ancestor(self.address_bits))
        return prefixes


def load_synthetic_spec(path: Union[str, Path]) -> SyntheticSpec:
    with open(path, encoding="utf-8") as handle:
        data = yaml.safe_load(handle) or {}
    return SyntheticSpec.model_validate(data)


# ============ Readers / writers ============

def parse_address(text: str) -> int:
    """Dotted quad or unsigned integer to a 32-bit integer."""
    text = text.strip()
    if text.isdigit():
        value = int(text)
        if value > 0xFFFFFFFF:
            raise ValueError(f"address {text} exceeds 32 bits")
        return value
    return int(ipaddress.IPv4Address(text))


PCAP_RECORD_HEADER = 16


def _next_caplen(reader: PcapReader) -> Optional[int]:
    """
    Captured length announced by the next classic pcap record header.

    The read position is left unchanged. Returns None at a clean end of file
    and raises EOFError when only part of a header is left.
    """
    handle = reader.f
    start = handle.tell()
    header = handle.read(PCAP_RECORD_HEADER)
    handle.seek(start)
    if not header:
        return None
    if len(header) < PCAP_RECORD_HEADER:
        raise EOFError(f"{len(header)} of {PCAP_RECORD_HEADER} header bytes")
    return struct.unpack(reader.endian + "IIII", header)[2]


def read_pcap(path: Union[str, Path], stats: Optional[ReadStats] = None) -> Iterator[PacketRecord]:
    """
    Stream IPv4 packets from a pcap or pcapng file.

    Timestamps are rebased so the first IPv4 packet is at 0. Non-IPv4 frames
    are skipped and counted. A classic pcap record whose header or body is
    cut short ends the stream with a warning. pcapng blocks after the last
    packet are read past silently.

    Raises:
        TraceFormatError: the file is not a readable capture
    """
    stats = stats if stats is not None else ReadStats()
    try:
        reader = PcapReader(str(path))
    except (Scapy_Exception, OSError, EOFError) as exc:
        raise TraceFormatError(f"{path}: not a readable capture ({exc})") from exc

    classic = not isinstance(reader, PcapNgReader)
    origin: Optional[int] = None
    with reader:
        while True:
            caplen = None
            if classic:
                start = reader.f.tell()
                try:
                    caplen = _next_caplen(reader)
                except EOFError as exc:
                    stats.truncated = True
                    logger.warning(f"{path}: truncated record header after {stats.records} packets ({exc})")
                    break
                if caplen is None:
                    break
            try:
                pkt = reader.read_packet()
            except EOFError:
                break
            except (Scapy_Exception, ValueError) as exc:
                stats.truncated = True
                logger.warning(f"{path}: truncated record after {stats.records} packets ({exc})")
                break
            if caplen is not None:
                body = reader.f.tell() - start - PCAP_RECORD_HEADER
                if body < caplen:
                    stats.truncated = True
                    logger.warning(f"{path}: truncated record body after {stats.records} packets "
                                   f"({body} of {caplen} bytes)")
                    break
            if IP not in pkt:
                stats.skipped += 1
                continue
            ip = pkt[IP]
            ts_us = int(pkt.time * 1_000_000)
            if origin is None:
                origin = ts_us
            stats.records += 1
            yield PacketRecord(
                ts=max(ts_us - origin, 0),
                src=int(ipaddress.IPv4Address(ip.src)),
                dst=int(ipaddress.IPv4Address(ip.dst)),
                length=ip.len if ip.len is not None else len(ip),
            )
    if stats.skipped:
        logger.info(f"{path}: skipped {stats.skipped} non-IPv4 frames")


def read_csv(path: Union[str, Path], allow_reorder: bool = False, reorder_window: int = 1024,
             stats: Optional[ReadStats] = None) -> Iterator[PacketRecord]:
    """
    Stream records from a ``ts_us,src,dst,len`` CSV file.

    Timestamps must not go backwards. With ``allow_reorder`` a window of
    ``reorder_window`` records is sorted before release; disorder deeper
    than the window is still an error.

    Raises:
        TraceFormatError: bad header, bad field or timestamp disorder, naming the line
    """
    stats = stats if stats is not None else ReadStats()
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            return
        if [column.strip() for column in header] != CSV_COLUMNS:
            raise TraceFormatError(f"{path}: line 1: expected header {','.join(CSV_COLUMNS)}")

        pending: list = []
        last_ts = -1
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            record = _parse_row(path, line_no, row)
            if allow_reorder:
                heapq.heappush(pending, (record.ts, line_no, record))
                if len(pending) <= reorder_window:
                    continue
                _, released_line, record = heapq.heappop(pending)
                line_no = released_line
            if record.ts < last_ts:
                raise TraceFormatError(
                    f"{path}: line {line_no}: timestamp {record.ts} goes backwards (previous {last_ts})"
                )
            last_ts = record.ts
            stats.records += 1
            yield record

        while pending:
            _, line_no, record = heapq.heappop(pending)
            if record.ts < last_ts:
                raise TraceFormatError(
                    f"{path}: line {line_no}: timestamp {record.ts} goes backwards (previous {last_ts})"
                )
            last_ts = record.ts
            stats.records += 1
            yield record


def _parse_row(path, line_no: int, row: List[str]) -> PacketRecord:
    if len(row) != len(CSV_COLUMNS):
        raise TraceFormatError(f"{path}: line {line_no}: expected {len(CSV_COLUMNS)} fields, got {len(row)}")
    try:
        ts = int(row[0])
        length = int(row[3])
    except ValueError as exc:
        raise TraceFormatError(f"{path}: line {line_no}: {exc}") from exc
    try:
        src = parse_address(row[1])
        dst = parse_address(row[2])
    except ValueError as exc:
        raise TraceFormatError(f"{path}: line {line_no}: bad address ({exc})") from exc
    if ts < 0 or length < 0:
        raise TraceFormatError(f"{path}: line {line_no}: negative timestamp or length")
    return PacketRecord(ts=ts, src=src, dst=dst, length=length)


def write_csv(records: Iterable[PacketRecord], path: Union[str, Path]) -> int:
    """Write records with dotted-quad addresses; returns the row count."""
    count = 0
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(CSV_COLUMNS)
        for record in records:
            writer.writerow([
                record.ts,
                str(ipaddress.IPv4Address(record.src)),
                str(ipaddress.IPv4Address(record.dst)),
                record.length,
            ])
            count += 1
    return count


# ============ Generation ============

def generate(spec: SyntheticSpec, seed: int = 0) -> Iterator[PacketRecord]:
    """
    Deterministic synthetic packet stream for ``spec``.

    Base packets are evenly spaced at ``rate_pps``; each is assigned to a
    planted heavy, a planted spreader or the Zipf background by its share.
    Attack packets are merged in by timestamp.
    """
    rng = np.random.default_rng(seed)
    shift = KEY_BITS - spec.address_bits
    scale = 1 << shift

    population = rng.integers(0, 1 << spec.address_bits, size=spec.sources.population, dtype=np.int64) * scale
    ranks = np.arange(1, spec.sources.population + 1, dtype=np.float64)
    weights = ranks ** -spec.sources.zipf_exponent
    source_probs = weights / weights.sum()
    dst_population = rng.integers(0, 1 << KEY_BITS, size=spec.sources.dst_population, dtype=np.int64)

    planted = []
    for heavy in spec.planted:
        prefix = Prefix.parse(heavy.prefix).ancestor(spec.address_bits)
        host_bits = spec.address_bits - prefix.length
        planted.append((prefix.bits, host_bits))

    spreaders = []
    for spreader in spec.spreaders:
        pool = rng.integers(0, 1 << KEY_BITS, size=spreader.fanout, dtype=np.int64)
        spreaders.append([parse_address(spreader.source), pool, 0])

    shares = [p.share for p in spec.planted] + [s.share for s in spec.spreaders]
    background_share = max(0.0, 1.0 - sum(shares))
    category_probs = np.array(shares + [background_share], dtype=np.float64)
    category_probs /= category_probs.sum()
    background = len(shares)

    attack = spec.attack
    if attack is not None:
        attack_src = parse_address(attack.source)
        attack_dst = parse_address(attack.dst) if attack.dst else 0
        attack_start = attack.start_s * 1e6
        attack_end = spec.duration_s * 1e6
        if attack.duration_s is not None:
            attack_end = min(attack_end, attack_start + attack.duration_s * 1e6)
        attack_interval = 1e6 / attack.rate_pps
        attack_total = max(0, int(np.ceil((attack_end - attack_start) / attack_interval)))

    total = int(spec.duration_s * spec.rate_pps)
    interval = 1e6 / spec.rate_pps
    chunk = max(1, int(spec.rate_pps))
    duration_us = spec.duration_s * 1e6

    for start in range(0, total, chunk):
        stop = min(start + chunk, total)
        n = stop - start
        ts = np.floor(np.arange(start, stop, dtype=np.float64) * interval).astype(np.int64)
        categories = rng.choice(len(category_probs), size=n, p=category_probs)
        src = np.zeros(n, dtype=np.int64)
        dst = np.zeros(n, dtype=np.int64)

        mask = categories == background
        count = int(mask.sum())
        if count:
            picked = rng.choice(spec.sources.population, size=count, p=source_probs)
            src[mask] = population[picked]
            slot = (picked * 7919 + rng.integers(0, spec.sources.fanout, size=count)) % spec.sources.dst_population
            dst[mask] = dst_population[slot]

        for index, (base, host_bits) in enumerate(planted):
            mask = categories == index
            count = int(mask.sum())
            if count:
                hosts = rng.integers(0, 1 << host_bits, size=count, dtype=np.int64) * scale
                src[mask] = base + hosts
                dst[mask] = dst_population[rng.integers(0, spec.sources.dst_population, size=count)]

        for offset, state in enumerate(spreaders):
            mask = categories == len(planted) + offset
            count = int(mask.sum())
            if count:
                source, pool, position = state
                src[mask] = source
                dst[mask] = pool[(position + np.arange(count)) % len(pool)]
                state[2] = (position + count) % len(pool)

        lengths = rng.integers(spec.length_min, spec.length_max + 1, size=n, dtype=np.int64)

        if attack is not None and attack_total:
            window_lo = start * interval
            window_hi = duration_us if stop == total else stop * interval
            k_lo = max(0, int(np.ceil((window_lo - attack_start) / attack_interval)))
            k_hi = min(attack_total, max(0, int(np.ceil((window_hi - attack_start) / attack_interval))))
            if k_hi > k_lo:
                extra = k_hi - k_lo
                attack_ts = np.floor(attack_start + np.arange(k_lo, k_hi, dtype=np.float64) * attack_interval)
                ts = np.concatenate([ts, attack_ts.astype(np.int64)])
                src = np.concatenate([src, np.full(extra, attack_src, dtype=np.int64)])
                if attack.kind == "dos":
                    attack_dsts = np.full(extra, attack_dst, dtype=np.int64)
                else:
                    attack_dsts = rng.integers(0, 1 << KEY_BITS, size=extra, dtype=np.int64)
                dst = np.concatenate([dst, attack_dsts])
                lengths = np.concatenate([
                    lengths, rng.integers(spec.length_min, spec.length_max + 1, size=extra, dtype=np.int64)
                ])
                order = np.argsort(ts, kind="stable")
                ts, src, dst, lengths = ts[order], src[order], dst[order], lengths[order]

        for record in zip(ts.tolist(), src.tolist(), dst.tolist(), lengths.tolist()):
            yield PacketRecord(*record)


def hierarchy_example_trace(windows: int = 8, window_us: int = 1_000_000) -> List[PacketRecord]:
    """
    Three-bit example trace: each window carries HIERARCHY_EXAMPLE_VOLUMES.

    Leaf ``abc`` maps to key ``abc`` followed by 29 zero bits; packets of
    each leaf are evenly spread over the window.
    """
    victim = int(ipaddress.IPv4Address("192.0.2.1"))
    records = []
    for window in range(windows):
        base = window * window_us
        for leaf, volume in HIERARCHY_EXAMPLE_VOLUMES.items():
            key = Prefix.from_bitstring(leaf).bits
            for i in range(volume):
                offset = (2 * i + 1) * window_us // (2 * volume)
                records.append(PacketRecord(ts=base + offset, src=key, dst=victim, length=100))
    records.sort(key=lambda record: (record.ts, record.src))
    return records


def prefetch(records: Iterable[PacketRecord], size: int = 16, batch: int = 1024) -> Iterator[PacketRecord]:
    """
    Pull ``records`` on a background thread behind a bounded buffer.

    ``size`` bounds the number of in-flight batches. Producer errors are
    re-raised in the consumer. Closing the returned iterator early stops the
    producer and closes ``records``.
    """
    buffer: "queue.Queue" = queue.Queue(maxsize=size)
    stop = threading.Event()
    done = object()
    errors: List[BaseException] = []

    def offer(item) -> bool:
        while not stop.is_set():
            try:
                buffer.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def produce():
        chunk = []
        try:
            for record in records:
                if stop.is_set():
                    break
                chunk.append(record)
                if len(chunk) >= batch:
                    if not offer(chunk):
                        break
                    chunk = []
            else:
                if chunk:
                    offer(chunk)
        except BaseException as exc:
            errors.append(exc)
        finally:
            close = getattr(records, "close", None)
            if close is not None:
                close()
            offer(done)

    worker = threading.Thread(target=produce, name="trace-prefetch", daemon=True)
    worker.start()
    try:
        while True:
            item = buffer.get()
            if item is done:
                break
            yield from item
    finally:
        stop.set()
        worker.join()
    if errors:
        raise errors[0]


def open_trace(source: str, allow_reorder: bool = False, reorder_window: int = 1024,
               stats: Optional[ReadStats] = None) -> Iterator[PacketRecord]:
    """Open a capture, CSV file or the builtin example by name."""
    if source == BUILTIN_HIERARCHY:
        return iter(hierarchy_example_trace())
    suffix = Path(source).suffix.lower()
    if suffix in (".pcap", ".cap", ".pcapng"):
        return read_pcap(source, stats=stats)
    if suffix == ".csv":
        return read_csv(source, allow_reorder=allow_reorder, reorder_window=reorder_window, stats=stats)
    raise ConfigError(f"unsupported trace format {source!r}; expected .pcap or .csv")
