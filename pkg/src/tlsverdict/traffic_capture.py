"""Classic pcap reading, bidirectional TCP flow grouping and flow statistics.

Only Ethernet II / IPv4 / TCP frames are kept.  Packet length everywhere is
the original wire length recorded in the pcap record header.
"""

from __future__ import annotations

import io
import logging
import math
import os
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, Iterator

import numpy as np

log = logging.getLogger(__name__)

PCAP_MAGIC = 0xA1B2C3D4
PCAP_MAGIC_SWAPPED = 0xD4C3B2A1
LINKTYPE_ETHERNET = 1
ETHERTYPE_IPV4 = 0x0800
IPPROTO_TCP = 6

TCP_FIN = 0x01
TCP_SYN = 0x02
TCP_RST = 0x04
TCP_PSH = 0x08
TCP_ACK = 0x10

OUT = "out"  # client -> server
IN = "in"  # server -> client


class PcapError(ValueError):
    pass


class BadMagic(PcapError):
    pass


class TruncatedRecord(PcapError):
    pass


class EmptyFlow(ValueError):
    pass


@dataclass(frozen=True)
class PacketRecord:
    ts: float
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    tcp_flags: int
    payload: bytes
    wire_len: int
    seq: int = 0
    ack: int = 0
    # exact capture time in microseconds; float ``ts`` loses precision at epoch scale
    ts_us: int | None = None

    @property
    def is_syn(self) -> bool:
        return bool(self.tcp_flags & TCP_SYN) and not self.tcp_flags & TCP_ACK


@dataclass(frozen=True, order=True)
class FlowKey:
    client_ip: str
    server_ip: str
    client_port: int
    server_port: int
    protocol: str = "TCP"


@dataclass
class Flow:
    key: FlowKey
    packets: list[PacketRecord] = field(default_factory=list)
    directions: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.packets)

    def direction_of(self, pkt: PacketRecord) -> str:
        return OUT if (pkt.src_ip, pkt.src_port) == (self.key.client_ip, self.key.client_port) else IN

    def tagged(self) -> Iterator[tuple[str, PacketRecord]]:
        return zip(self.directions, self.packets)


@dataclass(frozen=True)
class FlowFeatures:
    in_bytes: int
    out_bytes: int
    in_packets: int
    out_packets: int
    src_port: int
    dst_port: int
    duration_s: float
    len_min: float
    len_max: float
    len_mean: float
    len_std: float
    iat_min: float
    iat_max: float
    iat_mean: float
    iat_std: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


# --------------------------------------------------------------- read ----


class PcapReader:
    """Iterate TCP/IPv4 packets of a classic pcap stream.

    ``skipped`` counts frames that were not IPv4/TCP.
    """

    def __init__(self, fh: BinaryIO):
        self._fh = fh
        header = fh.read(24)
        if len(header) < 24:
            raise BadMagic("file shorter than a pcap global header")
        magic = struct.unpack("<I", header[:4])[0]
        if magic == PCAP_MAGIC:
            self._endian = "<"
        elif magic == PCAP_MAGIC_SWAPPED:
            self._endian = ">"
        else:
            raise BadMagic(f"unknown pcap magic 0x{magic:08x}")
        (_, self.version_major, self.version_minor, _, _, self.snaplen, self.linktype) = struct.unpack(
            self._endian + "IHHiIII", header
        )
        if self.linktype != LINKTYPE_ETHERNET:
            raise PcapError(f"unsupported linktype {self.linktype}")
        self.skipped = 0
        self.frames = 0

    def __iter__(self) -> Iterator[PacketRecord]:
        rec_hdr = struct.Struct(self._endian + "IIII")
        while True:
            hdr = self._fh.read(16)
            if not hdr:
                return
            if len(hdr) < 16:
                raise TruncatedRecord("partial record header at end of file")
            ts_sec, ts_usec, incl_len, orig_len = rec_hdr.unpack(hdr)
            data = self._fh.read(incl_len)
            if len(data) < incl_len:
                raise TruncatedRecord(f"record claims {incl_len} bytes, only {len(data)} remain")
            self.frames += 1
            pkt = parse_frame(ts_sec + ts_usec / 1e6, data, orig_len, ts_sec * 1_000_000 + ts_usec)
            if pkt is None:
                self.skipped += 1
                continue
            yield pkt


def _open(source) -> BinaryIO:
    if isinstance(source, (bytes, bytearray, memoryview)):
        return io.BytesIO(bytes(source))
    if isinstance(source, (str, os.PathLike)):
        return open(source, "rb")
    return source


def read_pcap(source) -> list[PacketRecord]:
    """Read every IPv4/TCP packet from a path, bytes, or binary file object."""
    fh = _open(source)
    try:
        reader = PcapReader(fh)
        packets = list(reader)
    finally:
        if fh is not source:
            fh.close()
    if reader.skipped:
        log.debug("skipped %d non-IPv4/TCP frames", reader.skipped)
    return packets


def _ip(raw: bytes) -> str:
    return ".".join(str(b) for b in raw)


def parse_frame(ts: float, frame: bytes, wire_len: int, ts_us: int | None = None) -> PacketRecord | None:
    if len(frame) < 14 + 20:
        return None
    if struct.unpack("!H", frame[12:14])[0] != ETHERTYPE_IPV4:
        return None
    ip = frame[14:]
    if ip[0] >> 4 != 4:
        return None
    ihl = (ip[0] & 0x0F) * 4
    total_len = struct.unpack("!H", ip[2:4])[0]
    if ip[9] != IPPROTO_TCP or ihl < 20 or len(ip) < ihl + 20:
        return None
    # fragments other than the first carry no TCP header
    if struct.unpack("!H", ip[6:8])[0] & 0x1FFF:
        return None
    end = min(len(ip), total_len) if total_len >= ihl else len(ip)
    tcp = ip[ihl:end]
    if len(tcp) < 20:
        return None
    sport, dport, seq, ack, off_flags = struct.unpack("!HHIIH", tcp[:14])
    data_off = (off_flags >> 12) * 4
    if data_off < 20 or data_off > len(tcp):
        return None
    return PacketRecord(
        ts=ts,
        src_ip=_ip(ip[12:16]),
        dst_ip=_ip(ip[16:20]),
        src_port=sport,
        dst_port=dport,
        tcp_flags=off_flags & 0x1FF,
        payload=bytes(tcp[data_off:]),
        wire_len=max(wire_len, len(frame)),
        seq=seq,
        ack=ack,
        ts_us=ts_us,
    )


# -------------------------------------------------------------- write ----


def ethernet_tcp_frame(
    src_ip: str,
    dst_ip: str,
    src_port: int,
    dst_port: int,
    payload: bytes = b"",
    flags: int = TCP_ACK,
    seq: int = 0,
    ack: int = 0,
) -> bytes:
    """Build an Ethernet/IPv4/TCP frame (checksums left zero)."""
    tcp = struct.pack("!HHIIHHHH", src_port, dst_port, seq & 0xFFFFFFFF, ack & 0xFFFFFFFF, (5 << 12) | flags, 65535, 0, 0)
    total = 20 + len(tcp) + len(payload)
    ip = struct.pack(
        "!BBHHHBBH4s4s",
        0x45,
        0,
        total,
        0,
        0x4000,
        64,
        IPPROTO_TCP,
        0,
        bytes(int(x) for x in src_ip.split(".")),
        bytes(int(x) for x in dst_ip.split(".")),
    )
    eth = b"\x02\x00\x00\x00\x00\x02" + b"\x02\x00\x00\x00\x00\x01" + struct.pack("!H", ETHERTYPE_IPV4)
    return eth + ip + tcp + payload


def write_pcap(frames: Iterable[tuple[float, bytes]], byteorder: str = "<", snaplen: int = 65535) -> bytes:
    """Serialize ``(timestamp, frame)`` pairs as a classic microsecond pcap."""
    out = io.BytesIO()
    out.write(struct.pack(byteorder + "IHHiIII", PCAP_MAGIC, 2, 4, 0, 0, snaplen, LINKTYPE_ETHERNET))
    for ts, frame in frames:
        sec = int(math.floor(ts))
        usec = int(round((ts - sec) * 1e6))
        if usec == 1_000_000:
            sec, usec = sec + 1, 0
        out.write(struct.pack(byteorder + "IIII", sec, usec, len(frame), len(frame)))
        out.write(frame)
    return out.getvalue()


# -------------------------------------------------------------- flows ----


def assemble_flows(packets: Iterable[PacketRecord]) -> dict[FlowKey, Flow]:
    """Group packets into bidirectional flows keyed by the client-first 5-tuple.

    The client is the sender of the first pure SYN; without one it is the
    sender of the flow's first packet.  Flows are returned in order of their
    first packet.
    """
    groups: dict[frozenset, list[PacketRecord]] = {}
    for pkt in packets:
        ends = frozenset({(pkt.src_ip, pkt.src_port), (pkt.dst_ip, pkt.dst_port)})
        groups.setdefault(ends, []).append(pkt)

    flows: dict[FlowKey, Flow] = {}
    for pkts in groups.values():
        opener = next((p for p in pkts if p.is_syn), pkts[0])
        key = FlowKey(opener.src_ip, opener.dst_ip, opener.src_port, opener.dst_port)
        flow = Flow(key)
        for p in pkts:
            flow.packets.append(p)
            flow.directions.append(flow.direction_of(p))
        flows[key] = flow
    return flows


def compute_flow_features(flow: Flow) -> FlowFeatures:
    if not flow.packets:
        raise EmptyFlow(f"flow {flow.key} has no packets")
    lengths = np.array([p.wire_len for p in flow.packets], dtype=float)
    if all(p.ts_us is not None for p in flow.packets):
        us = np.array([p.ts_us for p in flow.packets], dtype=np.int64)
        iat = np.diff(us) / 1e6
        duration = (us[-1] - us[0]) / 1e6
    else:
        ts = np.array([p.ts for p in flow.packets], dtype=float)
        iat = np.diff(ts)
        duration = ts[-1] - ts[0]
    if iat.size == 0:
        iat = np.zeros(1)
    outbound = np.array([d == OUT for d in flow.directions])
    return FlowFeatures(
        in_bytes=int(lengths[~outbound].sum()),
        out_bytes=int(lengths[outbound].sum()),
        in_packets=int((~outbound).sum()),
        out_packets=int(outbound.sum()),
        src_port=flow.key.client_port,
        dst_port=flow.key.server_port,
        duration_s=float(duration),
        len_min=float(lengths.min()),
        len_max=float(lengths.max()),
        len_mean=float(lengths.mean()),
        len_std=float(lengths.std()),
        iat_min=float(iat.min()),
        iat_max=float(iat.max()),
        iat_mean=float(iat.mean()),
        iat_std=float(iat.std()),
    )


class _Running:
    """Welford accumulator with min/max (population variance)."""

    __slots__ = ("n", "mean", "m2", "lo", "hi")

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0
        self.lo = math.inf
        self.hi = -math.inf

    def push(self, x: float):
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)
        self.lo = min(self.lo, x)
        self.hi = max(self.hi, x)

    def stats(self) -> tuple[float, float, float, float]:
        if not self.n:
            return 0.0, 0.0, 0.0, 0.0
        return self.lo, self.hi, self.mean, math.sqrt(max(self.m2 / self.n, 0.0))


class FlowAccumulator:
    """Incremental counterpart of :func:`compute_flow_features`."""

    def __init__(self, key: FlowKey):
        self.key = key
        self.counts = {IN: [0, 0], OUT: [0, 0]}
        self.lengths = _Running()
        self.iats = _Running()
        self.first_ts = None
        self.last_ts = None
        self._exact = True

    def push(self, pkt: PacketRecord, direction: str):
        c = self.counts[direction]
        c[0] += pkt.wire_len
        c[1] += 1
        self.lengths.push(float(pkt.wire_len))
        self._exact = self._exact and pkt.ts_us is not None
        t = pkt.ts_us if self._exact else pkt.ts
        if self.last_ts is None:
            self.first_ts = t
        else:
            self.iats.push(self._seconds(t - self.last_ts))
        self.last_ts = t

    def _seconds(self, delta):
        return delta / 1e6 if self._exact else delta

    def features(self) -> FlowFeatures:
        if self.first_ts is None:
            raise EmptyFlow(f"flow {self.key} has no packets")
        lmin, lmax, lmean, lstd = self.lengths.stats()
        imin, imax, imean, istd = self.iats.stats()
        return FlowFeatures(
            in_bytes=self.counts[IN][0],
            out_bytes=self.counts[OUT][0],
            in_packets=self.counts[IN][1],
            out_packets=self.counts[OUT][1],
            src_port=self.key.client_port,
            dst_port=self.key.server_port,
            duration_s=float(self._seconds(self.last_ts - self.first_ts)),
            len_min=lmin,
            len_max=lmax,
            len_mean=lmean,
            len_std=lstd,
            iat_min=imin,
            iat_max=imax,
            iat_mean=imean,
            iat_std=istd,
        )
