"""Cleartext handshake metadata from a TCP flow: selected ciphersuite,
server extensions, record version and SNI.  Nothing is decrypted.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from tlsverdict.traffic_capture import IN, OUT, TCP_SYN, Flow

CT_CHANGE_CIPHER_SPEC = 20
CT_ALERT = 21
CT_HANDSHAKE = 22
CT_APPLICATION_DATA = 23

HS_CLIENT_HELLO = 1
HS_SERVER_HELLO = 2
HS_CERTIFICATE = 11

EXT_SERVER_NAME = 0x0000
EXT_SUPPORTED_VERSIONS = 0x002B

MAX_RECORD_LENGTH = 2**14 + 2048

WEAK_CIPHERSUITES = frozenset({0x0004, 0x0005})
MALWARE_FAVORED_CIPHERSUITES = frozenset({0x000A, 0x0004, 0x006B, 0x0005})

DEFAULT_EXTENSION_REGISTRY = (
    0x0000, 0x0001, 0x0005, 0x000A, 0x000B, 0x000D, 0x000E,
    0x000F, 0x0010, 0x0012, 0x0015, 0x0016, 0x0017, 0x001C,
    0x0023, 0x0029, 0x002B, 0x002D, 0x0031, 0x0033, 0xFF01,
)  # fmt: skip
EXTENSION_VECTOR_LENGTH = 21


class TlsParseError(ValueError):
    pass


class MalformedRecord(TlsParseError):
    pass


class NoServerHello(TlsParseError):
    pass


@dataclass(frozen=True)
class TlsRecord:
    content_type: int
    version: int
    fragment: bytes


@dataclass(frozen=True)
class ParsedRecords:
    records: list[TlsRecord]
    truncated: bool = False


@dataclass(frozen=True)
class TlsServerInfo:
    selected_ciphersuite: int
    server_extensions: tuple[int, ...]
    tls_version: int
    sni: str | None = None
    handshake_complete: bool = False
    server_hello_version: int = 0
    tls13: bool = False
    # DER blobs from a cleartext Certificate message (TLS <= 1.2), leaf first
    certificates: tuple[bytes, ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.server_extensions)) != len(self.server_extensions):
            raise ValueError("duplicate server extension ids")

    def to_dict(self) -> dict:
        return {
            "selected_ciphersuite": self.selected_ciphersuite,
            "server_extensions": list(self.server_extensions),
            "tls_version": self.tls_version,
            "sni": self.sni,
            "handshake_complete": self.handshake_complete,
            "server_hello_version": self.server_hello_version,
            "tls13": self.tls13,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TlsServerInfo":
        return cls(
            selected_ciphersuite=d["selected_ciphersuite"],
            server_extensions=tuple(d["server_extensions"]),
            tls_version=d["tls_version"],
            sni=d.get("sni"),
            handshake_complete=d.get("handshake_complete", False),
            server_hello_version=d.get("server_hello_version", 0),
            tls13=d.get("tls13", False),
        )


@dataclass(frozen=True)
class ExtensionRegistry:
    ids: tuple[int, ...] = DEFAULT_EXTENSION_REGISTRY
    version: str = "default-21-v1"

    def __post_init__(self):
        if len(self.ids) != EXTENSION_VECTOR_LENGTH or len(set(self.ids)) != len(self.ids):
            raise ValueError(f"registry must list {EXTENSION_VECTOR_LENGTH} distinct extension ids")

    @classmethod
    def from_json(cls, text: str, version: str | None = None) -> "ExtensionRegistry":
        ids = tuple(int(x, 16) if isinstance(x, str) else int(x) for x in json.loads(text))
        return cls(ids, version or "custom:" + ",".join(f"{i:04x}" for i in ids))

    def to_json(self) -> str:
        return json.dumps([f"0x{i:04x}" for i in self.ids])


@dataclass(frozen=True)
class ExtensionVector:
    bits: tuple[int, ...]
    registry_version: str
    overflow: int = 0

    def __post_init__(self):
        if len(self.bits) != EXTENSION_VECTOR_LENGTH or any(b not in (0, 1) for b in self.bits):
            raise ValueError("extension vector must be 21 binary values")

    def popcount(self) -> int:
        return sum(self.bits)


# ------------------------------------------------------------- streams ---


def _direction_stream(segments: list[tuple[int, bytes]], isn: int | None) -> bytes:
    if not segments:
        return b""
    base = isn if isn is not None else segments[0][0]
    rel = sorted(((seq - base) & 0xFFFFFFFF, data) for seq, data in segments)
    # a segment "before" base after wraparound shows up near 2**32
    rel = [(off - 2**32 if off > 2**31 else off, data) for off, data in rel]
    rel.sort(key=lambda x: x[0])
    if isn is None:
        start = rel[0][0]
        rel = [(off - start, data) for off, data in rel]
    out = bytearray()
    for off, data in rel:
        end = off + len(data)
        if off > len(out):
            break  # gap: truncate here
        if end > len(out):
            out += data[len(out) - off :]
    return bytes(out)


def reassemble_streams(flow: Flow) -> dict[str, bytes]:
    """In-order, de-duplicated payload per direction (``c2s``/``s2c``)."""
    segs = {OUT: [], IN: []}
    isn: dict[str, int | None] = {OUT: None, IN: None}
    for direction, pkt in flow.tagged():
        if pkt.tcp_flags & TCP_SYN and isn[direction] is None:
            isn[direction] = (pkt.seq + 1) & 0xFFFFFFFF
        if pkt.payload:
            segs[direction].append((pkt.seq, pkt.payload))
    return {
        "c2s": _direction_stream(segs[OUT], isn[OUT]),
        "s2c": _direction_stream(segs[IN], isn[IN]),
    }


def parse_records(stream: bytes) -> ParsedRecords:
    """Split a byte stream on 5-byte TLS record headers."""
    records = []
    pos = 0
    while pos < len(stream):
        if len(stream) - pos < 5:
            return ParsedRecords(records, truncated=True)
        ctype, version, length = struct.unpack("!BHH", stream[pos : pos + 5])
        if length > MAX_RECORD_LENGTH:
            raise MalformedRecord(f"record length {length} exceeds {MAX_RECORD_LENGTH}")
        if pos + 5 + length > len(stream):
            return ParsedRecords(records, truncated=True)
        records.append(TlsRecord(ctype, version, stream[pos + 5 : pos + 5 + length]))
        pos += 5 + length
    return ParsedRecords(records)


# ---------------------------------------------------------- handshake ---


def _handshake_messages(records: Sequence[TlsRecord]) -> list[tuple[int, bytes]]:
    """Cleartext handshake messages up to the first ChangeCipherSpec."""
    buf = bytearray()
    for rec in records:
        if rec.content_type == CT_CHANGE_CIPHER_SPEC:
            break
        if rec.content_type == CT_HANDSHAKE:
            buf += rec.fragment
    msgs = []
    pos = 0
    while pos + 4 <= len(buf):
        mtype = buf[pos]
        mlen = int.from_bytes(buf[pos + 1 : pos + 4], "big")
        if pos + 4 + mlen > len(buf):
            break
        msgs.append((mtype, bytes(buf[pos + 4 : pos + 4 + mlen])))
        pos += 4 + mlen
    return msgs


def _parse_extensions(body: bytes, pos: int) -> list[tuple[int, bytes]]:
    if pos + 2 > len(body):
        return []
    total = struct.unpack("!H", body[pos : pos + 2])[0]
    pos += 2
    end = pos + total
    if end > len(body):
        raise TlsParseError("extensions block overruns message")
    exts = []
    while pos + 4 <= end:
        etype, elen = struct.unpack("!HH", body[pos : pos + 4])
        if pos + 4 + elen > end:
            raise TlsParseError("extension overruns block")
        exts.append((etype, body[pos + 4 : pos + 4 + elen]))
        pos += 4 + elen
    return exts


def parse_server_hello_body(body: bytes) -> tuple[int, int, list[tuple[int, bytes]]]:
    """Return (legacy_version, cipher_suite, extensions) of a ServerHello."""
    if len(body) < 38:
        raise TlsParseError("ServerHello too short")
    version = struct.unpack("!H", body[:2])[0]
    sid_len = body[34]
    pos = 35 + sid_len
    if pos + 3 > len(body):
        raise TlsParseError("ServerHello truncated after session id")
    cipher = struct.unpack("!H", body[pos : pos + 2])[0]
    pos += 3  # cipher suite + compression method
    return version, cipher, _parse_extensions(body, pos)


def parse_client_hello_sni(body: bytes) -> str | None:
    try:
        pos = 34
        pos += 1 + body[pos]
        pos += 2 + struct.unpack("!H", body[pos : pos + 2])[0]
        pos += 1 + body[pos]
        for etype, data in _parse_extensions(body, pos):
            if etype != EXT_SERVER_NAME or len(data) < 5:
                continue
            p = 2
            while p + 3 <= len(data):
                ntype = data[p]
                nlen = struct.unpack("!H", data[p + 1 : p + 3])[0]
                if ntype == 0:
                    return data[p + 3 : p + 3 + nlen].decode("ascii", errors="replace")
                p += 3 + nlen
    except (IndexError, struct.error, TlsParseError):
        return None
    return None


def _certificate_list(body: bytes) -> tuple[bytes, ...]:
    certs = []
    if len(body) < 3:
        return ()
    end = 3 + int.from_bytes(body[:3], "big")
    pos = 3
    while pos + 3 <= min(end, len(body)):
        clen = int.from_bytes(body[pos : pos + 3], "big")
        certs.append(body[pos + 3 : pos + 3 + clen])
        pos += 3 + clen
    return tuple(certs)


def parse_server_hello(
    s2c_records: Sequence[TlsRecord], c2s_records: Sequence[TlsRecord] = ()
) -> TlsServerInfo:
    """Pull the server's ciphersuite choice and extension ids out of the
    server-to-client records; the SNI comes from the client's records."""
    sni = None
    for mtype, body in _handshake_messages(c2s_records):
        if mtype == HS_CLIENT_HELLO:
            sni = parse_client_hello_sni(body)
            break

    hello_index = None
    for i, rec in enumerate(s2c_records):
        if rec.content_type == CT_HANDSHAKE and rec.fragment[:1] == bytes([HS_SERVER_HELLO]):
            hello_index = i
            break
    msgs = _handshake_messages(s2c_records)
    hello = next((body for mtype, body in msgs if mtype == HS_SERVER_HELLO), None)
    if hello is None:
        raise NoServerHello("no ServerHello in server-to-client stream")
    if hello_index is None:
        hello_index = next(i for i, r in enumerate(s2c_records) if r.content_type == CT_HANDSHAKE)

    legacy_version, cipher, exts = parse_server_hello_body(hello)
    ext_ids = []
    tls13 = False
    for etype, data in exts:
        if etype in ext_ids:
            continue
        ext_ids.append(etype)
        if etype == EXT_SUPPORTED_VERSIONS and data == b"\x03\x04":
            tls13 = True

    later = [r.content_type for r in s2c_records[hello_index + 1 :]]
    if tls13:
        complete = CT_APPLICATION_DATA in later or CT_CHANGE_CIPHER_SPEC in later
    else:
        complete = CT_CHANGE_CIPHER_SPEC in later
    certs = next((_certificate_list(body) for mtype, body in msgs if mtype == HS_CERTIFICATE), ())
    return TlsServerInfo(
        selected_ciphersuite=cipher,
        server_extensions=tuple(ext_ids),
        tls_version=s2c_records[hello_index].version,
        sni=sni,
        handshake_complete=complete,
        server_hello_version=legacy_version,
        tls13=tls13,
        certificates=certs,
    )


def inspect_flow(flow: Flow) -> TlsServerInfo:
    """Reassemble both directions of ``flow`` and parse its handshake."""
    streams = reassemble_streams(flow)
    s2c = parse_records(streams["s2c"]).records
    try:
        c2s = parse_records(streams["c2s"]).records
    except MalformedRecord:
        c2s = []
    return parse_server_hello(s2c, c2s)


def extension_vector(info: TlsServerInfo, registry: ExtensionRegistry | None = None) -> ExtensionVector:
    registry = registry or ExtensionRegistry()
    present = set(info.server_extensions)
    bits = tuple(int(ext_id in present) for ext_id in registry.ids)
    overflow = len(present - set(registry.ids))
    return ExtensionVector(bits, registry.version, overflow)


def is_weak_ciphersuite(code: int, weak: Iterable[int] = WEAK_CIPHERSUITES) -> bool:
    return code in weak


def is_malware_favored(code: int) -> bool:
    return code in MALWARE_FAVORED_CIPHERSUITES


# --------------------------------------------------------- encoders -----
# Used by the synthetic corpus and by tests to build handshakes.


def encode_record(content_type: int, fragment: bytes, version: int = 0x0303) -> bytes:
    return struct.pack("!BHH", content_type, version, len(fragment)) + fragment


def encode_handshake(msg_type: int, body: bytes) -> bytes:
    return bytes([msg_type]) + len(body).to_bytes(3, "big") + body


def _encode_extensions(extensions: Iterable[tuple[int, bytes]]) -> bytes:
    block = b"".join(struct.pack("!HH", t, len(d)) + d for t, d in extensions)
    return struct.pack("!H", len(block)) + block


def encode_server_hello(
    cipher: int,
    extensions: Iterable[int | tuple[int, bytes]] = (),
    version: int = 0x0303,
    random: bytes = b"\x00" * 32,
    session_id: bytes = b"",
    include_empty_extensions: bool = False,
) -> bytes:
    exts = [(e, b"") if isinstance(e, int) else e for e in extensions]
    body = struct.pack("!H", version) + random + bytes([len(session_id)]) + session_id
    body += struct.pack("!HB", cipher, 0)
    if exts or include_empty_extensions:
        body += _encode_extensions(exts)
    return encode_handshake(HS_SERVER_HELLO, body)


def encode_client_hello(
    sni: str | None = None,
    ciphers: Sequence[int] = (0xC02F, 0x000A),
    extensions: Iterable[tuple[int, bytes]] = (),
    random: bytes = b"\x00" * 32,
) -> bytes:
    body = struct.pack("!H", 0x0303) + random + b"\x00"
    body += struct.pack("!H", 2 * len(ciphers)) + b"".join(struct.pack("!H", c) for c in ciphers)
    body += b"\x01\x00"
    exts = list(extensions)
    if sni is not None:
        name = sni.encode("ascii")
        entry = b"\x00" + struct.pack("!H", len(name)) + name
        exts.insert(0, (EXT_SERVER_NAME, struct.pack("!H", len(entry)) + entry))
    body += _encode_extensions(exts)
    return encode_handshake(HS_CLIENT_HELLO, body)


def encode_certificate_message(ders: Sequence[bytes]) -> bytes:
    entries = b"".join(len(d).to_bytes(3, "big") + d for d in ders)
    return encode_handshake(HS_CERTIFICATE, len(entries).to_bytes(3, "big") + entries)
