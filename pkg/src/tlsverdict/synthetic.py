"""Seeded synthetic corpus of TLS sessions (certificate chain + sandbox pcap).

No public dataset accompanies the method, so this generator supplies
labelled sessions with the traits the classifiers are meant to pick up:
malicious servers mostly pick one of four legacy ciphersuites, select at
most one extension, and often present self-signed certificates; benign
servers pick modern AEAD suites and 3-8 extensions.

The certificate builder below writes structurally valid DER with dummy key
and signature bytes.  Nothing here verifies signatures, so that is enough.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Sequence

import numpy as np

from tlsverdict.ml_core.dataset import BENIGN, MALICIOUS
from tlsverdict.tls_inspector import (
    CT_APPLICATION_DATA,
    CT_CHANGE_CIPHER_SPEC,
    CT_HANDSHAKE,
    DEFAULT_EXTENSION_REGISTRY,
    MALWARE_FAVORED_CIPHERSUITES,
    encode_certificate_message,
    encode_client_hello,
    encode_handshake,
    encode_record,
    encode_server_hello,
)
from tlsverdict.traffic_capture import TCP_ACK, TCP_FIN, TCP_PSH, TCP_SYN, ethernet_tcp_frame, write_pcap
from tlsverdict.x509_codec import (
    OID_AUTHORITY_KEY_IDENTIFIER,
    OID_BASIC_CONSTRAINTS,
    OID_COMMON_NAME,
    OID_KEY_USAGE,
    OID_NAME_CONSTRAINTS,
    OID_SUBJECT_ALT_NAME,
    OID_SUBJECT_KEY_IDENTIFIER,
)

BENIGN_CIPHERSUITES = (0xC02F, 0xC030, 0xC02B, 0xC02C, 0xCCA8, 0xCCA9, 0x009C, 0x009D, 0xC013, 0xC014)
FAVORED = tuple(sorted(MALWARE_FAVORED_CIPHERSUITES))
REFERENCE_TIME = datetime(2024, 6, 1, 12, 0, 0, tzinfo=timezone.utc)

# ------------------------------------------------------------- DER -------


def der(tag: int, content: bytes) -> bytes:
    n = len(content)
    if n < 0x80:
        length = bytes([n])
    else:
        raw = n.to_bytes((n.bit_length() + 7) // 8, "big")
        length = bytes([0x80 | len(raw)]) + raw
    return bytes([tag]) + length + content


def der_seq(*items: bytes) -> bytes:
    return der(0x30, b"".join(items))


def der_int(value: int) -> bytes:
    raw = value.to_bytes(max(1, (value.bit_length() + 8) // 8), "big", signed=True)
    return der(0x02, raw)


def der_bool(value: bool) -> bytes:
    return der(0x01, b"\xff" if value else b"\x00")


def der_oid(dotted: str) -> bytes:
    arcs = [int(a) for a in dotted.split(".")]
    body = bytearray()
    for arc in [arcs[0] * 40 + arcs[1], *arcs[2:]]:
        chunk = [arc & 0x7F]
        arc >>= 7
        while arc:
            chunk.append(0x80 | (arc & 0x7F))
            arc >>= 7
        body += bytes(reversed(chunk))
    return der(0x06, bytes(body))


def der_octets(value: bytes) -> bytes:
    return der(0x04, value)


def der_time(t: datetime) -> bytes:
    t = t.astimezone(timezone.utc)
    if 1950 <= t.year < 2050:
        return der(0x17, t.strftime("%y%m%d%H%M%SZ").encode())
    return der(0x18, t.strftime("%Y%m%d%H%M%SZ").encode())


def der_name(cn: str, org: str | None = None) -> bytes:
    rdns = []
    if org:
        rdns.append(der(0x31, der_seq(der_oid("2.5.4.10"), der(0x0C, org.encode()))))
    rdns.append(der(0x31, der_seq(der_oid(OID_COMMON_NAME), der(0x0C, cn.encode()))))
    return der_seq(*rdns)


def der_bits(bits: Sequence[int]) -> bytes:
    """Named-bit BIT STRING with trailing zero bits trimmed."""
    if not bits:
        return der(0x03, b"\x00")
    top = max(bits)
    nbytes = top // 8 + 1
    buf = bytearray(nbytes)
    for b in bits:
        buf[b // 8] |= 0x80 >> (b % 8)
    unused = 7 - top % 8
    return der(0x03, bytes([unused]) + bytes(buf))


@dataclass
class CertSpec:
    """Field set for :func:`build_certificate`; None means "omit"."""

    subject_cn: str
    issuer_cn: str | None = None
    org: str | None = None
    issuer_org: str | None = None
    serial: int = 1
    not_before: datetime = REFERENCE_TIME - timedelta(days=30)
    not_after: datetime = REFERENCE_TIME + timedelta(days=335)
    san: Sequence[str] | None = None
    key_usage: Sequence[int] | None = None
    key_usage_critical: bool = True
    basic_constraints: tuple[bool, int | None] | None = None
    name_constraints: tuple[Sequence[str], Sequence[str]] | None = None
    ski: bytes | None = None
    aki: bytes | None = None
    extra_extensions: Sequence[tuple[str, bool, bytes]] = field(default_factory=tuple)
    version: int = 3


def _extension(oid: str, critical: bool, value: bytes) -> bytes:
    parts = [der_oid(oid)]
    if critical:
        parts.append(der_bool(True))
    parts.append(der_octets(value))
    return der_seq(*parts)


def build_certificate(spec: CertSpec) -> bytes:
    exts = []
    if spec.basic_constraints is not None:
        is_ca, path_len = spec.basic_constraints
        inner = (der_bool(True) if is_ca else b"") + (der_int(path_len) if path_len is not None else b"")
        exts.append(_extension(OID_BASIC_CONSTRAINTS, True, der_seq(inner)))
    if spec.key_usage is not None:
        exts.append(_extension(OID_KEY_USAGE, spec.key_usage_critical, der_bits(spec.key_usage)))
    if spec.san is not None:
        exts.append(_extension(OID_SUBJECT_ALT_NAME, False, der_seq(*(der(0x82, n.encode()) for n in spec.san))))
    if spec.name_constraints is not None:
        permitted, excluded = spec.name_constraints
        parts = []
        if permitted:
            parts.append(der(0xA0, b"".join(der_seq(der(0x82, n.encode())) for n in permitted)))
        if excluded:
            parts.append(der(0xA1, b"".join(der_seq(der(0x82, n.encode())) for n in excluded)))
        exts.append(_extension(OID_NAME_CONSTRAINTS, True, der_seq(*parts)))
    if spec.ski is not None:
        exts.append(_extension(OID_SUBJECT_KEY_IDENTIFIER, False, der_octets(spec.ski)))
    if spec.aki is not None:
        exts.append(_extension(OID_AUTHORITY_KEY_IDENTIFIER, False, der_seq(der(0x80, spec.aki))))
    for oid, critical, raw in spec.extra_extensions:
        exts.append(_extension(oid, critical, raw))

    alg = der_seq(der_oid("1.2.840.113549.1.1.11"), der(0x05, b""))
    issuer_cn = spec.issuer_cn if spec.issuer_cn is not None else spec.subject_cn
    issuer_org = spec.issuer_org if spec.issuer_cn is not None else spec.org
    key_bits = hashlib.sha256(spec.subject_cn.encode() + spec.serial.to_bytes(8, "big")).digest()
    spki = der_seq(der_seq(der_oid("1.2.840.113549.1.1.1"), der(0x05, b"")), der(0x03, b"\x00" + key_bits))
    tbs = []
    if spec.version != 1:
        tbs.append(der(0xA0, der_int(spec.version - 1)))
    tbs += [
        der_int(spec.serial),
        alg,
        der_name(issuer_cn, issuer_org),
        der_seq(der_time(spec.not_before), der_time(spec.not_after)),
        der_name(spec.subject_cn, spec.org),
        spki,
    ]
    if exts and spec.version == 3:
        tbs.append(der(0xA3, der_seq(*exts)))
    signature = der(0x03, b"\x00" + hashlib.sha256(b"".join(tbs)).digest())
    return der_seq(der_seq(*tbs), alg, signature)


def key_id(name: str) -> bytes:
    return hashlib.sha1(name.encode()).digest()


# ------------------------------------------------------------ traffic ----


@dataclass(frozen=True)
class TrafficSpec:
    ciphersuite: int
    extensions: tuple[int, ...]
    sni: str
    client_ip: str = "10.0.0.2"
    server_ip: str = "198.51.100.7"
    client_port: int = 50000
    server_port: int = 443
    app_records: tuple[tuple[str, int, float], ...] = ()  # (direction, size, gap)
    chain: tuple[bytes, ...] = ()
    start: float = 1_700_000_000.0
    complete: bool = True


class _TcpSide:
    def __init__(self, isn: int):
        self.seq = isn


def build_session_pcap(spec: TrafficSpec, mss: int = 1460, byteorder: str = "<") -> bytes:
    """A full TCP/TLS 1.2 session: handshake, application data, FIN."""
    c = _TcpSide(1000)
    s = _TcpSide(50000)
    frames: list[tuple[float, bytes]] = []
    t = spec.start

    def send(direction: str, payload: bytes, flags: int, gap: float):
        nonlocal t
        t += gap
        src, dst = (c, s) if direction == "c" else (s, c)
        if direction == "c":
            ips = (spec.client_ip, spec.server_ip, spec.client_port, spec.server_port)
        else:
            ips = (spec.server_ip, spec.client_ip, spec.server_port, spec.client_port)
        chunks = [payload[i : i + mss] for i in range(0, len(payload), mss)] or [b""]
        for chunk in chunks:
            frames.append((t, ethernet_tcp_frame(*ips, chunk, flags, src.seq, dst.seq)))
            src.seq += len(chunk) + (1 if flags & (TCP_SYN | TCP_FIN) else 0)
            t += 0.0001

    send("c", b"", TCP_SYN, 0.0)
    send("s", b"", TCP_SYN | TCP_ACK, 0.02)
    send("c", b"", TCP_ACK, 0.02)
    send("c", encode_record(CT_HANDSHAKE, encode_client_hello(spec.sni), 0x0301), TCP_PSH | TCP_ACK, 0.001)
    flight = encode_server_hello(spec.ciphersuite, spec.extensions)
    if spec.chain:
        flight += encode_certificate_message(spec.chain)
    flight += encode_handshake(14, b"")  # ServerHelloDone
    send("s", encode_record(CT_HANDSHAKE, flight), TCP_PSH | TCP_ACK, 0.03)
    if spec.complete:
        cke = encode_record(CT_HANDSHAKE, encode_handshake(16, b"\x00" * 66))
        ccs = encode_record(CT_CHANGE_CIPHER_SPEC, b"\x01")
        fin = encode_record(CT_HANDSHAKE, b"\x5a" * 40)
        send("c", cke + ccs + fin, TCP_PSH | TCP_ACK, 0.01)
        send("s", ccs + fin, TCP_PSH | TCP_ACK, 0.03)
        for direction, size, gap in spec.app_records:
            send(direction, encode_record(CT_APPLICATION_DATA, b"\xa5" * size), TCP_PSH | TCP_ACK, gap)
    send("c", b"", TCP_FIN | TCP_ACK, 0.01)
    send("s", b"", TCP_FIN | TCP_ACK, 0.01)
    return write_pcap(frames, byteorder=byteorder)


# ------------------------------------------------------------- corpus ----


@dataclass(frozen=True)
class SyntheticSession:
    label: str
    hostname: str
    chain: tuple[bytes, ...]
    pcap: bytes
    server_ip: str
    traits: dict = field(default_factory=dict, compare=False)


SERVER_USAGE = (0, 2)  # digitalSignature, keyEncipherment
CA_USAGE = (5, 6)  # keyCertSign, cRLSign


def _benign_chain(host: str, rng: np.random.Generator, serial: int, now: datetime, faults: set[str]):
    ca_name = "Synthetic Issuing CA"
    root_name = "Synthetic Root CA"
    nb = now - timedelta(days=int(rng.integers(10, 300)))
    na = now + timedelta(days=int(rng.integers(30, 365)))
    if "expired" in faults:
        na = now - timedelta(days=int(rng.integers(1, 20)))
        nb = na - timedelta(days=365)
    leaf_ku = (6,) if "key_usage" in faults else SERVER_USAGE
    san = [host, "www." + host]
    if "hostname" in faults:
        san = ["other-" + host]
    extra = [("1.3.6.1.4.1.55555.1", True, b"\x05\x00")] if "critical_ext" in faults else []
    leaf = CertSpec(
        subject_cn=host,
        issuer_cn=ca_name,
        org=None,
        issuer_org="Synthetic Trust",
        serial=serial,
        not_before=nb,
        not_after=na,
        san=san,
        key_usage=leaf_ku,
        basic_constraints=(False, None),
        ski=key_id(host + str(serial)),
        aki=key_id(ca_name),
        extra_extensions=extra,
    )
    inter_bc = (False, None) if "basic_constraints" in faults else (True, 0)
    nc = ((), (host.split(".", 1)[-1],)) if "name_constraints" in faults else None
    inter = CertSpec(
        subject_cn=ca_name,
        issuer_cn=root_name,
        org="Synthetic Trust",
        issuer_org="Synthetic Trust",
        serial=serial + 1,
        not_before=now - timedelta(days=2000),
        not_after=now + timedelta(days=2000),
        key_usage=CA_USAGE,
        basic_constraints=inter_bc,
        name_constraints=nc,
        ski=key_id(ca_name),
        aki=key_id(root_name),
    )
    return (build_certificate(leaf), build_certificate(inter))


def _self_signed(host: str, rng: np.random.Generator, serial: int, now: datetime, faults: set[str]):
    nb = now - timedelta(days=int(rng.integers(1, 100)))
    na = now + timedelta(days=int(rng.integers(30, 700)))
    if "expired" in faults:
        na = now - timedelta(days=int(rng.integers(1, 400)))
        nb = na - timedelta(days=365)
    san = None if "hostname" in faults else [host]
    cn = ("localhost" if "hostname" in faults else host)
    extra = [("1.3.6.1.4.1.55555.1", True, b"\x05\x00")] if "critical_ext" in faults else []
    spec = CertSpec(
        subject_cn=cn,
        serial=serial,
        not_before=nb,
        not_after=na,
        san=san,
        key_usage=(6,) if "key_usage" in faults else SERVER_USAGE,
        ski=key_id(cn + str(serial)),
        extra_extensions=extra,
    )
    return (build_certificate(spec),)


def _app_records(rng: np.random.Generator, malicious: bool) -> tuple:
    if malicious:
        n = int(rng.integers(3, 12))
        out = []
        for k in range(n):
            direction = "c" if k % 3 == 0 else "s"
            out.append((direction, int(rng.integers(60, 600)), float(rng.exponential(0.4))))
        return tuple(out)
    n = int(rng.integers(10, 40))
    out = []
    for k in range(n):
        direction = "c" if k % 4 == 0 else "s"
        size = int(rng.integers(200, 600)) if direction == "c" else int(rng.integers(800, 4000))
        out.append((direction, size, float(rng.exponential(0.03))))
    return tuple(out)


def generate_session(rng: np.random.Generator, malicious: bool, index: int, now: datetime = REFERENCE_TIME) -> SyntheticSession:
    host = f"site{index}.example.{'net' if malicious else 'com'}"
    faults: set[str] = set()
    if malicious:
        self_signed = rng.random() < 0.7
        for fault, p in (
            ("expired", 0.25),
            ("hostname", 0.3),
            ("critical_ext", 0.15),
            ("key_usage", 0.15),
            ("basic_constraints", 0.15),
            ("name_constraints", 0.1),
        ):
            if rng.random() < p:
                faults.add(fault)
        cipher = int(rng.choice(FAVORED)) if rng.random() < 0.9 else int(rng.choice(BENIGN_CIPHERSUITES))
        n_ext = int(rng.integers(0, 2))
        exts = (0xFF01,) if n_ext else ()
    else:
        self_signed = rng.random() < 0.09
        for fault, p in (("expired", 0.08), ("hostname", 0.04), ("critical_ext", 0.03), ("key_usage", 0.03)):
            if rng.random() < p:
                faults.add(fault)
        cipher = int(rng.choice(BENIGN_CIPHERSUITES))
        n_ext = int(rng.integers(3, 9))
        picks = rng.choice(len(DEFAULT_EXTENSION_REGISTRY), size=n_ext, replace=False)
        exts = tuple(DEFAULT_EXTENSION_REGISTRY[i] for i in sorted(picks))

    serial = 1000 + 2 * index
    if self_signed:
        chain = _self_signed(host, rng, serial, now, faults)
    else:
        chain = _benign_chain(host, rng, serial, now, faults)
    server_ip = f"198.51.{100 + index // 250}.{index % 250 + 1}"
    traffic = TrafficSpec(
        ciphersuite=cipher,
        extensions=exts,
        sni=host,
        client_ip="10.0.0.2",
        server_ip=server_ip,
        client_port=int(rng.integers(32768, 61000)),
        app_records=_app_records(rng, malicious),
        chain=chain,
        start=now.timestamp() + index * 10.0,
    )
    traits = {"self_signed": self_signed, "faults": sorted(faults), "ciphersuite": cipher, "extensions": list(exts)}
    return SyntheticSession(
        MALICIOUS if malicious else BENIGN, host, chain, build_session_pcap(traffic), server_ip, traits
    )


def generate_corpus(n: int = 1000, seed: int = 42, malicious_fraction: float = 0.5, now: datetime = REFERENCE_TIME) -> list[SyntheticSession]:
    rng = np.random.default_rng(seed)
    n_mal = int(round(n * malicious_fraction))
    flags = np.array([True] * n_mal + [False] * (n - n_mal))
    rng.shuffle(flags)
    return [generate_session(rng, bool(m), i, now) for i, m in enumerate(flags)]


def featurize_corpus(sessions: Sequence[SyntheticSession], now: datetime = REFERENCE_TIME, config=None):
    """Phase-1 and phase-2 datasets for ``sessions``, row order preserved."""
    from tlsverdict.pipeline import PHASE1, PHASE2, featurize_session, phase_dataset
    from tlsverdict.x509_codec import decode_certificate

    rows1, rows2, labels = [], [], []
    for s in sessions:
        chain = [decode_certificate(d) for d in s.chain]
        _, p1, p2 = featurize_session(chain, s.hostname, s.pcap, now, config)
        rows1.append(p1.row())
        rows2.append(p2.row())
        labels.append(s.label)
    return phase_dataset(PHASE1, rows1, labels), phase_dataset(PHASE2, rows2, labels)
