"""Lenient DER decoding of X.509 certificates.

Only the fields consumed by the traditional validation criteria are pulled
out of the TBSCertificate.  Malformed optional extensions do not abort the
decode: they are kept as raw bytes and reported in ``parse_warnings`` so the
validator can still score hostile certificates.
"""

from __future__ import annotations

import base64
import binascii
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone

OID_KEY_USAGE = "2.5.29.15"
OID_SUBJECT_ALT_NAME = "2.5.29.17"
OID_BASIC_CONSTRAINTS = "2.5.29.19"
OID_NAME_CONSTRAINTS = "2.5.29.30"
OID_CERTIFICATE_POLICIES = "2.5.29.32"
OID_EXTENDED_KEY_USAGE = "2.5.29.37"
OID_SUBJECT_KEY_IDENTIFIER = "2.5.29.14"
OID_AUTHORITY_KEY_IDENTIFIER = "2.5.29.35"
OID_COMMON_NAME = "2.5.4.3"

KEY_USAGE_BITS = (
    "digitalSignature",
    "nonRepudiation",
    "keyEncipherment",
    "dataEncipherment",
    "keyAgreement",
    "keyCertSign",
    "cRLSign",
    "encipherOnly",
    "decipherOnly",
)
DIGITAL_SIGNATURE = 0
KEY_ENCIPHERMENT = 2
KEY_CERT_SIGN = 5

# universal tags
BOOLEAN = 0x01
INTEGER = 0x02
BIT_STRING = 0x03
OCTET_STRING = 0x04
OBJECT_IDENTIFIER = 0x06
SEQUENCE = 0x30
SET = 0x31
UTC_TIME = 0x17
GENERALIZED_TIME = 0x18

_STRING_CODECS = {
    0x0C: "utf-8",  # UTF8String
    0x12: "ascii",  # NumericString
    0x13: "ascii",  # PrintableString
    0x14: "latin-1",  # TeletexString, treated as latin-1 like most decoders
    0x16: "ascii",  # IA5String
    0x1A: "ascii",  # VisibleString
    0x1C: "utf-32-be",  # UniversalString
    0x1E: "utf-16-be",  # BMPString
}


class MalformedPem(ValueError):
    pass


class MalformedDer(ValueError):
    pass


class UnsupportedVersion(MalformedDer):
    pass


@dataclass(frozen=True)
class NameAttribute:
    oid: str
    value: str


@dataclass(frozen=True)
class BasicConstraints:
    is_ca: bool
    path_len: int | None = None


@dataclass(frozen=True)
class NameConstraints:
    permitted: tuple[str, ...] = ()
    excluded: tuple[str, ...] = ()
    # minimum/maximum BaseDistance were present on some subtree
    has_base_distance: bool = False


@dataclass(frozen=True)
class Extension:
    oid: str
    critical: bool
    raw_value: bytes


@dataclass(frozen=True)
class CertificateView:
    """Decoded fields of one certificate.

    Optional extensions that are absent are ``None`` (or empty for
    ``san_dns_names``), never defaulted.  ``malformed_extensions`` holds the
    OIDs whose value could not be decoded.
    """

    version: int
    serial: bytes
    subject_dn: tuple[NameAttribute, ...]
    issuer_dn: tuple[NameAttribute, ...]
    not_before: datetime
    not_after: datetime
    subject_cn: str | None = None
    san_dns_names: tuple[str, ...] = ()
    key_usage: frozenset[int] | None = None
    basic_constraints: BasicConstraints | None = None
    name_constraints: NameConstraints | None = None
    extensions: tuple[Extension, ...] = ()
    ski: bytes | None = None
    aki: bytes | None = None
    malformed_extensions: frozenset[str] = frozenset()
    parse_warnings: tuple[str, ...] = ()
    der: bytes = field(default=b"", repr=False, compare=False)

    def extension(self, oid: str) -> Extension | None:
        for ext in self.extensions:
            if ext.oid == oid:
                return ext
        return None


# ---------------------------------------------------------------- PEM ----

_PEM_BEGIN = "-----BEGIN CERTIFICATE-----"
_PEM_END = "-----END CERTIFICATE-----"
_B64_BODY = re.compile(r"^[A-Za-z0-9+/=\s]*$")


def decode_pem(text: str | bytes) -> list[bytes]:
    """Return the DER payload of every CERTIFICATE block, in order."""
    if isinstance(text, bytes):
        text = text.decode("ascii", errors="replace")
    blobs = []
    pos = 0
    while True:
        start = text.find(_PEM_BEGIN, pos)
        if start < 0:
            break
        body_start = start + len(_PEM_BEGIN)
        end = text.find(_PEM_END, body_start)
        if end < 0:
            raise MalformedPem("unterminated CERTIFICATE block")
        body = text[body_start:end]
        if _PEM_BEGIN in body:
            raise MalformedPem("nested BEGIN before END")
        if not _B64_BODY.match(body):
            raise MalformedPem("non-base64 characters in CERTIFICATE block")
        try:
            blobs.append(base64.b64decode("".join(body.split()), validate=True))
        except binascii.Error as exc:
            raise MalformedPem(f"invalid base64: {exc}") from None
        pos = end + len(_PEM_END)
    return blobs


def encode_pem(der: bytes) -> str:
    b64 = base64.b64encode(der).decode("ascii")
    lines = [b64[i : i + 64] for i in range(0, len(b64), 64)]
    return "\n".join([_PEM_BEGIN, *lines, _PEM_END]) + "\n"


def load_chain(data: bytes) -> list[CertificateView]:
    """Decode a chain file: PEM with one or more blocks, or a single DER blob."""
    if b"-----BEGIN" in data:
        ders = decode_pem(data)
    else:
        ders = [data]
    return [decode_certificate(d) for d in ders]


# ---------------------------------------------------------------- DER ----


@dataclass(frozen=True)
class TLV:
    tag: int
    value: bytes
    constructed: bool

    @property
    def tag_class(self) -> int:
        return self.tag & 0xC0 if self.tag < 0x100 else 0


def read_tlv(data: bytes, pos: int = 0) -> tuple[TLV, int]:
    """Read one TLV at ``pos``; return it and the offset just past it."""
    if pos >= len(data):
        raise MalformedDer("unexpected end of data reading tag")
    first = data[pos]
    pos += 1
    tag = first
    if first & 0x1F == 0x1F:
        # high tag number form; keep the full byte run as the tag value
        while True:
            if pos >= len(data):
                raise MalformedDer("truncated high-tag-number")
            b = data[pos]
            pos += 1
            tag = (tag << 8) | b
            if not b & 0x80:
                break
            if tag > 0xFFFFFFFF:
                raise MalformedDer("tag number too large")
    if pos >= len(data):
        raise MalformedDer("unexpected end of data reading length")
    length = data[pos]
    pos += 1
    if length == 0x80:
        raise MalformedDer("indefinite length is not DER")
    if length & 0x80:
        n = length & 0x7F
        if n > 4:
            raise MalformedDer("length field too long")
        if pos + n > len(data):
            raise MalformedDer("truncated length")
        length = int.from_bytes(data[pos : pos + n], "big")
        pos += n
    end = pos + length
    if end > len(data):
        raise MalformedDer(f"length {length} exceeds remaining {len(data) - pos} bytes")
    return TLV(tag, bytes(data[pos:end]), bool(first & 0x20)), end


def iter_tlv(data: bytes):
    pos = 0
    while pos < len(data):
        tlv, pos = read_tlv(data, pos)
        yield tlv


def children(tlv: TLV) -> list[TLV]:
    if not tlv.constructed:
        raise MalformedDer(f"tag 0x{tlv.tag:x} is not constructed")
    return list(iter_tlv(tlv.value))


def expect(tlv: TLV, tag: int, what: str) -> TLV:
    if tlv.tag != tag:
        raise MalformedDer(f"{what}: expected tag 0x{tag:02x}, got 0x{tlv.tag:02x}")
    return tlv


def decode_oid(raw: bytes) -> str:
    if not raw:
        raise MalformedDer("empty OBJECT IDENTIFIER")
    arcs = []
    value = 0
    for b in raw:
        value = (value << 7) | (b & 0x7F)
        if not b & 0x80:
            arcs.append(value)
            value = 0
    if raw[-1] & 0x80:
        raise MalformedDer("truncated OBJECT IDENTIFIER")
    first = arcs[0]
    if first < 40:
        head = [0, first]
    elif first < 80:
        head = [1, first - 40]
    else:
        head = [2, first - 80]
    return ".".join(str(a) for a in head + arcs[1:])


def decode_boolean(raw: bytes) -> bool:
    if len(raw) != 1:
        raise MalformedDer("BOOLEAN must be one byte")
    return raw != b"\x00"


def decode_integer(raw: bytes) -> int:
    if not raw:
        raise MalformedDer("empty INTEGER")
    return int.from_bytes(raw, "big", signed=True)


def decode_string(tlv: TLV) -> str:
    codec = _STRING_CODECS.get(tlv.tag)
    if codec is None:
        return tlv.value.hex()
    return tlv.value.decode(codec, errors="replace")


def decode_time(tlv: TLV) -> datetime:
    try:
        text = tlv.value.decode("ascii")
    except UnicodeDecodeError:
        raise MalformedDer("non-ASCII time value") from None
    if not text.endswith("Z"):
        raise MalformedDer(f"time value without Z suffix: {text!r}")
    body = text[:-1]
    if tlv.tag == UTC_TIME:
        if len(body) not in (10, 12) or not body.isdigit():
            raise MalformedDer(f"bad UTCTime {text!r}")
        yy = int(body[:2])
        year = 2000 + yy if yy < 50 else 1900 + yy
        rest = body[2:]
    elif tlv.tag == GENERALIZED_TIME:
        body = body.split(".", 1)[0]
        if len(body) not in (12, 14) or not body.isdigit():
            raise MalformedDer(f"bad GeneralizedTime {text!r}")
        year = int(body[:4])
        rest = body[4:]
    else:
        raise MalformedDer(f"unexpected time tag 0x{tlv.tag:02x}")
    rest = rest.ljust(10, "0")
    try:
        return datetime(
            year,
            int(rest[0:2]),
            int(rest[2:4]),
            int(rest[4:6]),
            int(rest[6:8]),
            int(rest[8:10]),
            tzinfo=timezone.utc,
        )
    except ValueError as exc:
        raise MalformedDer(f"invalid time {text!r}: {exc}") from None


def decode_name(tlv: TLV) -> tuple[NameAttribute, ...]:
    expect(tlv, SEQUENCE, "Name")
    attrs = []
    for rdn in children(tlv):
        expect(rdn, SET, "RelativeDistinguishedName")
        for atv in children(rdn):
            parts = children(expect(atv, SEQUENCE, "AttributeTypeAndValue"))
            if len(parts) != 2:
                raise MalformedDer("AttributeTypeAndValue must have two elements")
            oid = decode_oid(expect(parts[0], OBJECT_IDENTIFIER, "attribute type").value)
            attrs.append(NameAttribute(oid, decode_string(parts[1])))
    return tuple(attrs)


# ------------------------------------------------------- extensions ------


def _key_usage(raw: bytes) -> frozenset[int]:
    tlv, end = read_tlv(raw)
    expect(tlv, BIT_STRING, "KeyUsage")
    if end != len(raw) or not tlv.value:
        raise MalformedDer("KeyUsage trailing data or empty")
    unused = tlv.value[0]
    bits = tlv.value[1:]
    if unused > 7 or (unused and not bits):
        raise MalformedDer("KeyUsage bad unused-bit count")
    nbits = len(bits) * 8 - unused
    return frozenset(i for i in range(min(nbits, len(KEY_USAGE_BITS))) if bits[i // 8] & (0x80 >> (i % 8)))


def _basic_constraints(raw: bytes) -> BasicConstraints:
    tlv, _ = read_tlv(raw)
    is_ca = False
    path_len = None
    for item in children(expect(tlv, SEQUENCE, "BasicConstraints")):
        if item.tag == BOOLEAN:
            is_ca = decode_boolean(item.value)
        elif item.tag == INTEGER:
            path_len = decode_integer(item.value)
            if path_len < 0:
                raise MalformedDer("negative pathLenConstraint")
        else:
            raise MalformedDer(f"unexpected tag in BasicConstraints 0x{item.tag:02x}")
    return BasicConstraints(is_ca, path_len)


def _dns_names(general_names: list[TLV]) -> list[str]:
    # dNSName is [2] IMPLICIT IA5String
    return [g.value.decode("ascii", errors="replace") for g in general_names if g.tag == 0x82]


def _subject_alt_name(raw: bytes) -> tuple[str, ...]:
    tlv, _ = read_tlv(raw)
    return tuple(_dns_names(children(expect(tlv, SEQUENCE, "SubjectAltName"))))


def _name_constraints(raw: bytes) -> NameConstraints:
    tlv, _ = read_tlv(raw)
    permitted: list[str] = []
    excluded: list[str] = []
    has_distance = False
    for part in children(expect(tlv, SEQUENCE, "NameConstraints")):
        if part.tag == 0xA0:
            target = permitted
        elif part.tag == 0xA1:
            target = excluded
        else:
            raise MalformedDer(f"unexpected tag in NameConstraints 0x{part.tag:02x}")
        for subtree in children(part):
            items = children(expect(subtree, SEQUENCE, "GeneralSubtree"))
            if not items:
                raise MalformedDer("empty GeneralSubtree")
            base = items[0]
            if any(i.tag in (0x80, 0x81) for i in items[1:]):
                has_distance = True
            if base.tag == 0x82:
                target.append(base.value.decode("ascii", errors="replace"))
    return NameConstraints(tuple(permitted), tuple(excluded), has_distance)


def _octet_string(raw: bytes) -> bytes:
    tlv, _ = read_tlv(raw)
    return expect(tlv, OCTET_STRING, "SubjectKeyIdentifier").value


def _authority_key_id(raw: bytes) -> bytes | None:
    tlv, _ = read_tlv(raw)
    for item in children(expect(tlv, SEQUENCE, "AuthorityKeyIdentifier")):
        if item.tag == 0x80:
            return item.value
    return None


def _decode_extensions(tlv: TLV) -> tuple[list[Extension], list[str]]:
    exts: list[Extension] = []
    warnings: list[str] = []
    seen = set()
    for ext_tlv in children(expect(tlv, SEQUENCE, "Extensions")):
        parts = children(expect(ext_tlv, SEQUENCE, "Extension"))
        if len(parts) not in (2, 3):
            raise MalformedDer("Extension must have 2 or 3 elements")
        oid = decode_oid(expect(parts[0], OBJECT_IDENTIFIER, "extnID").value)
        critical = False
        if len(parts) == 3:
            critical = decode_boolean(expect(parts[1], BOOLEAN, "critical").value)
        value = expect(parts[-1], OCTET_STRING, "extnValue").value
        if oid in seen:
            warnings.append(f"duplicate extension {oid} ignored")
            continue
        seen.add(oid)
        exts.append(Extension(oid, critical, value))
    return exts, warnings


_EXTENSION_DECODERS = {
    OID_KEY_USAGE: ("key_usage", _key_usage),
    OID_BASIC_CONSTRAINTS: ("basic_constraints", _basic_constraints),
    OID_SUBJECT_ALT_NAME: ("san_dns_names", _subject_alt_name),
    OID_NAME_CONSTRAINTS: ("name_constraints", _name_constraints),
    OID_SUBJECT_KEY_IDENTIFIER: ("ski", _octet_string),
    OID_AUTHORITY_KEY_IDENTIFIER: ("aki", _authority_key_id),
}


# ------------------------------------------------------- certificate -----


def decode_certificate(der: bytes) -> CertificateView:
    """Decode one DER certificate.

    Raises :class:`MalformedDer` for tag/length violations in the mandatory
    structure.  Any other failure mode inside the decoder is also surfaced
    as :class:`MalformedDer`, so arbitrary input never escapes with a
    different exception type.
    """
    try:
        return _decode_certificate(bytes(der))
    except MalformedDer:
        raise
    except (IndexError, ValueError, UnicodeError, OverflowError) as exc:
        raise MalformedDer(f"undecodable certificate: {exc}") from None


def _decode_certificate(der: bytes) -> CertificateView:
    cert, end = read_tlv(der)
    if end != len(der):
        raise MalformedDer("trailing bytes after Certificate")
    top = children(expect(cert, SEQUENCE, "Certificate"))
    if len(top) != 3:
        raise MalformedDer("Certificate must have three elements")
    try:
        tbs = children(expect(top[0], SEQUENCE, "TBSCertificate"))
    except MalformedDer as exc:
        raise UnsupportedVersion(f"cannot traverse tbsCertificate: {exc}") from None

    idx = 0
    version = 1
    if tbs and tbs[0].tag == 0xA0:
        inner = children(tbs[0])
        if len(inner) != 1:
            raise MalformedDer("bad version wrapper")
        version = decode_integer(expect(inner[0], INTEGER, "version").value) + 1
        if version not in (1, 2, 3):
            raise UnsupportedVersion(f"X.509 version {version}")
        idx = 1
    if len(tbs) < idx + 6:
        raise MalformedDer("TBSCertificate too short")
    serial = expect(tbs[idx], INTEGER, "serialNumber").value
    expect(tbs[idx + 1], SEQUENCE, "signature")
    issuer = decode_name(tbs[idx + 2])
    validity = children(expect(tbs[idx + 3], SEQUENCE, "Validity"))
    if len(validity) != 2:
        raise MalformedDer("Validity must have notBefore and notAfter")
    not_before = decode_time(validity[0])
    not_after = decode_time(validity[1])
    subject = decode_name(tbs[idx + 4])
    expect(tbs[idx + 5], SEQUENCE, "subjectPublicKeyInfo")

    extensions: list[Extension] = []
    warnings: list[str] = []
    for item in tbs[idx + 6 :]:
        if item.tag == 0xA3:
            wrapped = children(item)
            if len(wrapped) != 1:
                raise MalformedDer("bad extensions wrapper")
            extensions, warnings = _decode_extensions(wrapped[0])
        elif item.tag not in (0x81, 0xA1, 0x82, 0xA2):
            raise MalformedDer(f"unexpected TBSCertificate element 0x{item.tag:02x}")

    decoded: dict = {}
    malformed = set()
    for ext in extensions:
        spec = _EXTENSION_DECODERS.get(ext.oid)
        if spec is None:
            continue
        attr, fn = spec
        try:
            decoded[attr] = fn(ext.raw_value)
        except (MalformedDer, IndexError, ValueError, UnicodeError) as exc:
            malformed.add(ext.oid)
            warnings.append(f"malformed extension {ext.oid}: {exc}")

    ku = decoded.get("key_usage")
    if ku is not None and not ku:
        warnings.append("KeyUsage present with no bits set")
    bc = decoded.get("basic_constraints")
    if bc is not None and bc.path_len is not None and not bc.is_ca:
        warnings.append("pathLenConstraint present on a non-CA certificate")

    cn = next((a.value for a in subject if a.oid == OID_COMMON_NAME), None)
    return CertificateView(
        version=version,
        serial=serial,
        subject_dn=subject,
        issuer_dn=issuer,
        not_before=not_before,
        not_after=not_after,
        subject_cn=cn,
        san_dns_names=decoded.get("san_dns_names", ()),
        key_usage=ku,
        basic_constraints=bc,
        name_constraints=decoded.get("name_constraints"),
        extensions=tuple(extensions),
        ski=decoded.get("ski"),
        aki=decoded.get("aki"),
        malformed_extensions=frozenset(malformed),
        parse_warnings=tuple(warnings),
        der=der,
    )
