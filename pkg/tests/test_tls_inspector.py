import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcap_fixtures import ACK, PSH, SYN, frame, pcap
from tlsverdict.tls_inspector import (
    DEFAULT_EXTENSION_REGISTRY,
    MAX_RECORD_LENGTH,
    ExtensionRegistry,
    ExtensionVector,
    MalformedRecord,
    NoServerHello,
    TlsServerInfo,
    encode_client_hello,
    encode_handshake,
    encode_record,
    encode_server_hello,
    extension_vector,
    inspect_flow,
    is_malware_favored,
    is_weak_ciphersuite,
    parse_records,
    parse_server_hello,
    reassemble_streams,
)
from tlsverdict.traffic_capture import assemble_flows, read_pcap

# Hand-assembled ServerHello: version 0x0303, zero random, empty session id,
# suite 0x000a, null compression, one renegotiation_info extension.
SH_0A_FF01 = bytes.fromhex(
    "16 0303 0031"  # record header, 49 bytes
    "02 00002d"  # ServerHello, 45 bytes
    "0303" + "00" * 32 + "00"  # version, random, session id
    "000a 00"  # ciphersuite, compression
    "0005 ff01 0001 00"  # extensions
)
CCS = bytes.fromhex("14 0303 0001 01")


def test_hand_built_server_hello_bytes_match_encoder():
    body = encode_server_hello(0x000A, [(0xFF01, b"\x00")])
    assert encode_record(22, body) == SH_0A_FF01


def test_server_hello_fields():
    recs = parse_records(SH_0A_FF01 + CCS).records
    info = parse_server_hello(recs)
    assert info.selected_ciphersuite == 0x000A
    assert info.server_extensions == (0xFF01,)
    assert info.tls_version == 0x0303
    assert info.handshake_complete


def test_server_hello_without_ccs_is_incomplete():
    info = parse_server_hello(parse_records(SH_0A_FF01).records)
    assert not info.handshake_complete


def test_server_hello_without_extension_block():
    raw = bytes.fromhex("16 0303 002a 02 000026 0303" + "00" * 32 + "00 0005 00")
    info = parse_server_hello(parse_records(raw).records)
    assert info.selected_ciphersuite == 0x0005
    assert info.server_extensions == ()


def test_client_hello_only_raises():
    ch = encode_record(22, encode_client_hello("x.example"))
    with pytest.raises(NoServerHello):
        parse_server_hello(parse_records(ch).records)


def test_sni_taken_from_client_hello():
    ch = parse_records(encode_record(22, encode_client_hello("Shop.Example.org"))).records
    info = parse_server_hello(parse_records(SH_0A_FF01).records, ch)
    assert info.sni == "Shop.Example.org"


def test_tls13_flag_and_completion_by_application_data():
    sh = encode_record(22, encode_server_hello(0x1301, [(0x002B, b"\x03\x04"), (0x0033, b"\x00" * 4)]))
    app = encode_record(23, b"\x99" * 30)
    info = parse_server_hello(parse_records(sh + app).records)
    assert info.tls13 and info.handshake_complete
    assert info.server_extensions == (0x002B, 0x0033)


# ------------------------------------------------------------- records ---


def test_concatenated_records_split():
    a = bytes.fromhex("16 0303 0002 aabb")
    b = bytes.fromhex("17 0303 0001 cc")
    parsed = parse_records(a + b)
    assert [(r.content_type, r.fragment) for r in parsed.records] == [(22, b"\xaa\xbb"), (23, b"\xcc")]
    assert not parsed.truncated


@pytest.mark.parametrize("cut", [1, 4, 5, 6])
def test_truncated_tail_flagged(cut):
    blob = bytes.fromhex("16 0303 0002 aabb 17 0303 0003 ccddee")
    parsed = parse_records(blob[:-cut])
    assert parsed.truncated
    assert len(parsed.records) == 1


def test_oversized_record_rejected():
    hdr = struct.pack("!BHH", 23, 0x0303, MAX_RECORD_LENGTH + 1)
    with pytest.raises(MalformedRecord):
        parse_records(hdr + b"\x00" * 10)


def test_limit_record_accepted():
    hdr = struct.pack("!BHH", 23, 0x0303, MAX_RECORD_LENGTH)
    assert len(parse_records(hdr + b"\x00" * MAX_RECORD_LENGTH).records) == 1


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([20, 21, 22, 23]), st.binary(max_size=300)), max_size=8))
def test_record_roundtrip(records):
    blob = b"".join(encode_record(t, f) for t, f in records)
    parsed = parse_records(blob)
    assert [(r.content_type, r.fragment) for r in parsed.records] == records
    assert not parsed.truncated


@settings(max_examples=200, deadline=None)
@given(
    st.integers(0, 0xFFFF),
    st.lists(st.integers(0, 0xFFFF), unique=True, max_size=12),
)
def test_server_hello_roundtrip(cipher, ext_ids):
    blob = encode_record(22, encode_server_hello(cipher, ext_ids, include_empty_extensions=True))
    info = parse_server_hello(parse_records(blob).records)
    assert info.selected_ciphersuite == cipher
    assert info.server_extensions == tuple(ext_ids)


def test_server_info_dict_roundtrip():
    info = TlsServerInfo(0x000A, (0xFF01, 0x000B), 0x0303, "a.example", True)
    assert TlsServerInfo.from_dict(info.to_dict()) == info


# ---------------------------------------------------------- reassembly ---

CLI = ("10.0.0.1", 50000)
SRV = ("10.0.0.2", 443)


def _flow(segments, client_isn=1000, server_isn=5000):
    """segments: (from_server, offset, bytes); offsets are stream-relative."""
    recs = [
        (1, 0, frame(CLI[0], SRV[0], CLI[1], SRV[1], flags=SYN, seq=client_isn)),
        (1, 10, frame(SRV[0], CLI[0], SRV[1], CLI[1], flags=SYN | ACK, seq=server_isn)),
    ]
    for i, (from_server, off, data) in enumerate(segments):
        if from_server:
            f = frame(SRV[0], CLI[0], SRV[1], CLI[1], data, ACK | PSH, seq=(server_isn + 1 + off) & 0xFFFFFFFF)
        else:
            f = frame(CLI[0], SRV[0], CLI[1], SRV[1], data, ACK | PSH, seq=(client_isn + 1 + off) & 0xFFFFFFFF)
        recs.append((2, i, f))
    (flow,) = assemble_flows(read_pcap(pcap(recs))).values()
    return flow


def test_in_order_stream():
    s = reassemble_streams(_flow([(True, 0, b"abc"), (True, 3, b"def"), (False, 0, b"hi")]))
    assert s == {"c2s": b"hi", "s2c": b"abcdef"}


def test_retransmission_deduplicated():
    s = reassemble_streams(_flow([(True, 0, b"abc"), (True, 0, b"abc"), (True, 3, b"def"), (True, 1, b"bcde")]))
    assert s["s2c"] == b"abcdef"


def test_out_of_order_reordered():
    s = reassemble_streams(_flow([(True, 4, b"efgh"), (True, 0, b"abcd")]))
    assert s["s2c"] == b"abcdefgh"


def test_gap_truncates_stream():
    s = reassemble_streams(_flow([(True, 0, b"abc"), (True, 10, b"xyz")]))
    assert s["s2c"] == b"abc"


def test_sequence_wraparound():
    s = reassemble_streams(_flow([(True, 0, b"ab"), (True, 2, b"cd")], server_isn=0xFFFFFFFE))
    assert s["s2c"] == b"abcd"


def test_inspect_flow_split_server_hello_across_segments():
    blob = SH_0A_FF01 + CCS
    flow = _flow([(False, 0, encode_record(22, encode_client_hello("a.example"))), (True, 7, blob[7:]), (True, 0, blob[:7])])
    info = inspect_flow(flow)
    assert (info.selected_ciphersuite, info.server_extensions, info.sni) == (0x000A, (0xFF01,), "a.example")
    assert info.handshake_complete


# ----------------------------------------------------- extension vector --


def test_default_registry_shape():
    assert len(DEFAULT_EXTENSION_REGISTRY) == 21
    assert len(set(DEFAULT_EXTENSION_REGISTRY)) == 21


def test_vector_two_bits():
    v = extension_vector(TlsServerInfo(0x000A, (0xFF01, 0x000B), 0x0303))
    assert len(v.bits) == 21 and v.popcount() == 2
    assert v.bits[DEFAULT_EXTENSION_REGISTRY.index(0xFF01)] == 1
    assert v.bits[DEFAULT_EXTENSION_REGISTRY.index(0x000B)] == 1
    assert v.overflow == 0


def test_vector_empty():
    v = extension_vector(TlsServerInfo(0x000A, (), 0x0303))
    assert v.bits == (0,) * 21 and v.popcount() == 0


def test_vector_overflow_counted():
    v = extension_vector(TlsServerInfo(0x000A, (0x1234, 0x0000, 0xABCD), 0x0303))
    assert v.popcount() == 1 and v.overflow == 2


def test_registry_json_roundtrip():
    reg = ExtensionRegistry.from_json(ExtensionRegistry().to_json())
    assert reg.ids == DEFAULT_EXTENSION_REGISTRY
    with pytest.raises(ValueError):
        ExtensionRegistry.from_json("[1, 2, 3]")


def test_vector_rejects_bad_shape():
    with pytest.raises(ValueError):
        ExtensionVector((0, 1), "x")


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 0xFFFF), unique=True, max_size=30))
def test_popcount_counts_registry_members(ext_ids):
    v = extension_vector(TlsServerInfo(0, tuple(ext_ids), 0x0303))
    known = set(ext_ids) & set(DEFAULT_EXTENSION_REGISTRY)
    assert v.popcount() == len(known)
    assert v.overflow == len(ext_ids) - len(known)


# -------------------------------------------------------- ciphersuites ---


@pytest.mark.parametrize(
    "code,weak,favored",
    [(0x000A, False, True), (0x0004, True, True), (0x006B, False, True), (0x0005, True, True), (0xC02F, False, False), (0x1301, False, False)],
)
def test_ciphersuite_tables(code, weak, favored):
    assert is_weak_ciphersuite(code) is weak
    assert is_malware_favored(code) is favored


def test_handshake_encoder_length_prefix():
    assert encode_handshake(2, b"xyz") == b"\x02\x00\x00\x03xyz"
