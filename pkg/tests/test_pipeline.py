import json
from datetime import timedelta

import pytest

from conftest import NOW, ca, leaf, mint, root
from pcap_fixtures import SYN, frame, pcap
from tlsverdict import pipeline
from tlsverdict.cert_validation import CRITERIA, CriterionResult, ValidationReport, validate
from tlsverdict.ml_core import BENIGN, MALICIOUS
from tlsverdict.pipeline import (
    EXT_COLUMNS,
    FLOW_COLUMNS,
    PHASE1,
    PHASE1_COLUMNS,
    PHASE2,
    PHASE2_COLUMNS,
    Decision,
    ModelMissing,
    Models,
    NoHandshake,
    Phase2Features,
    PipelineConfig,
    PipelineError,
    TrainedModel,
    Verdict,
    VerdictCache,
    build_phase1,
    build_phase2,
    featurize_session,
    run_verdict,
    train_phase,
)
from tlsverdict.synthetic import REFERENCE_TIME, TrafficSpec, build_session_pcap, featurize_corpus, generate_corpus
from tlsverdict.tls_inspector import DEFAULT_EXTENSION_REGISTRY, TlsServerInfo
from tlsverdict.traffic_capture import FlowFeatures
from tlsverdict.x509_codec import decode_certificate

HOST = "www.example.com"
GOOD_SUITE = 0xC02F
RICH_EXTS = (0x0000, 0x000B, 0x0017, 0x0023, 0xFF01)


def good_chain():
    return [decode_certificate(mint(f)) for f in (leaf(), ca(), root())]


def self_signed_chain():
    f = root(cn=HOST, san=[HOST], key_usage={0, 2}, basic_constraints=None)
    f.not_after = NOW - timedelta(days=10)
    return [decode_certificate(mint(f))]


def session_pcap(cipher=GOOD_SUITE, exts=RICH_EXTS, sni=HOST, server_ip="203.0.113.9"):
    spec = TrafficSpec(
        cipher,
        exts,
        sni,
        server_ip=server_ip,
        app_records=(("s2c", 1400, 0.01), ("c2s", 300, 0.02), ("s2c", 900, 0.05)),
    )
    return build_session_pcap(spec)


def handshake_free_pcap():
    return pcap([(1, 0, frame("10.0.0.2", "203.0.113.9", 50000, 443, flags=SYN))])


class StubModel:
    """Answers every query with a fixed label."""

    def __init__(self, label, confidence=0.9):
        self.label = label
        self.confidence = confidence
        self.calls = 0

    def predict(self, row):
        self.calls += 1
        return self.label, self.confidence


# ------------------------------------------------------------ phase 1 ----


def test_phase1_all_pass_all_false():
    p1 = build_phase1(validate(good_chain(), HOST, NOW))
    assert p1.row() == ("0",) * 7


def test_phase1_expired_self_signed():
    p1 = build_phase1(validate(self_signed_chain(), HOST, NOW))
    assert dict(zip(PHASE1_COLUMNS, p1.flags())) == {
        "fail_key_usage": False,
        "fail_validity": True,
        "fail_critical_ext": False,
        "fail_hostname": False,
        "fail_basic_constraints": False,
        "fail_name_constraints": False,
        "self_signed": True,
    }


def test_phase1_all_fail_all_true():
    report = ValidationReport(tuple(CriterionResult(c, True, "x") for c in CRITERIA), True, NOW, HOST)
    assert build_phase1(report).row() == ("1",) * 7


# ------------------------------------------------------------ phase 2 ----


FLOW = FlowFeatures(
    in_bytes=5000, out_bytes=1200, in_packets=7, out_packets=5, src_port=50000, dst_port=443,
    duration_s=1.25, len_min=54, len_max=1514, len_mean=516.67, len_std=600.5,
    iat_min=0.0, iat_max=0.5, iat_mean=0.11, iat_std=0.15,
)  # fmt: skip


def test_phase2_spot_checked_positions():
    p1 = build_phase1(validate(self_signed_chain(), HOST, NOW))
    p2 = build_phase2(p1, FLOW, TlsServerInfo(0x0005, (0xFF01, 0x000B), 0x0303))
    row = p2.row()
    assert len(row) == len(PHASE2_COLUMNS) == 45
    assert row[1] == "1" and row[6] == "1" and row[0] == "0"
    assert row[7] == 5000  # in_bytes
    assert row[11] == 50000 and row[12] == 443  # ports
    assert row[13] == 1.25  # duration_s
    assert row[21] == 0.15  # iat_std
    bits = row[22:43]
    assert bits[DEFAULT_EXTENSION_REGISTRY.index(0xFF01)] == "1"
    assert bits[DEFAULT_EXTENSION_REGISTRY.index(0x000B)] == "1"
    assert bits.count("1") == 2
    assert row[43] == "0x0005" and row[44] == "1"


def test_column_layout():
    assert PHASE2_COLUMNS[:7] == PHASE1_COLUMNS
    assert PHASE2_COLUMNS[7:22] == FLOW_COLUMNS
    assert PHASE2_COLUMNS[22:43] == EXT_COLUMNS
    assert PHASE2_COLUMNS[43:] == ("ciphersuite_code", "weak_ciphersuite")


def test_single_extension_single_bit():
    p1 = build_phase1(validate(good_chain(), HOST, NOW))
    p2 = build_phase2(p1, FLOW, TlsServerInfo(0x000A, (0xFF01,), 0x0303))
    assert sum(p2.ext_bits) == 1
    assert not p2.weak_ciphersuite


def test_phase2_needs_handshake():
    p1 = build_phase1(validate(good_chain(), HOST, NOW))
    with pytest.raises(NoHandshake):
        build_phase2(p1, FLOW, None)


def test_phase2_dict_roundtrip():
    p1 = build_phase1(validate(good_chain(), HOST, NOW))
    p2 = build_phase2(p1, FLOW, TlsServerInfo(0x006B, (), 0x0303))
    assert Phase2Features.from_dict(json.loads(json.dumps(p2.to_dict()))) == p2


def test_featurize_session_reads_capture():
    report, p1, p2 = featurize_session(good_chain(), HOST, session_pcap(), NOW)
    assert report.passed() and p1.row() == ("0",) * 7
    assert p2.ciphersuite_code == GOOD_SUITE
    assert sum(p2.ext_bits) == len(RICH_EXTS)
    assert p2.flow.dst_port == 443


def test_featurize_session_without_handshake():
    with pytest.raises(NoHandshake):
        featurize_session(good_chain(), HOST, handshake_free_pcap(), NOW)


def test_config_overrides_weak_list():
    cfg = PipelineConfig.from_dict({"weak_ciphersuites": ["0xc02f"]})
    _, _, p2 = featurize_session(good_chain(), HOST, session_pcap(), NOW, cfg)
    assert p2.weak_ciphersuite


# ------------------------------------------------------------ verdict ----


def test_clean_cert_benign_traffic_accepted(corpus_models):
    v = run_verdict(good_chain(), HOST, session_pcap(), corpus_models, now=NOW)
    assert v.decision is Decision.ACCEPTED
    assert v.exit_code == 0
    assert not v.phase1_classified  # passed validation outright


def test_weak_suite_zero_extensions_rejected_in_phase2(corpus_models):
    v = run_verdict(good_chain(), HOST, session_pcap(cipher=0x0005, exts=()), corpus_models, now=NOW)
    assert v.decision is Decision.REJECTED_PHASE2
    assert v.exit_code == 2
    assert v.phase2.weak_ciphersuite


def test_phase1_rejection_never_reads_capture(monkeypatch):
    reads = []
    monkeypatch.setattr(pipeline, "read_pcap", lambda src: reads.append(src) or [])
    stub = StubModel(MALICIOUS)
    v = run_verdict(self_signed_chain(), HOST, "/nonexistent/never-opened.pcap", Models(stub, None), now=NOW)
    assert v.decision is Decision.REJECTED_PHASE1
    assert reads == []
    assert stub.calls == 1


def test_passing_cert_skips_phase1_classifier(corpus_models):
    stub = StubModel(MALICIOUS)
    v = run_verdict(good_chain(), HOST, session_pcap(), Models(stub, corpus_models.phase2), now=NOW)
    assert stub.calls == 0
    assert v.decision is Decision.ACCEPTED


def test_failed_cert_benign_phase1_goes_to_phase2(corpus_models):
    v = run_verdict(self_signed_chain(), HOST, session_pcap(), Models(StubModel(BENIGN), corpus_models.phase2), now=NOW)
    assert v.phase1_classified
    assert v.decision in (Decision.ACCEPTED, Decision.REJECTED_PHASE2)


def test_no_handshake_indeterminate(corpus_models):
    v = run_verdict(good_chain(), HOST, handshake_free_pcap(), corpus_models, now=NOW)
    assert v.decision is Decision.INDETERMINATE_NO_HANDSHAKE
    assert v.exit_code == 3
    assert v.phase2 is None


def test_missing_phase1_model_is_hard_error():
    with pytest.raises(ModelMissing):
        run_verdict(self_signed_chain(), HOST, session_pcap(), Models(), now=NOW)


def test_missing_phase2_model_is_hard_error():
    with pytest.raises(ModelMissing):
        run_verdict(good_chain(), HOST, session_pcap(), Models(), now=NOW)


def test_any_malicious_flow_rejects(corpus_models):
    good = session_pcap()
    spec = TrafficSpec(0x0004, (), HOST, server_ip="203.0.113.9", client_port=50001, start=1_700_000_100.0)
    bad = build_session_pcap(spec)
    merged = good + bad[24:]  # same byte order, drop the second global header
    v = run_verdict(good_chain(), HOST, merged, corpus_models, now=NOW)
    assert v.decision is Decision.REJECTED_PHASE2
    assert v.phase2.ciphersuite_code == 0x0004


def test_verdict_json_roundtrip(corpus_models):
    for capture in (session_pcap(), session_pcap(cipher=0x0005, exts=()), handshake_free_pcap()):
        v = run_verdict(good_chain(), HOST, capture, corpus_models, now=NOW)
        doc = json.loads(v.to_json())
        assert doc["schema_version"] == 1
        assert Verdict.from_json(v.to_json()) == v


def test_verdict_confidence_bounds():
    report = validate(good_chain(), HOST, NOW)
    with pytest.raises(ValueError):
        Verdict(Decision.ACCEPTED, 1.5, report, build_phase1(report))


# -------------------------------------------------------------- cache ----


def test_resumed_session_reuses_cached_phase1(corpus_models):
    cache = VerdictCache()
    ip = "203.0.113.9"
    stub = StubModel(BENIGN)
    models = Models(stub, corpus_models.phase2)
    first = run_verdict(self_signed_chain(), HOST, session_pcap(server_ip=ip), models, now=NOW, cache=cache, server_ip=ip)
    assert stub.calls == 1 and len(cache) == 1
    resumed = run_verdict(None, HOST, session_pcap(server_ip=ip), models, now=NOW, cache=cache)
    assert stub.calls == 1
    assert resumed.decision == first.decision
    assert resumed.report == first.report


def test_cache_remembers_phase1_rejection():
    cache = VerdictCache()
    stub = StubModel(MALICIOUS)
    models = Models(stub, None)
    chain = self_signed_chain()
    for _ in range(3):
        v = run_verdict(chain, HOST, None, models, now=NOW, cache=cache, server_ip="198.51.100.1")
        assert v.decision is Decision.REJECTED_PHASE1
    assert stub.calls == 1


def test_resumption_without_cache_entry_fails():
    with pytest.raises(PipelineError):
        run_verdict(None, HOST, session_pcap(), Models(), cache=VerdictCache())


# ------------------------------------------------------------ training ---


def test_train_phase_records_holdout_and_roundtrips(tmp_path):
    d1, d2 = featurize_corpus(generate_corpus(120, seed=3), REFERENCE_TIME)
    for phase, data in ((PHASE1, d1), (PHASE2, d2)):
        model, metrics = train_phase(phase, data, seed=3)
        assert model.training["n_train"] + model.training["n_test"] == 120
        assert model.training["holdout"]["accuracy"] == metrics.accuracy
        path = tmp_path / f"{phase}.json"
        model.save(path)
        back = TrainedModel.load(path)
        assert back.to_json() == model.to_json()
        for row in data.rows[:25]:
            assert back.predict(row) == model.predict(row)


def test_model_schema_version_checked(tmp_path):
    d1, _ = featurize_corpus(generate_corpus(40, seed=1), REFERENCE_TIME)
    doc = train_phase(PHASE1, d1)[0].to_dict()
    doc["schema_version"] = 99
    with pytest.raises(Exception, match="schema_version"):
        TrainedModel.from_dict(doc)
