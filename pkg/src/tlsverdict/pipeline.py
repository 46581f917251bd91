"""Two-phase verdict: certificate evidence first, encrypted-traffic
evidence second.

Feature columns are fixed and versioned; nominal values are strings so a
CSV round trip and an in-memory featurization produce identical rows.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import threading
import warnings
from dataclasses import dataclass, field
from datetime import datetime
from typing import Sequence

from tlsverdict.cert_validation import (
    ValidationConfig,
    ValidationReport,
    canonical_dns,
    validate,
)
from tlsverdict.ml_core.c45 import DecisionTreeModel, c45_predict, c45_train
from tlsverdict.ml_core.dataset import (
    BENIGN,
    MALICIOUS,
    NOMINAL,
    NUMERIC,
    Attribute,
    Dataset,
    SchemaMismatch,
    as_row,
    split_train_test,
)
from tlsverdict.ml_core.discretize import (
    DegenerateAttribute,
    Discretizer,
    apply_discretizer,
    discretize_instance,
    fit_discretizer,
)
from tlsverdict.ml_core.evaluation import Metrics, evaluate
from tlsverdict.ml_core.tan import TanBayesModel, tan_predict, tan_train
from tlsverdict.tls_inspector import (
    WEAK_CIPHERSUITES,
    ExtensionRegistry,
    NoServerHello,
    TlsParseError,
    TlsServerInfo,
    extension_vector,
    inspect_flow,
)
from tlsverdict.traffic_capture import Flow, FlowFeatures, assemble_flows, compute_flow_features, read_pcap
from tlsverdict.x509_codec import CertificateView

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
PHASE1 = "phase1"
PHASE2 = "phase2"

PHASE1_COLUMNS = (
    "fail_key_usage",
    "fail_validity",
    "fail_critical_ext",
    "fail_hostname",
    "fail_basic_constraints",
    "fail_name_constraints",
    "self_signed",
)
FLOW_COLUMNS = (
    "in_bytes",
    "out_bytes",
    "in_packets",
    "out_packets",
    "src_port",
    "dst_port",
    "duration_s",
    "len_min",
    "len_max",
    "len_mean",
    "len_std",
    "iat_min",
    "iat_max",
    "iat_mean",
    "iat_std",
)
EXT_COLUMNS = tuple(f"ext_bit_{i}" for i in range(21))
PHASE2_COLUMNS = PHASE1_COLUMNS + FLOW_COLUMNS + EXT_COLUMNS + ("ciphersuite_code", "weak_ciphersuite")

_BOOL = ("0", "1")
PHASE1_SCHEMA = tuple(Attribute(c, NOMINAL, _BOOL) for c in PHASE1_COLUMNS)
PHASE2_SCHEMA = (
    PHASE1_SCHEMA
    + tuple(Attribute(c, NUMERIC) for c in FLOW_COLUMNS)
    + tuple(Attribute(c, NOMINAL, _BOOL) for c in EXT_COLUMNS)
    + (Attribute("ciphersuite_code", NOMINAL), Attribute("weak_ciphersuite", NOMINAL, _BOOL))
)
FEATURE_SCHEMAS = {PHASE1: PHASE1_SCHEMA, PHASE2: PHASE2_SCHEMA}
FEATURE_SCHEMA_IDS = {PHASE1: "phase1-v1", PHASE2: "phase2-v1"}


class PipelineError(RuntimeError):
    pass


class NoHandshake(PipelineError):
    pass


class ModelMissing(PipelineError):
    pass


def _b(flag: bool) -> str:
    return "1" if flag else "0"


def format_ciphersuite(code: int) -> str:
    return f"0x{code:04x}"


# ------------------------------------------------------------ features ---


@dataclass(frozen=True)
class Phase1Features:
    fail_key_usage: bool
    fail_validity: bool
    fail_critical_ext: bool
    fail_hostname: bool
    fail_basic_constraints: bool
    fail_name_constraints: bool
    self_signed: bool

    def flags(self) -> tuple[bool, ...]:
        return tuple(getattr(self, c) for c in PHASE1_COLUMNS)

    def row(self) -> tuple[str, ...]:
        return tuple(_b(f) for f in self.flags())

    @classmethod
    def from_row(cls, row: Sequence) -> "Phase1Features":
        return cls(*(str(v) == "1" for v in row[: len(PHASE1_COLUMNS)]))


@dataclass(frozen=True)
class Phase2Features:
    phase1: Phase1Features
    flow: FlowFeatures
    ext_bits: tuple[int, ...]
    ciphersuite_code: int
    weak_ciphersuite: bool
    ext_overflow: int = 0

    def row(self) -> tuple:
        flow = self.flow.as_dict()
        return (
            self.phase1.row()
            + tuple(flow[c] for c in FLOW_COLUMNS)
            + tuple(str(b) for b in self.ext_bits)
            + (format_ciphersuite(self.ciphersuite_code), _b(self.weak_ciphersuite))
        )

    def to_dict(self) -> dict:
        return {c: v for c, v in zip(PHASE2_COLUMNS, self.row())} | {"ext_overflow": self.ext_overflow}

    @classmethod
    def from_dict(cls, d: dict) -> "Phase2Features":
        p1 = Phase1Features(*(d[c] == "1" for c in PHASE1_COLUMNS))
        flow = FlowFeatures(**{c: d[c] for c in FLOW_COLUMNS})
        return cls(
            p1,
            flow,
            tuple(int(d[c]) for c in EXT_COLUMNS),
            int(d["ciphersuite_code"], 16),
            d["weak_ciphersuite"] == "1",
            int(d.get("ext_overflow", 0)),
        )


def build_phase1(report: ValidationReport) -> Phase1Features:
    """Copy the six failure flags and the self-signed flag in fixed order."""
    return Phase1Features(*(r.failed for r in report.results), report.self_signed)


def build_phase2(
    p1: Phase1Features,
    flow: FlowFeatures,
    tls: TlsServerInfo | None,
    registry: ExtensionRegistry | None = None,
    weak_ciphersuites=WEAK_CIPHERSUITES,
) -> Phase2Features:
    if tls is None:
        raise NoHandshake("no ServerHello: phase-2 features unavailable")
    vec = extension_vector(tls, registry)
    return Phase2Features(
        phase1=p1,
        flow=flow,
        ext_bits=vec.bits,
        ciphersuite_code=tls.selected_ciphersuite,
        weak_ciphersuite=tls.selected_ciphersuite in weak_ciphersuites,
        ext_overflow=vec.overflow,
    )


# -------------------------------------------------------------- config ---


@dataclass(frozen=True)
class PipelineConfig:
    validation: ValidationConfig = field(default_factory=ValidationConfig)
    registry: ExtensionRegistry = field(default_factory=ExtensionRegistry)
    weak_ciphersuites: frozenset[int] = WEAK_CIPHERSUITES

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        registry = ExtensionRegistry()
        if "extension_registry" in d:
            registry = ExtensionRegistry.from_json(json.dumps(d["extension_registry"]))
        weak = WEAK_CIPHERSUITES
        if "weak_ciphersuites" in d:
            weak = frozenset(int(x, 16) if isinstance(x, str) else int(x) for x in d["weak_ciphersuites"])
        return cls(ValidationConfig.from_dict(d), registry, weak)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# ------------------------------------------------------- featurization ---


@dataclass(frozen=True)
class FlowEvidence:
    flow: Flow
    features: FlowFeatures
    tls: TlsServerInfo


def handshake_flows(packets, hostname: str | None = None) -> list[FlowEvidence]:
    """Flows that completed a parseable ServerHello.

    When some flow's SNI equals ``hostname`` only those are returned.
    """
    found = []
    for flow in assemble_flows(packets).values():
        try:
            tls = inspect_flow(flow)
        except (NoServerHello, TlsParseError):
            continue
        found.append(FlowEvidence(flow, compute_flow_features(flow), tls))
    if hostname:
        host = canonical_dns(hostname)
        matching = [f for f in found if f.tls.sni and canonical_dns(f.tls.sni) == host]
        if matching:
            return matching
    return found


def featurize_session(
    chain: Sequence[CertificateView],
    hostname: str,
    pcap=None,
    now: datetime | None = None,
    config: PipelineConfig | None = None,
) -> tuple[ValidationReport, Phase1Features, Phase2Features | None]:
    """Phase-1 features always; phase-2 features for the first handshake
    flow of ``pcap`` when one is given."""
    config = config or PipelineConfig()
    report = validate(chain, hostname, now, config.validation)
    p1 = build_phase1(report)
    if pcap is None:
        return report, p1, None
    flows = handshake_flows(read_pcap(pcap), hostname)
    if not flows:
        raise NoHandshake("capture holds no completed TLS handshake")
    ev = flows[0]
    return report, p1, build_phase2(p1, ev.features, ev.tls, config.registry, config.weak_ciphersuites)


def phase_dataset(phase: str, rows: Sequence[tuple], labels: Sequence[str]) -> Dataset:
    return Dataset(FEATURE_SCHEMAS[phase], list(rows), list(labels), (MALICIOUS, BENIGN))


# -------------------------------------------------------------- models ---


@dataclass
class TrainedModel:
    """A classifier plus the discretizer and raw schema it expects."""

    phase: str
    classifier: DecisionTreeModel | TanBayesModel
    raw_schema: tuple[Attribute, ...]
    discretizer: Discretizer | None = None
    training: dict = field(default_factory=dict)

    def prepare(self, instance) -> tuple:
        row = as_row(self.raw_schema, instance)
        if self.discretizer is not None:
            row = discretize_instance(self.discretizer, self.raw_schema, row)
        return row

    def predict(self, instance) -> tuple[str, float]:
        row = self.prepare(instance)
        if isinstance(self.classifier, DecisionTreeModel):
            p = c45_predict(self.classifier, row)
            return p.label, p.confidence
        post = tan_predict(self.classifier, row)
        return post.label, post.confidence

    def malicious_probability(self, instance) -> float:
        row = self.prepare(instance)
        if isinstance(self.classifier, DecisionTreeModel):
            p = c45_predict(self.classifier, row)
            return p.confidence if p.label == MALICIOUS else 1 - p.confidence
        return tan_predict(self.classifier, row).posterior[MALICIOUS]

    def evaluate(self, dataset: Dataset) -> Metrics:
        prepared = dataset
        if self.discretizer is not None:
            prepared = apply_discretizer(self.discretizer, dataset)
        return evaluate(self.classifier, prepared)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "feature_schema": FEATURE_SCHEMA_IDS.get(self.phase, self.phase),
            "phase": self.phase,
            "raw_schema": [a.to_dict() for a in self.raw_schema],
            "schema": [a.to_dict() for a in self.classifier.schema],
            "discretizer": self.discretizer.to_dict() if self.discretizer else None,
            "training": self.training,
            "model": self.classifier.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def from_dict(cls, d: dict) -> "TrainedModel":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise SchemaMismatch(f"unsupported model schema_version {d.get('schema_version')!r}")
        schema = tuple(Attribute.from_dict(a) for a in d["schema"])
        raw = tuple(Attribute.from_dict(a) for a in d["raw_schema"])
        kind = d["model"]["kind"]
        if kind == "c45":
            clf = DecisionTreeModel.from_dict(d["model"], schema)
        elif kind == "tan":
            clf = TanBayesModel.from_dict(d["model"], schema)
        else:
            raise SchemaMismatch(f"unknown model kind {kind!r}")
        disc = Discretizer.from_dict(d["discretizer"]) if d.get("discretizer") else None
        return cls(d["phase"], clf, raw, disc, d.get("training", {}))

    @classmethod
    def load(cls, path) -> "TrainedModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def train_phase(
    phase: str,
    data: Dataset,
    seed: int = 0,
    split: float = 0.66,
    bins: int = 10,
    min_leaf: int = 2,
    pruning_cf: float | None = None,
    alpha: float = 1.0,
) -> tuple[TrainedModel, Metrics]:
    """Split, discretize on the training part, fit, and score the holdout.

    Phase 1 fits a C4.5 tree, phase 2 a TAN classifier.
    """
    parts = split_train_test(data, split, seed)
    train = parts.train
    disc = None
    if any(a.kind == NUMERIC for a in train.schema):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", DegenerateAttribute)
            disc = fit_discretizer(train, bins=bins)
        for w in caught:
            log.info("%s", w.message)
        train = apply_discretizer(disc, train)
    train = train.with_observed_values()
    if phase == PHASE1:
        clf = c45_train(train, min_leaf=min_leaf, pruning_cf=pruning_cf, seed=seed)
    elif phase == PHASE2:
        clf = tan_train(train, alpha=alpha)
    else:
        raise ValueError(f"unknown phase {phase!r}")
    meta = {
        "classifier": "c45" if phase == PHASE1 else "tan",
        "seed": seed,
        "split": split,
        "bins": bins,
        "n_train": len(parts.train),
        "n_test": len(parts.test),
    }
    model = TrainedModel(phase, clf, data.schema, disc, meta)
    metrics = model.evaluate(parts.test)
    model.training["holdout"] = metrics.to_dict()
    return model, metrics


# ------------------------------------------------------------- verdict ---


class Decision(str, enum.Enum):
    REJECTED_PHASE1 = "RejectedPhase1"
    REJECTED_PHASE2 = "RejectedPhase2"
    ACCEPTED = "Accepted"
    INDETERMINATE_NO_HANDSHAKE = "IndeterminateNoHandshake"


EXIT_CODES = {
    Decision.ACCEPTED: 0,
    Decision.REJECTED_PHASE1: 2,
    Decision.REJECTED_PHASE2: 2,
    Decision.INDETERMINATE_NO_HANDSHAKE: 3,
}


@dataclass(frozen=True)
class Verdict:
    decision: Decision
    confidence: float
    report: ValidationReport
    phase1: Phase1Features
    phase2: Phase2Features | None = None
    phase1_classified: bool = False
    note: str = ""

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence outside [0, 1]")

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.decision]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "decision": self.decision.value,
            "confidence": self.confidence,
            "phase1_classified": self.phase1_classified,
            "note": self.note,
            "evidence": {
                "validation": self.report.to_dict(),
                "phase1_features": dict(zip(PHASE1_COLUMNS, self.phase1.row())),
                "phase2_features": self.phase2.to_dict() if self.phase2 else None,
            },
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d: dict) -> "Verdict":
        ev = d["evidence"]
        return cls(
            decision=Decision(d["decision"]),
            confidence=d["confidence"],
            report=ValidationReport.from_dict(ev["validation"]),
            phase1=Phase1Features(*(ev["phase1_features"][c] == "1" for c in PHASE1_COLUMNS)),
            phase2=Phase2Features.from_dict(ev["phase2_features"]) if ev.get("phase2_features") else None,
            phase1_classified=d.get("phase1_classified", False),
            note=d.get("note", ""),
        )

    @classmethod
    def from_json(cls, text: str) -> "Verdict":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class Models:
    phase1: TrainedModel | None = None
    phase2: TrainedModel | None = None

    @classmethod
    def load(cls, phase1_path=None, phase2_path=None) -> "Models":
        return cls(
            TrainedModel.load(phase1_path) if phase1_path else None,
            TrainedModel.load(phase2_path) if phase2_path else None,
        )


@dataclass(frozen=True)
class Phase1Outcome:
    report: ValidationReport
    features: Phase1Features
    classified: bool
    malicious: bool
    confidence: float


class VerdictCache:
    """Phase-1 outcomes keyed by (server IP, leaf certificate SHA-256).

    A resumed session carries no certificate, so lookups by server IP alone
    return the most recent outcome stored for that IP.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._by_key: dict[tuple[str, str], Phase1Outcome] = {}
        self._latest: dict[str, str] = {}

    def put(self, server_ip: str, fingerprint: str, outcome: Phase1Outcome) -> None:
        with self._lock:
            self._by_key[(server_ip, fingerprint)] = outcome
            self._latest[server_ip] = fingerprint

    def get(self, server_ip: str, fingerprint: str | None = None) -> Phase1Outcome | None:
        with self._lock:
            if fingerprint is None:
                fingerprint = self._latest.get(server_ip)
            return self._by_key.get((server_ip, fingerprint))

    def __len__(self):
        return len(self._by_key)


def certificate_fingerprint(cert: CertificateView) -> str:
    return hashlib.sha256(cert.der).hexdigest()


def run_phase1(
    chain: Sequence[CertificateView],
    hostname: str,
    models: Models,
    now: datetime | None = None,
    config: PipelineConfig | None = None,
) -> Phase1Outcome:
    config = config or PipelineConfig()
    report = validate(chain, hostname, now, config.validation)
    p1 = build_phase1(report)
    if report.passed():
        # traditional validation accepted the certificate outright
        return Phase1Outcome(report, p1, False, False, 1.0)
    if models.phase1 is None:
        raise ModelMissing("phase-1 model required: certificate failed traditional validation")
    label, confidence = models.phase1.predict(p1.row())
    return Phase1Outcome(report, p1, True, label == MALICIOUS, confidence)


def run_verdict(
    cert_chain: Sequence[CertificateView] | None,
    hostname: str,
    pcap,
    models: Models,
    config: PipelineConfig | None = None,
    now: datetime | None = None,
    cache: VerdictCache | None = None,
    server_ip: str | None = None,
) -> Verdict:
    """Decide whether the server should be visited.

    Phase 1 classifies only certificates that failed traditional validation;
    a malicious verdict there ends the decision without touching ``pcap``.
    An empty ``cert_chain`` (resumed session) reuses the cached phase-1
    outcome for the server.
    """
    config = config or PipelineConfig()
    outcome = None
    fingerprint = None
    packets = None
    if cert_chain:
        fingerprint = certificate_fingerprint(cert_chain[0])
        if cache is not None and server_ip is not None:
            outcome = cache.get(server_ip, fingerprint)
        if outcome is None:
            outcome = run_phase1(cert_chain, hostname, models, now, config)
    else:
        if cache is None:
            raise PipelineError("no certificate chain and no cache to resume from")
        packets = read_pcap(pcap)
        flows = handshake_flows(packets, hostname)
        ips = [server_ip] if server_ip else [f.flow.key.server_ip for f in flows]
        outcome = next((o for o in (cache.get(ip) for ip in ips) if o is not None), None)
        if outcome is None:
            raise PipelineError("resumed session for a server with no cached phase-1 outcome")

    if outcome.malicious:
        if cache is not None and server_ip and fingerprint:
            cache.put(server_ip, fingerprint, outcome)
        return Verdict(Decision.REJECTED_PHASE1, outcome.confidence, outcome.report, outcome.features, None, True)

    if packets is None:
        packets = read_pcap(pcap)
    flows = handshake_flows(packets, hostname)
    if cache is not None and fingerprint:
        for ip in {server_ip} if server_ip else {f.flow.key.server_ip for f in flows}:
            cache.put(ip, fingerprint, outcome)
    if not flows:
        return Verdict(
            Decision.INDETERMINATE_NO_HANDSHAKE,
            0.0,
            outcome.report,
            outcome.features,
            None,
            outcome.classified,
            "no completed TLS handshake in capture; certificate provisionally accepted",
        )
    if models.phase2 is None:
        raise ModelMissing("phase-2 model required")

    scored = []
    for ev in flows:
        feats = build_phase2(outcome.features, ev.features, ev.tls, config.registry, config.weak_ciphersuites)
        label, confidence = models.phase2.predict(feats.row())
        scored.append((label, confidence, feats))
    rejected = [s for s in scored if s[0] == MALICIOUS]
    if rejected:
        label, confidence, feats = max(rejected, key=lambda s: s[1])
        return Verdict(Decision.REJECTED_PHASE2, confidence, outcome.report, outcome.features, feats, outcome.classified)
    label, confidence, feats = min(scored, key=lambda s: s[1])
    return Verdict(Decision.ACCEPTED, confidence, outcome.report, outcome.features, feats, outcome.classified)
