"""Two-phase detection of malignant TLS servers.

Phase 1 scores an X.509 certificate chain by the reasons traditional
validation rejected it (plus a self-signed flag) with a C4.5 tree.  Phase 2
scores the encrypted sandbox traffic of the server using flow statistics and
cleartext handshake metadata with a tree-augmented naive Bayes classifier.
"""

__version__ = "0.1.0"

from tlsverdict.x509_codec import CertificateView, decode_certificate, decode_pem, load_chain
from tlsverdict.cert_validation import ValidationReport, validate, is_self_signed
from tlsverdict.traffic_capture import read_pcap, assemble_flows, compute_flow_features
from tlsverdict.tls_inspector import TlsServerInfo, extension_vector, inspect_flow
from tlsverdict.pipeline import (
    Decision,
    Models,
    TrainedModel,
    Verdict,
    VerdictCache,
    build_phase1,
    build_phase2,
    run_verdict,
    train_phase,
)

__all__ = [
    "CertificateView",
    "decode_certificate",
    "decode_pem",
    "load_chain",
    "ValidationReport",
    "validate",
    "is_self_signed",
    "read_pcap",
    "assemble_flows",
    "compute_flow_features",
    "TlsServerInfo",
    "extension_vector",
    "inspect_flow",
    "Decision",
    "Models",
    "TrainedModel",
    "Verdict",
    "VerdictCache",
    "build_phase1",
    "build_phase2",
    "run_verdict",
    "train_phase",
]
