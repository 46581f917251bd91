from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

import pytest
from cryptography import x509
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.serialization import Encoding
from cryptography.x509.oid import NameOID

NOW = datetime(2024, 6, 1, 12, 0, 0, tzinfo=timezone.utc)

_KU_ARGS = (
    "digital_signature",
    "content_commitment",
    "key_encipherment",
    "data_encipherment",
    "key_agreement",
    "key_cert_sign",
    "crl_sign",
    "encipher_only",
    "decipher_only",
)

_KEYS: dict[str, ec.EllipticCurvePrivateKey] = {}


def key_for(name: str) -> ec.EllipticCurvePrivateKey:
    if name not in _KEYS:
        _KEYS[name] = ec.generate_private_key(ec.SECP256R1())
    return _KEYS[name]


def _name(cn: str) -> x509.Name:
    return x509.Name([x509.NameAttribute(NameOID.ORGANIZATION_NAME, "Fixture Org"), x509.NameAttribute(NameOID.COMMON_NAME, cn)])


@dataclass
class Fixture:
    """Field set handed to the cryptography package to mint a certificate."""

    cn: str
    issuer: str | None = None  # None: self-issued
    san: list[str] | None = None
    key_usage: set[int] | None = None
    basic_constraints: tuple[bool, int | None] | None = None
    permitted: list[str] | None = None
    excluded: list[str] | None = None
    not_before: datetime = NOW - timedelta(days=30)
    not_after: datetime = NOW + timedelta(days=300)
    extra: list[tuple[str, bool, bytes]] = field(default_factory=list)
    ski: bool = True
    aki: bytes | None | bool = True  # True: issuer's SKI, bytes: explicit, None: omit
    serial: int = 4242


def mint(f: Fixture) -> bytes:
    key = key_for(f.cn)
    issuer = f.issuer or f.cn
    issuer_key = key_for(issuer)
    b = (
        x509.CertificateBuilder()
        .subject_name(_name(f.cn))
        .issuer_name(_name(issuer))
        .public_key(key.public_key())
        .serial_number(f.serial)
        .not_valid_before(f.not_before)
        .not_valid_after(f.not_after)
    )
    if f.basic_constraints is not None:
        ca, pl = f.basic_constraints
        b = b.add_extension(x509.BasicConstraints(ca=ca, path_length=pl), critical=True)
    if f.key_usage is not None:
        kw = {name: (i in f.key_usage) for i, name in enumerate(_KU_ARGS)}
        b = b.add_extension(x509.KeyUsage(**kw), critical=True)
    if f.san is not None:
        b = b.add_extension(x509.SubjectAlternativeName([x509.DNSName(n) for n in f.san]), critical=False)
    if f.permitted is not None or f.excluded is not None:
        nc = x509.NameConstraints(
            permitted_subtrees=[x509.DNSName(n) for n in f.permitted] if f.permitted else None,
            excluded_subtrees=[x509.DNSName(n) for n in f.excluded] if f.excluded else None,
        )
        b = b.add_extension(nc, critical=True)
    if f.ski:
        b = b.add_extension(x509.SubjectKeyIdentifier.from_public_key(key.public_key()), critical=False)
    if f.aki is True and f.issuer:
        b = b.add_extension(x509.AuthorityKeyIdentifier.from_issuer_public_key(issuer_key.public_key()), critical=False)
    elif isinstance(f.aki, bytes):
        b = b.add_extension(x509.AuthorityKeyIdentifier(f.aki, None, None), critical=False)
    for oid, critical, raw in f.extra:
        b = b.add_extension(x509.UnrecognizedExtension(x509.ObjectIdentifier(oid), raw), critical=critical)
    return b.sign(issuer_key, hashes.SHA256()).public_bytes(Encoding.DER)


def leaf(cn="www.example.com", issuer="Fixture Issuing CA", **kw) -> Fixture:
    kw.setdefault("san", [cn])
    kw.setdefault("key_usage", {0, 2})
    kw.setdefault("basic_constraints", (False, None))
    return Fixture(cn, issuer, **kw)


def ca(cn="Fixture Issuing CA", issuer="Fixture Root CA", path_len=None, **kw) -> Fixture:
    kw.setdefault("key_usage", {5, 6})
    kw.setdefault("basic_constraints", (True, path_len))
    return Fixture(cn, issuer, **kw)


def root(cn="Fixture Root CA", **kw) -> Fixture:
    kw.setdefault("key_usage", {5, 6})
    kw.setdefault("basic_constraints", (True, None))
    return Fixture(cn, None, aki=None, **kw)


@pytest.fixture
def now():
    return NOW


# ------------------------------------------------ acceptance summary ----

_ACCEPTANCE: list[tuple[str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(label): exit criterion; reported in the terminal summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _ACCEPTANCE.append((marker.args[0], "PASS" if rep.passed else "FAIL"))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, status in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"{status}  {label}")


# ------------------------------------------------- trained pipeline -----


@pytest.fixture(scope="session")
def corpus_models():
    """Both phase models trained on a seeded synthetic corpus."""
    from tlsverdict.pipeline import PHASE1, PHASE2, Models, train_phase
    from tlsverdict.synthetic import featurize_corpus, generate_corpus

    d1, d2 = featurize_corpus(generate_corpus(600, seed=42))
    m1, _ = train_phase(PHASE1, d1, seed=42)
    m2, _ = train_phase(PHASE2, d2, seed=42)
    return Models(m1, m2)
