"""Traditional certificate validation, reported criterion by criterion.

Every criterion is always evaluated so a report can say *why* a chain
failed, possibly for several reasons at once.  Chains are ordered
leaf-first.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Iterable, Sequence

from tlsverdict.x509_codec import (
    DIGITAL_SIGNATURE,
    KEY_CERT_SIGN,
    KEY_ENCIPHERMENT,
    KEY_USAGE_BITS,
    OID_BASIC_CONSTRAINTS,
    OID_CERTIFICATE_POLICIES,
    OID_EXTENDED_KEY_USAGE,
    OID_KEY_USAGE,
    OID_NAME_CONSTRAINTS,
    OID_SUBJECT_ALT_NAME,
    CertificateView,
    NameAttribute,
)

NOT_EVALUATED = "absent - not evaluated"

DEFAULT_RECOGNIZED_OIDS = frozenset(
    {
        OID_BASIC_CONSTRAINTS,
        OID_KEY_USAGE,
        OID_SUBJECT_ALT_NAME,
        OID_NAME_CONSTRAINTS,
        OID_EXTENDED_KEY_USAGE,
        OID_CERTIFICATE_POLICIES,
    }
)


class Criterion(str, enum.Enum):
    KEY_USAGE = "KeyUsage"
    VALIDITY_DATES = "ValidityDates"
    CRITICAL_EXTENSIONS = "CriticalExtensions"
    HOSTNAME_VALIDATION = "HostnameValidation"
    BASIC_CONSTRAINTS = "BasicConstraints"
    NAME_CONSTRAINTS = "NameConstraints"


CRITERIA = tuple(Criterion)


@dataclass(frozen=True)
class CriterionResult:
    criterion: Criterion
    failed: bool
    detail: str

    def __post_init__(self):
        if self.failed and not self.detail:
            raise ValueError("a failed criterion needs a detail message")

    def to_dict(self) -> dict:
        return {"criterion": self.criterion.value, "failed": self.failed, "detail": self.detail}

    @classmethod
    def from_dict(cls, d: dict) -> "CriterionResult":
        return cls(Criterion(d["criterion"]), bool(d["failed"]), d["detail"])


@dataclass(frozen=True)
class ValidationReport:
    results: tuple[CriterionResult, ...]
    self_signed: bool
    evaluated_at: datetime
    hostname: str

    def __post_init__(self):
        if tuple(r.criterion for r in self.results) != CRITERIA:
            raise ValueError("report must hold exactly one result per criterion, in order")

    def passed(self) -> bool:
        return not any(r.failed for r in self.results)

    def result(self, criterion: Criterion) -> CriterionResult:
        return self.results[CRITERIA.index(Criterion(criterion))]

    def failed_criteria(self) -> list[Criterion]:
        return [r.criterion for r in self.results if r.failed]

    def to_dict(self) -> dict:
        return {
            "hostname": self.hostname,
            "evaluated_at": self.evaluated_at.isoformat(),
            "passed": self.passed(),
            "self_signed": self.self_signed,
            "results": [r.to_dict() for r in self.results],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ValidationReport":
        return cls(
            results=tuple(CriterionResult.from_dict(r) for r in d["results"]),
            self_signed=bool(d["self_signed"]),
            evaluated_at=datetime.fromisoformat(d["evaluated_at"]),
            hostname=d["hostname"],
        )

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


@dataclass(frozen=True)
class ValidationConfig:
    recognized_oids: frozenset[str] = DEFAULT_RECOGNIZED_OIDS

    @classmethod
    def from_dict(cls, d: dict) -> "ValidationConfig":
        oids = d.get("recognized_critical_oids")
        if oids is None:
            return cls()
        oids = frozenset(oids)
        if not oids:
            raise ValueError("recognized_critical_oids must not be empty")
        return cls(recognized_oids=oids)


def _ok(criterion: Criterion, detail: str = "ok") -> CriterionResult:
    return CriterionResult(criterion, False, detail)


def _fail(criterion: Criterion, problems: Iterable[str]) -> CriterionResult:
    return CriterionResult(criterion, True, "; ".join(problems))


def _label(cert: CertificateView, index: int) -> str:
    return f"cert[{index}] {cert.subject_cn or '<no CN>'}"


# ------------------------------------------------------ names ----------


def canonical_dns(name: str) -> str:
    name = name.strip().lower()
    if name.endswith("."):
        name = name[:-1]
    return name


def canonical_dn(dn: Sequence[NameAttribute]) -> tuple[tuple[str, str], ...]:
    return tuple((a.oid, a.value.strip()) for a in dn)


def wildcard_problem(pattern: str) -> str | None:
    """Why ``pattern`` can never match anything, or None if it is usable."""
    labels = canonical_dns(pattern).split(".")
    if any(not label for label in labels):
        return "empty label"
    stars = sum(label.count("*") for label in labels)
    if stars == 0:
        return None
    if stars > 1:
        return "more than one wildcard"
    if labels[0] != "*":
        return "wildcard not the entire leftmost label"
    if len(labels) < 3:
        return "wildcard directly above a single-label suffix"
    return None


def match_hostname(pattern: str, hostname: str) -> bool:
    """Label-wise match; a lone ``*`` leftmost label stands for one label."""
    if wildcard_problem(pattern) is not None:
        return False
    host = canonical_dns(hostname).split(".")
    pat = canonical_dns(pattern).split(".")
    if any(not h or "*" in h for h in host) or len(host) != len(pat):
        return False
    if pat[0] == "*":
        return host[1:] == pat[1:]
    return host == pat


def leaf_names(cert: CertificateView) -> list[str]:
    """SAN dNSNames, or the subject CN when the SAN has none."""
    if cert.san_dns_names:
        return list(cert.san_dns_names)
    return [cert.subject_cn] if cert.subject_cn else []


def in_subtree(name: str, subtree: str) -> bool:
    name = canonical_dns(name)
    subtree = canonical_dns(subtree)
    if subtree.startswith("."):
        return name.endswith(subtree)
    if not subtree:
        return True
    return name == subtree or name.endswith("." + subtree)


# ----------------------------------------------------- criteria --------


def check_key_usage(chain: Sequence[CertificateView]) -> CriterionResult:
    crit = Criterion.KEY_USAGE
    problems = []
    evaluated = False
    for i, cert in enumerate(chain):
        if OID_KEY_USAGE in cert.malformed_extensions:
            problems.append(f"{_label(cert, i)}: malformed KeyUsage")
            continue
        if cert.key_usage is None:
            continue
        evaluated = True
        names = ",".join(KEY_USAGE_BITS[b] for b in sorted(cert.key_usage)) or "none"
        if i == 0:
            if not cert.key_usage & {DIGITAL_SIGNATURE, KEY_ENCIPHERMENT}:
                problems.append(f"{_label(cert, i)}: leaf usage {{{names}}} lacks digitalSignature/keyEncipherment")
        elif KEY_CERT_SIGN not in cert.key_usage:
            problems.append(f"{_label(cert, i)}: issuer usage {{{names}}} lacks keyCertSign")
    if problems:
        return _fail(crit, problems)
    return _ok(crit, "ok" if evaluated else NOT_EVALUATED)


def check_validity(cert: CertificateView, now: datetime) -> CriterionResult:
    crit = Criterion.VALIDITY_DATES
    days_expired = max(0, math.floor((now - cert.not_after).total_seconds() / 86400))
    if now < cert.not_before:
        return _fail(crit, [f"not yet valid until {cert.not_before.isoformat()}; days_expired=0"])
    if now > cert.not_after:
        return _fail(crit, [f"expired at {cert.not_after.isoformat()}; days_expired={days_expired}"])
    return _ok(crit, "ok; days_expired=0")


def check_critical_extensions(cert: CertificateView, recognized_oids: frozenset[str] = DEFAULT_RECOGNIZED_OIDS) -> CriterionResult:
    if not recognized_oids:
        raise ValueError("recognized_oids must not be empty")
    unknown = [e.oid for e in cert.extensions if e.critical and e.oid not in recognized_oids]
    if unknown:
        return _fail(Criterion.CRITICAL_EXTENSIONS, [f"unrecognized critical extension {oid}" for oid in unknown])
    return _ok(Criterion.CRITICAL_EXTENSIONS)


def check_hostname(cert: CertificateView, hostname: str) -> CriterionResult:
    crit = Criterion.HOSTNAME_VALIDATION
    if OID_SUBJECT_ALT_NAME in cert.malformed_extensions:
        return _fail(crit, ["malformed SubjectAltName"])
    names = leaf_names(cert)
    if not names:
        return _fail(crit, [f"no dNSName or CN to match {hostname!r}"])
    for name in names:
        if match_hostname(name, hostname):
            return _ok(crit, f"matched {name!r}")
    problems = [f"{hostname!r} matches none of {names!r}"]
    for name in names:
        why = wildcard_problem(name)
        if why:
            problems.append(f"invalid pattern {name!r}: {why}")
    return _fail(crit, problems)


def check_basic_constraints(chain: Sequence[CertificateView]) -> CriterionResult:
    crit = Criterion.BASIC_CONSTRAINTS
    problems = []
    for i, cert in enumerate(chain):
        if OID_BASIC_CONSTRAINTS in cert.malformed_extensions:
            problems.append(f"{_label(cert, i)}: malformed BasicConstraints")
            continue
        if i == 0:
            continue
        bc = cert.basic_constraints
        if bc is None or not bc.is_ca:
            problems.append(f"{_label(cert, i)}: signs certificates but is not marked cA")
            continue
        # non-leaf certs strictly below index i
        below = i - 1
        if bc.path_len is not None and below > bc.path_len:
            problems.append(f"{_label(cert, i)}: pathLen={bc.path_len} but {below} intermediate(s) follow")
    if problems:
        return _fail(crit, problems)
    return _ok(crit, "ok" if len(chain) > 1 or chain[0].basic_constraints else NOT_EVALUATED)


def check_name_constraints(chain: Sequence[CertificateView], names: Sequence[str] | None = None) -> CriterionResult:
    crit = Criterion.NAME_CONSTRAINTS
    if names is None:
        names = leaf_names(chain[0])
    problems = []
    notes = []
    evaluated = False
    for i, cert in enumerate(chain[1:], start=1):
        if OID_NAME_CONSTRAINTS in cert.malformed_extensions:
            problems.append(f"{_label(cert, i)}: malformed NameConstraints")
            continue
        nc = cert.name_constraints
        if nc is None:
            continue
        evaluated = True
        if nc.has_base_distance:
            notes.append(f"{_label(cert, i)}: minimum/maximum ignored")
        for name in names:
            if nc.permitted and not any(in_subtree(name, s) for s in nc.permitted):
                problems.append(f"{name!r} outside permitted subtrees {list(nc.permitted)!r} of {_label(cert, i)}")
            for s in nc.excluded:
                if in_subtree(name, s):
                    problems.append(f"{name!r} inside excluded subtree {s!r} of {_label(cert, i)}")
    if problems:
        return _fail(crit, problems + notes)
    detail = "ok" if evaluated else NOT_EVALUATED
    return _ok(crit, "; ".join([detail, *notes]))


def is_self_signed(cert: CertificateView) -> bool:
    if canonical_dn(cert.issuer_dn) != canonical_dn(cert.subject_dn):
        return False
    return cert.aki is None or cert.aki == cert.ski


def validate(
    chain: Sequence[CertificateView],
    hostname: str,
    now: datetime | None = None,
    config: ValidationConfig | None = None,
) -> ValidationReport:
    """Run all six criteria and the self-signed check on a leaf-first chain."""
    if not chain:
        raise ValueError("empty certificate chain")
    config = config or ValidationConfig()
    if now is None:
        now = datetime.now(timezone.utc)
    elif now.tzinfo is None:
        now = now.replace(tzinfo=timezone.utc)

    validity = [check_validity(c, now) for c in chain]
    critical = [check_critical_extensions(c, config.recognized_oids) for c in chain]
    results = (
        check_key_usage(chain),
        _merge(Criterion.VALIDITY_DATES, chain, validity),
        _merge(Criterion.CRITICAL_EXTENSIONS, chain, critical),
        check_hostname(chain[0], hostname),
        check_basic_constraints(chain),
        check_name_constraints(chain),
    )
    return ValidationReport(results, is_self_signed(chain[0]), now, hostname)


def _merge(crit: Criterion, chain, results: list[CriterionResult]) -> CriterionResult:
    problems = [f"{_label(c, i)}: {r.detail}" for i, (c, r) in enumerate(zip(chain, results)) if r.failed]
    if problems:
        return _fail(crit, problems)
    return results[0]
