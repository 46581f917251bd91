"""
Validating a certificate chain
==============================

Build a small chain in memory, break it in a few ways and look at which
criteria fail.
"""

# %%
import json
from datetime import timedelta

from tlsverdict.cert_validation import validate
from tlsverdict.synthetic import REFERENCE_TIME, CertSpec, build_certificate, key_id
from tlsverdict.x509_codec import decode_certificate

host = "shop.example.com"


def chain(leaf_kw=None, ca_kw=None):
    leaf = dict(san=[host], key_usage=(0, 2), basic_constraints=(False, None), ski=key_id(host), aki=key_id("Demo CA"))
    ca = dict(key_usage=(5, 6), basic_constraints=(True, None), ski=key_id("Demo CA"))
    leaf.update(leaf_kw or {})
    ca.update(ca_kw or {})
    specs = CertSpec(host, "Demo CA", **leaf), CertSpec("Demo CA", "Demo CA", **ca)
    return [decode_certificate(build_certificate(s)) for s in specs]


def show(title, certs, hostname=host):
    report = validate(certs, hostname, REFERENCE_TIME)
    failed = [c.value for c in report.failed_criteria()] or ["none"]
    print(f"{title:28s} failed: {', '.join(failed)}")


# %%
# A clean chain passes every check.
show("clean", chain())

# %%
# Single faults flip exactly one criterion.
show("expired leaf", chain({"not_after": REFERENCE_TIME - timedelta(days=3)}))
show("wrong hostname", chain(), "pay.example.com")
show("CA excludes example.com", chain(ca_kw={"name_constraints": ((), ("example.com",))}))
show("private critical extension", chain({"extra_extensions": [("1.2.3.4.5", True, b"\x05\x00")]}))

# %%
# Detail strings say why.
report = validate(chain({"san": ["*.*.example.com"]}), host, REFERENCE_TIME)
print(json.dumps(report.to_dict(), indent=2)[:700])
