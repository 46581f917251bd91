"""
Two-phase verdicts on a synthetic corpus
========================================

Generate labelled sessions, train both phase models and ask for a verdict
on fresh sessions.
"""

# %%
import time

from tlsverdict.pipeline import PHASE1, PHASE2, Models, run_verdict, train_phase
from tlsverdict.synthetic import REFERENCE_TIME, featurize_corpus, generate_corpus, generate_session
from tlsverdict.x509_codec import decode_certificate

t0 = time.perf_counter()
sessions = generate_corpus(1000, seed=42)
d1, d2 = featurize_corpus(sessions)
print(f"featurized {len(sessions)} sessions in {time.perf_counter() - t0:.1f}s")

# %%
m1, holdout1 = train_phase(PHASE1, d1, seed=42)
m2, holdout2 = train_phase(PHASE2, d2, seed=42)
print("phase 1 (C4.5) holdout:", holdout1.to_dict())
print("phase 2 (TAN)  holdout:", holdout2.to_dict())

# %%
# Which attributes did the TAN structure link?
links = {a: p for a, p in m2.classifier.attribute_parents.items() if p}
print(dict(list(links.items())[:8]))

# %%
# Fresh sessions the models have never seen.
import numpy as np

rng = np.random.default_rng(2024)
models = Models(m1, m2)
for i, malicious in enumerate([False, True, False, True, True]):
    s = generate_session(rng, malicious, 5000 + i)
    chain = [decode_certificate(d) for d in s.chain]
    v = run_verdict(chain, s.hostname, s.pcap, models, now=REFERENCE_TIME)
    print(f"{s.label:9s} {s.hostname:24s} -> {v.decision.value:16s} ({v.confidence:.3f})")
