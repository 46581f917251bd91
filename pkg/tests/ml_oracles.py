"""Independent reference computations for the learning tests.

Everything here is plain Python over lists so it shares no code with the
package under test.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter

from tlsverdict.ml_core import NOMINAL, Attribute, Dataset

WEATHER_ROWS = [
    ("sunny", "hot", "high", "weak", "no"),
    ("sunny", "hot", "high", "strong", "no"),
    ("overcast", "hot", "high", "weak", "yes"),
    ("rain", "mild", "high", "weak", "yes"),
    ("rain", "cool", "normal", "weak", "yes"),
    ("rain", "cool", "normal", "strong", "no"),
    ("overcast", "cool", "normal", "strong", "yes"),
    ("sunny", "mild", "high", "weak", "no"),
    ("sunny", "cool", "normal", "weak", "yes"),
    ("rain", "mild", "normal", "weak", "yes"),
    ("sunny", "mild", "normal", "strong", "yes"),
    ("overcast", "mild", "high", "strong", "yes"),
    ("overcast", "hot", "normal", "weak", "yes"),
    ("rain", "mild", "high", "strong", "no"),
]
WEATHER_ATTRS = ("outlook", "temperature", "humidity", "wind")


def weather() -> Dataset:
    schema = tuple(Attribute(n, NOMINAL) for n in WEATHER_ATTRS)
    return Dataset(schema, [r[:4] for r in WEATHER_ROWS], [r[4] for r in WEATHER_ROWS], ("yes", "no")).with_observed_values()


def xor(copies: int = 3) -> Dataset:
    schema = (Attribute("a", NOMINAL, ("0", "1")), Attribute("b", NOMINAL, ("0", "1")))
    rows, labels = [], []
    for _ in range(copies):
        for a, b in itertools.product("01", repeat=2):
            rows.append((a, b))
            labels.append("malicious" if a != b else "benign")
    return Dataset(schema, rows, labels)


def h(labels) -> float:
    n = len(labels)
    return -sum(c / n * math.log2(c / n) for c in Counter(labels).values())


def gain_and_split(rows, labels, col):
    n = len(rows)
    groups: dict = {}
    for r, lab in zip(rows, labels):
        groups.setdefault(r[col], []).append(lab)
    remainder = sum(len(g) / n * h(g) for g in groups.values())
    split = -sum(len(g) / n * math.log2(len(g) / n) for g in groups.values())
    return h(labels) - remainder, split


def max_spanning_weight(w) -> float:
    """Brute force over every (n-1)-edge subset."""
    n = len(w)
    if n < 2:
        return 0.0
    edges = list(itertools.combinations(range(n), 2))
    best = -math.inf
    for subset in itertools.combinations(edges, n - 1):
        parent = list(range(n))

        def find(x):
            while parent[x] != x:
                x = parent[x]
            return x

        ok = True
        for a, b in subset:
            ra, rb = find(a), find(b)
            if ra == rb:
                ok = False
                break
            parent[ra] = rb
        if ok:
            best = max(best, sum(w[a][b] for a, b in subset))
    return best


def cmi(rows, labels, i, j) -> float:
    """I(Xi; Xj | C) in nats from raw frequencies."""
    n = len(rows)
    cxy = Counter((lab, r[i], r[j]) for r, lab in zip(rows, labels))
    cx = Counter((lab, r[i]) for r, lab in zip(rows, labels))
    cy = Counter((lab, r[j]) for r, lab in zip(rows, labels))
    cc = Counter(labels)
    total = 0.0
    for (c, x, y), k in cxy.items():
        total += k / n * math.log(k * cc[c] / (cx[(c, x)] * cy[(c, y)]))
    return total


def tan_posterior(rows, labels, label_values, values, parents, instance, alpha=1.0):
    """Bayes rule by direct enumeration of counts for a fixed structure."""
    n = len(rows)
    scores = []
    for c in label_values:
        idx = [k for k in range(n) if labels[k] == c]
        p = (len(idx) + alpha) / (n + alpha * len(label_values))
        for i, x in enumerate(instance):
            pa = parents[i]
            match = [k for k in idx if pa is None or rows[k][pa] == instance[pa]]
            hits = sum(1 for k in match if rows[k][i] == x)
            p *= (hits + alpha) / (len(match) + alpha * len(values[i]))
        scores.append(p)
    z = sum(scores)
    return [s / z for s in scores]
