"""C4.5 decision tree on nominal attributes.

Multiway splits chosen by gain ratio among attributes whose information
gain is at least the average, with optional pessimistic-error subtree
replacement.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from scipy.stats import beta

from tlsverdict.ml_core.dataset import NOMINAL, Dataset, EmptyDataset, SchemaMismatch, as_row

_EPS = 1e-12


def entropy(counts: Sequence[int] | Mapping) -> float:
    if isinstance(counts, Mapping):
        counts = list(counts.values())
    n = sum(counts)
    if n == 0:
        return 0.0
    return -sum(c / n * math.log2(c / n) for c in counts if c)


def _partition(labels: Sequence[str], column: Sequence) -> dict:
    parts: dict = {}
    for v, lab in zip(column, labels):
        parts.setdefault(v, Counter())[lab] += 1
    return parts


def split_scores(labels: Sequence[str], column: Sequence) -> tuple[float, float]:
    """Return (information gain, split information) of splitting on ``column``."""
    n = len(labels)
    parts = _partition(labels, column)
    remainder = sum(sum(c.values()) / n * entropy(c) for c in parts.values())
    gain = entropy(Counter(labels)) - remainder
    split_info = entropy([sum(c.values()) for c in parts.values()])
    return gain, split_info


def information_gain(dataset: Dataset, attribute: str) -> float:
    return split_scores(dataset.labels, dataset.column(attribute))[0]


def gain_ratio(dataset: Dataset, attribute: str) -> float:
    if not len(dataset):
        raise EmptyDataset("gain ratio of an empty dataset")
    gain, split_info = split_scores(dataset.labels, dataset.column(attribute))
    if split_info <= 0:
        return 0.0
    return gain / split_info


@dataclass
class Node:
    class_counts: dict[str, int]
    attribute: str | None = None
    children: dict[str, "Node"] = field(default_factory=dict)

    @property
    def is_leaf(self) -> bool:
        return self.attribute is None

    def majority(self, label_values: Sequence[str]) -> str:
        # ties go to the earlier label (the positive class)
        return max(label_values, key=lambda lab: (self.class_counts.get(lab, 0), -label_values.index(lab)))

    def total(self) -> int:
        return sum(self.class_counts.values())

    def depth(self) -> int:
        return 0 if self.is_leaf else 1 + max(c.depth() for c in self.children.values())

    def n_leaves(self) -> int:
        return 1 if self.is_leaf else sum(c.n_leaves() for c in self.children.values())

    def to_dict(self, label_values) -> dict:
        counts = {lab: self.class_counts.get(lab, 0) for lab in label_values}
        if self.is_leaf:
            return {"label": self.majority(label_values), "class_counts": counts}
        return {
            "attribute": self.attribute,
            "class_counts": counts,
            "children": {v: c.to_dict(label_values) for v, c in self.children.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Node":
        node = cls(dict(d["class_counts"]), d.get("attribute"))
        node.children = {v: cls.from_dict(c) for v, c in d.get("children", {}).items()}
        return node


@dataclass
class DecisionTreeModel:
    root: Node
    schema: tuple
    label_values: tuple[str, ...]
    training_meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kind": "c45",
            "label_values": list(self.label_values),
            "training_meta": dict(self.training_meta),
            "tree": self.root.to_dict(self.label_values),
        }

    @classmethod
    def from_dict(cls, d: dict, schema) -> "DecisionTreeModel":
        return cls(Node.from_dict(d["tree"]), tuple(schema), tuple(d["label_values"]), dict(d.get("training_meta", {})))


@dataclass(frozen=True)
class Prediction:
    label: str
    confidence: float


def _choose_attribute(labels, rows, candidates: list[int]) -> int | None:
    scored = []
    for i in candidates:
        col = [r[i] for r in rows]
        gain, split_info = split_scores(labels, col)
        if split_info <= 0:
            continue  # attribute takes a single value here; splitting is a no-op
        scored.append((i, gain, gain / split_info))
    if not scored:
        return None
    mean_gain = sum(g for _, g, _ in scored) / len(scored)
    eligible = [s for s in scored if s[1] >= mean_gain - _EPS] or scored
    best = max(eligible, key=lambda s: (s[2], -s[0]))
    return best[0]


def _grow(rows, labels, attrs: list[int], schema, min_leaf: int) -> Node:
    node = Node(dict(Counter(labels)))
    if len(node.class_counts) <= 1 or not attrs or len(rows) < min_leaf:
        return node
    best = _choose_attribute(labels, rows, attrs)
    if best is None:
        return node
    node.attribute = schema[best].name
    remaining = [a for a in attrs if a != best]
    groups: dict = {}
    for r, lab in zip(rows, labels):
        groups.setdefault(r[best], ([], []))
        groups[r[best]][0].append(r)
        groups[r[best]][1].append(lab)
    for value in sorted(groups, key=str):
        sub_rows, sub_labels = groups[value]
        node.children[value] = _grow(sub_rows, sub_labels, remaining, schema, min_leaf)
    return node


def pessimistic_errors(n: int, errors: int, cf: float) -> float:
    """Upper ``cf`` confidence bound on the error count (binomial, exact)."""
    if n == 0:
        return 0.0
    if errors >= n:
        return float(n)
    return n * float(beta.ppf(1 - cf, errors + 1, n - errors))


def _prune(node: Node, label_values, cf: float) -> float:
    """Subtree replacement bottom-up; returns the estimated error of ``node``."""
    n = node.total()
    leaf_err = pessimistic_errors(n, n - node.class_counts.get(node.majority(label_values), 0), cf)
    if node.is_leaf:
        return leaf_err
    subtree_err = sum(_prune(c, label_values, cf) for c in node.children.values())
    if leaf_err <= subtree_err + 0.1:
        node.attribute = None
        node.children = {}
        return leaf_err
    return subtree_err


def c45_train(dataset: Dataset, min_leaf: int = 2, pruning_cf: float | None = None, seed: int | None = None) -> DecisionTreeModel:
    """Grow a tree; prune it when ``pruning_cf`` is given (C4.5 uses 0.25)."""
    if not len(dataset):
        raise EmptyDataset("cannot train on an empty dataset")
    bad = [a.name for a in dataset.schema if a.kind != NOMINAL]
    if bad:
        raise SchemaMismatch(f"C4.5 needs nominal attributes; discretize {bad} first")
    root = _grow(dataset.rows, dataset.labels, list(range(len(dataset.schema))), dataset.schema, min_leaf)
    if pruning_cf is not None:
        _prune(root, dataset.label_values, pruning_cf)
    meta = {"seed": seed, "min_leaf": min_leaf, "pruned": pruning_cf is not None, "pruning_cf": pruning_cf}
    return DecisionTreeModel(root, dataset.schema, dataset.label_values, meta)


def c45_predict(model: DecisionTreeModel, instance) -> Prediction:
    row = as_row(model.schema, instance)
    values = dict(zip((a.name for a in model.schema), row))
    node = model.root
    while not node.is_leaf:
        child = node.children.get(values[node.attribute])
        if child is None:
            break  # unseen value: answer with this node's majority
        node = child
    label = node.majority(model.label_values)
    total = node.total()
    return Prediction(label, node.class_counts.get(label, 0) / total if total else 0.0)
