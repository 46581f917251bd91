"""Tree-augmented naive Bayes.

Structure: Chow-Liu maximum-weight spanning tree over the class-conditional
mutual information of attribute pairs, rooted at the first attribute.
Parameters: Laplace-smoothed counts of P(x | parent value, class).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from tlsverdict.ml_core.dataset import NOMINAL, Dataset, EmptyDataset, SchemaMismatch, as_row


def _codes(dataset: Dataset) -> tuple[np.ndarray, np.ndarray, list[tuple[str, ...]]]:
    """Integer-code every attribute and the label."""
    values = []
    cols = []
    for i, a in enumerate(dataset.schema):
        if a.kind != NOMINAL:
            raise SchemaMismatch(f"TAN needs nominal attributes; discretize {a.name!r} first")
        vals = a.values or tuple(sorted({r[i] for r in dataset.rows}, key=str))
        lookup = {v: k for k, v in enumerate(vals)}
        try:
            cols.append([lookup[r[i]] for r in dataset.rows])
        except KeyError as exc:
            raise SchemaMismatch(f"value {exc} of {a.name!r} not declared in schema") from None
        values.append(tuple(vals))
    X = np.array(cols, dtype=np.int64).T.reshape(len(dataset), len(dataset.schema))
    y = np.array([dataset.label_values.index(lab) for lab in dataset.labels], dtype=np.int64)
    return X, y, values


def conditional_mutual_information(xi: np.ndarray, xj: np.ndarray, y: np.ndarray, ni: int, nj: int, nc: int) -> float:
    """Empirical I(Xi; Xj | C) in nats from integer codes."""
    n = len(y)
    if n == 0:
        return 0.0
    joint = np.zeros((nc, ni, nj))
    np.add.at(joint, (y, xi, xj), 1.0)
    p_xyz = joint / n
    p_c = joint.sum(axis=(1, 2))
    p_ic = joint.sum(axis=2)
    p_jc = joint.sum(axis=1)
    mask = joint > 0
    c_idx, i_idx, j_idx = np.nonzero(mask)
    ratio = joint[mask] * p_c[c_idx] / (p_ic[c_idx, i_idx] * p_jc[c_idx, j_idx])
    return float(np.sum(p_xyz[mask] * np.log(ratio)))


def maximum_spanning_tree(weights: np.ndarray) -> list[tuple[int, int]]:
    """Prim's algorithm from node 0; ties go to the lowest (parent, child)."""
    n = weights.shape[0]
    if n <= 1:
        return []
    in_tree = [0]
    edges = []
    best_w = weights[0].astype(float).copy()
    best_from = np.zeros(n, dtype=int)
    outside = set(range(1, n))
    while outside:
        v = max(outside, key=lambda k: (best_w[k], -best_from[k], -k))
        edges.append((int(best_from[v]), v))
        outside.remove(v)
        in_tree.append(v)
        for k in outside:
            if weights[v, k] > best_w[k]:
                best_w[k] = weights[v, k]
                best_from[k] = v
    return edges


def orient_tree(edges: Sequence[tuple[int, int]], n: int, root: int = 0) -> list[int | None]:
    """Parent index of every node after rooting the undirected tree."""
    adj: dict[int, list[int]] = {i: [] for i in range(n)}
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    parents: list[int | None] = [None] * n
    seen = {root}
    stack = [root]
    while stack:
        u = stack.pop()
        for v in sorted(adj[u]):
            if v not in seen:
                seen.add(v)
                parents[v] = u
                stack.append(v)
    return parents


@dataclass
class TanBayesModel:
    schema: tuple
    label_values: tuple[str, ...]
    values: list[tuple[str, ...]]
    parents: list[int | None]
    class_counts: np.ndarray  # (n_classes,)
    # counts[i] has shape (n_classes, n_parent_values or 1, n_values_i)
    counts: list[np.ndarray]
    alpha: float = 1.0
    cmi: np.ndarray | None = field(default=None, repr=False)

    @property
    def attribute_parents(self) -> dict[str, str | None]:
        return {a.name: (self.schema[p].name if p is not None else None) for a, p in zip(self.schema, self.parents)}

    @property
    def class_prior(self) -> np.ndarray:
        total = self.class_counts.sum() + self.alpha * len(self.label_values)
        return (self.class_counts + self.alpha) / total

    def cpt(self, i: int) -> np.ndarray:
        c = self.counts[i]
        return (c + self.alpha) / (c.sum(axis=2, keepdims=True) + self.alpha * c.shape[2])

    def _marginal_cpt(self, i: int) -> np.ndarray:
        c = self.counts[i].sum(axis=1)
        return (c + self.alpha) / (c.sum(axis=1, keepdims=True) + self.alpha * c.shape[1])

    def _encode(self, instance) -> list[int | None]:
        row = as_row(self.schema, instance)
        out = []
        for vals, v in zip(self.values, row):
            try:
                out.append(vals.index(v))
            except ValueError:
                out.append(None)
        return out

    def _factors(self, codes: list[int | None]) -> np.ndarray:
        """Per-attribute probability vectors over classes, shape (n_attrs, n_classes)."""
        rows = []
        for i, (x, p) in enumerate(zip(codes, self.parents)):
            if x is None:
                # value never seen in training: carries no evidence
                rows.append(np.ones(len(self.label_values)))
                continue
            if p is None:
                rows.append(self.cpt(i)[:, 0, x])
            elif codes[p] is None:
                rows.append(self._marginal_cpt(i)[:, x])
            else:
                rows.append(self.cpt(i)[:, codes[p], x])
        return np.array(rows).reshape(len(codes), len(self.label_values))

    def log_joint(self, instance) -> np.ndarray:
        factors = self._factors(self._encode(instance))
        return np.log(self.class_prior) + np.log(factors).sum(axis=0)

    def joint(self, instance) -> np.ndarray:
        """Direct (non-log) product; may underflow for many attributes."""
        factors = self._factors(self._encode(instance))
        return self.class_prior * np.prod(factors, axis=0)

    def to_dict(self) -> dict:
        return {
            "kind": "tan",
            "alpha": self.alpha,
            "label_values": list(self.label_values),
            "class_counts": [int(c) for c in self.class_counts],
            "attributes": [
                {
                    "name": a.name,
                    "values": list(vals),
                    "parent": self.schema[p].name if p is not None else None,
                    "counts": self.counts[i].astype(int).tolist(),
                }
                for i, (a, vals, p) in enumerate(zip(self.schema, self.values, self.parents))
            ],
        }

    @classmethod
    def from_dict(cls, d: dict, schema) -> "TanBayesModel":
        schema = tuple(schema)
        names = [a.name for a in schema]
        attrs = d["attributes"]
        if [a["name"] for a in attrs] != names:
            raise SchemaMismatch("model attributes do not match schema")
        return cls(
            schema=schema,
            label_values=tuple(d["label_values"]),
            values=[tuple(a["values"]) for a in attrs],
            parents=[names.index(a["parent"]) if a["parent"] is not None else None for a in attrs],
            class_counts=np.array(d["class_counts"], dtype=float),
            counts=[np.array(a["counts"], dtype=float) for a in attrs],
            alpha=float(d["alpha"]),
        )


@dataclass(frozen=True)
class Posterior:
    label: str
    posterior: dict[str, float]

    @property
    def confidence(self) -> float:
        return self.posterior[self.label]


def cmi_matrix(X: np.ndarray, y: np.ndarray, values, n_classes: int) -> np.ndarray:
    n_attr = X.shape[1]
    W = np.zeros((n_attr, n_attr))
    for i in range(n_attr):
        for j in range(i + 1, n_attr):
            W[i, j] = W[j, i] = conditional_mutual_information(
                X[:, i], X[:, j], y, len(values[i]), len(values[j]), n_classes
            )
    return W


def tan_train(dataset: Dataset, alpha: float = 1.0) -> TanBayesModel:
    if not len(dataset):
        raise EmptyDataset("cannot train on an empty dataset")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    X, y, values = _codes(dataset)
    nc = len(dataset.label_values)
    n_attr = X.shape[1]
    W = cmi_matrix(X, y, values, nc)
    parents = orient_tree(maximum_spanning_tree(W), n_attr, root=0)

    class_counts = np.bincount(y, minlength=nc).astype(float)
    counts = []
    for i in range(n_attr):
        p = parents[i]
        n_parent = len(values[p]) if p is not None else 1
        table = np.zeros((nc, n_parent, len(values[i])))
        pcol = X[:, p] if p is not None else np.zeros(len(y), dtype=np.int64)
        np.add.at(table, (y, pcol, X[:, i]), 1.0)
        counts.append(table)
    return TanBayesModel(dataset.schema, dataset.label_values, values, parents, class_counts, counts, alpha, W)


def tan_predict(model: TanBayesModel, instance) -> Posterior:
    """Normalized posterior over labels; exact ties go to the first
    (positive, i.e. malicious) label."""
    logj = model.log_joint(instance)
    shifted = np.exp(logj - logj.max())
    post = shifted / shifted.sum()
    best = int(np.argmax(post))  # argmax returns the first maximum
    return Posterior(model.label_values[best], {lab: float(p) for lab, p in zip(model.label_values, post)})
