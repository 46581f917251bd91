"""Equal-frequency numeric-to-nominal conversion."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from tlsverdict.ml_core.dataset import NOMINAL, NUMERIC, Attribute, Dataset


class DegenerateAttribute(UserWarning):
    """A numeric column was constant on the training data."""


def bin_label(i: int) -> str:
    return f"b{i}"


@dataclass(frozen=True)
class Discretizer:
    cut_points: dict[str, tuple[float, ...]]

    def __post_init__(self):
        for name, cuts in self.cut_points.items():
            if any(b <= a for a, b in zip(cuts, cuts[1:])):
                raise ValueError(f"cut-points for {name!r} must be strictly increasing")

    def n_bins(self, name: str) -> int:
        return len(self.cut_points[name]) + 1

    def bin_of(self, name: str, value: float) -> str:
        # bin i covers (cut[i-1], cut[i]]; values beyond the extremes clamp
        return bin_label(int(np.searchsorted(self.cut_points[name], float(value), side="left")))

    def to_dict(self) -> dict:
        return {name: list(cuts) for name, cuts in self.cut_points.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "Discretizer":
        return cls({name: tuple(float(c) for c in cuts) for name, cuts in d.items()})


def fit_discretizer(dataset: Dataset, numeric_attrs: Sequence[str] | None = None, bins: int = 10) -> Discretizer:
    """Equal-frequency cut-points at the interior ``k/bins`` quantiles
    (linear interpolation), deduplicated."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    if numeric_attrs is None:
        numeric_attrs = [a.name for a in dataset.schema if a.kind == NUMERIC]
    cuts = {}
    probs = np.arange(1, bins) / bins
    for name in numeric_attrs:
        col = np.asarray(dataset.column(name), dtype=float)
        if col.size == 0:
            raise ValueError(f"no training values for {name!r}")
        q = np.unique(np.quantile(col, probs))
        # a cut at the maximum would leave the last bin empty
        q = q[q < col.max()]
        if q.size == 0:
            warnings.warn(f"attribute {name!r} is constant; using a single bin", DegenerateAttribute, stacklevel=2)
        cuts[name] = tuple(float(c) for c in q)
    return Discretizer(cuts)


def discretized_schema(schema: Sequence[Attribute], disc: Discretizer) -> tuple[Attribute, ...]:
    out = []
    for a in schema:
        if a.name in disc.cut_points:
            a = Attribute(a.name, NOMINAL, tuple(bin_label(i) for i in range(disc.n_bins(a.name))))
        out.append(a)
    return tuple(out)


def apply_discretizer(disc: Discretizer, dataset: Dataset) -> Dataset:
    positions = [(i, a.name) for i, a in enumerate(dataset.schema) if a.name in disc.cut_points]
    rows = []
    for row in dataset.rows:
        row = list(row)
        for i, name in positions:
            row[i] = disc.bin_of(name, row[i])
        rows.append(tuple(row))
    return replace(dataset, schema=discretized_schema(dataset.schema, disc), rows=rows)


def discretize_instance(disc: Discretizer, schema: Sequence[Attribute], row: Sequence) -> tuple:
    return tuple(disc.bin_of(a.name, v) if a.name in disc.cut_points else v for a, v in zip(schema, row))
