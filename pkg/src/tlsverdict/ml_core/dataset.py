"""Tabular datasets with a typed schema, CSV round-tripping and a
stratified, seeded train/test split."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

NOMINAL = "nominal"
NUMERIC = "numeric"

MALICIOUS = "malicious"
BENIGN = "benign"
LABEL_COLUMN = "label"


class DatasetError(ValueError):
    pass


class EmptyDataset(DatasetError):
    pass


class SchemaMismatch(DatasetError):
    pass


class TooFewRows(DatasetError):
    pass


@dataclass(frozen=True)
class Attribute:
    name: str
    kind: str = NOMINAL
    values: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.kind == NOMINAL:
            d["values"] = list(self.values)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "Attribute":
        return cls(d["name"], d["kind"], tuple(d.get("values", ())))


@dataclass
class Dataset:
    """Rows are tuples aligned with ``schema``; ``labels`` is parallel to rows.

    ``label_values`` is ordered (positive class first).
    """

    schema: tuple[Attribute, ...]
    rows: list[tuple] = field(default_factory=list)
    labels: list[str] = field(default_factory=list)
    label_values: tuple[str, ...] = (MALICIOUS, BENIGN)

    def __post_init__(self):
        self.schema = tuple(self.schema)
        if len(self.rows) != len(self.labels):
            raise DatasetError("rows and labels differ in length")
        width = len(self.schema)
        for row in self.rows:
            if len(row) != width:
                raise SchemaMismatch(f"row has {len(row)} values, schema has {width}")
        unknown = set(self.labels) - set(self.label_values)
        if unknown:
            raise DatasetError(f"labels {sorted(unknown)} not in {self.label_values}")

    def __len__(self):
        return len(self.rows)

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.schema]

    @property
    def positive_label(self) -> str:
        return self.label_values[0]

    def index(self, name: str) -> int:
        for i, a in enumerate(self.schema):
            if a.name == name:
                return i
        raise SchemaMismatch(f"no attribute {name!r}")

    def column(self, name_or_index) -> list:
        i = name_or_index if isinstance(name_or_index, int) else self.index(name_or_index)
        return [r[i] for r in self.rows]

    def subset(self, indices: Iterable[int]) -> "Dataset":
        idx = list(indices)
        return replace(self, rows=[self.rows[i] for i in idx], labels=[self.labels[i] for i in idx])

    def with_observed_values(self) -> "Dataset":
        """Fill each nominal attribute's value list from the data, keeping
        any declared values first."""
        schema = []
        for i, a in enumerate(self.schema):
            if a.kind == NOMINAL:
                seen = list(a.values)
                extra = sorted({r[i] for r in self.rows} - set(seen), key=_value_order)
                a = replace(a, values=tuple(seen + extra))
            schema.append(a)
        return replace(self, schema=tuple(schema))


def _value_order(v):
    try:
        return (0, float(v), str(v))
    except (TypeError, ValueError):
        return (1, 0.0, str(v))


def as_row(schema: Sequence[Attribute], instance) -> tuple:
    """Align a mapping or sequence instance with ``schema``."""
    if isinstance(instance, Mapping):
        missing = [a.name for a in schema if a.name not in instance]
        if missing:
            raise SchemaMismatch(f"instance lacks attributes {missing}")
        return tuple(instance[a.name] for a in schema)
    row = tuple(instance)
    if len(row) != len(schema):
        raise SchemaMismatch(f"instance has {len(row)} values, schema has {len(schema)}")
    return row


# ----------------------------------------------------------------- CSV ---


def write_csv(dataset: Dataset, path_or_buf, append: bool = False) -> None:
    header = dataset.names + [LABEL_COLUMN]

    def _emit(fh, with_header):
        w = csv.writer(fh, lineterminator="\n")
        if with_header:
            w.writerow(header)
        for row, label in zip(dataset.rows, dataset.labels):
            w.writerow([_fmt(v) for v in row] + [label])

    if isinstance(path_or_buf, (str, os.PathLike)):
        exists = append and os.path.exists(path_or_buf) and os.path.getsize(path_or_buf) > 0
        if exists:
            with open(path_or_buf, newline="") as fh:
                existing = next(csv.reader(fh), None)
            if existing != header:
                raise SchemaMismatch(f"{path_or_buf} has a different header")
        with open(path_or_buf, "a" if exists else "w", newline="") as fh:
            _emit(fh, not exists)
    else:
        _emit(path_or_buf, True)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_csv(
    path_or_buf,
    schema: Sequence[Attribute] | None = None,
    label_values: tuple[str, ...] = (MALICIOUS, BENIGN),
) -> Dataset:
    """Read a CSV with a header row and the label in the last column.

    Without ``schema`` a column is numeric when every value parses as a
    float, nominal otherwise.
    """
    if isinstance(path_or_buf, (str, os.PathLike)):
        with open(path_or_buf, newline="") as fh:
            table = list(csv.reader(fh))
    else:
        table = list(csv.reader(path_or_buf))
    if not table:
        raise EmptyDataset("CSV has no header")
    header, body = table[0], [r for r in table[1:] if r]
    names = header[:-1]
    if schema is None:
        schema = tuple(Attribute(n, NUMERIC if _all_float(r[i] for r in body) and body else NOMINAL) for i, n in enumerate(names))
    else:
        schema = tuple(schema)
        if [a.name for a in schema] != names:
            raise SchemaMismatch(f"CSV columns {names} do not match schema {[a.name for a in schema]}")
    rows = []
    labels = []
    for line_no, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise SchemaMismatch(f"line {line_no}: {len(r)} fields, header has {len(header)}")
        rows.append(tuple(float(v) if a.kind == NUMERIC else v for a, v in zip(schema, r)))
        labels.append(r[-1])
    return Dataset(schema, rows, labels, tuple(label_values))


def _all_float(values) -> bool:
    try:
        for v in values:
            float(v)
    except ValueError:
        return False
    return True


# --------------------------------------------------------------- split ---


@dataclass(frozen=True)
class Split:
    train: Dataset
    test: Dataset
    train_indices: tuple[int, ...]
    test_indices: tuple[int, ...]


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_train_test(dataset: Dataset, fraction: float = 0.66, seed: int = 0) -> Split:
    """Seeded, label-stratified split with ``round(fraction * n)`` train rows."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must be in (0, 1)")
    by_label: dict[str, list[int]] = {}
    for i, lab in enumerate(dataset.labels):
        by_label.setdefault(lab, []).append(i)
    short = [lab for lab in dataset.label_values if len(by_label.get(lab, ())) < 2]
    if short:
        raise TooFewRows(f"fewer than 2 rows for label(s) {short}")

    n_train = _round_half_up(fraction * len(dataset))
    # largest-remainder allocation keeps every class within one row of its share
    ideal = {lab: fraction * len(idx) for lab, idx in by_label.items()}
    alloc = {lab: math.floor(v) for lab, v in ideal.items()}
    order = sorted(ideal, key=lambda lab: (-(ideal[lab] - alloc[lab]), dataset.label_values.index(lab)))
    for lab in order[: n_train - sum(alloc.values())]:
        alloc[lab] += 1

    rng = np.random.default_rng(seed)
    train, test = [], []
    for lab in dataset.label_values:
        idx = np.array(by_label[lab])
        rng.shuffle(idx)
        train.extend(int(i) for i in idx[: alloc[lab]])
        test.extend(int(i) for i in idx[alloc[lab] :])
    train.sort()
    test.sort()
    return Split(dataset.subset(train), dataset.subset(test), tuple(train), tuple(test))
