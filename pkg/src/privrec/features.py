"""User feature schemas, encoding, and feature-table I/O.

A user record is a mix of numerical and categorical features.  Numerical
features are min-max normalized into [-1, 1]; categorical features are
one-hot encoded.  The concatenation of all encoded blocks is the flat
feature vector consumed by the local-DP mechanisms in :mod:`privrec.ldp`.

Normalization ranges are fitted on training users only and stored on the
schema so that the same mapping is applied everywhere.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace

import numpy as np

NUMERICAL = "numerical"
CATEGORICAL = "categorical"


@dataclass(frozen=True)
class FeatureField:
    """One named feature: a scalar (numerical) or a one-hot block (categorical)."""

    name: str
    kind: str
    categories: tuple = ()
    value_range: tuple | None = None  # (min, max), numerical only

    def __post_init__(self):
        if self.kind not in (NUMERICAL, CATEGORICAL):
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if self.kind == CATEGORICAL and len(self.categories) < 2:
            raise ValueError(f"categorical feature {self.name!r} needs >= 2 categories")
        if self.kind == NUMERICAL and self.value_range is not None:
            lo, hi = self.value_range
            if not (np.isfinite(lo) and np.isfinite(hi)) or hi < lo:
                raise ValueError(f"invalid range for feature {self.name!r}: {self.value_range}")

    @property
    def width(self) -> int:
        return 1 if self.kind == NUMERICAL else len(self.categories)


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature layout; owns the encoded width and block slices."""

    fields: tuple

    def __post_init__(self):
        if len(self.fields) < 1:
            raise ValueError("schema needs at least one feature")

    @property
    def n(self) -> int:
        """Number of features (not encoded columns)."""
        return len(self.fields)

    @property
    def width(self) -> int:
        """Total encoded width d0 = sum of block widths."""
        return sum(f.width for f in self.fields)

    def block(self, i: int) -> slice:
        """Column slice of feature ``i`` in the flat encoded vector."""
        start = sum(f.width for f in self.fields[:i])
        return slice(start, start + self.fields[i].width)

    def fit_ranges(self, raw_by_user: dict, users=None) -> "FeatureSchema":
        """Return a schema with numerical ranges filled from the given users' raw rows.

        Fields that already carry an explicit range are left untouched.
        ``users`` restricts the fit (e.g. to users present in the training
        split); default is every user in the table.
        """
        if users is None:
            users = list(raw_by_user)
        fitted = []
        for i, field in enumerate(self.fields):
            if field.kind == NUMERICAL and field.value_range is None:
                vals = [float(raw_by_user[u][i]) for u in users]
                if not vals:
                    raise ValueError(f"no data to fit range of feature {field.name!r}")
                field = replace(field, value_range=(min(vals), max(vals)))
            fitted.append(field)
        return FeatureSchema(tuple(fitted))

    def encode(self, raw_values) -> "FeatureVector":
        """Encode one raw row into a flat [-1, 1]/one-hot vector."""
        if len(raw_values) != self.n:
            raise ValueError(f"expected {self.n} raw values, got {len(raw_values)}")
        out = np.zeros(self.width)
        for i, (field, value) in enumerate(zip(self.fields, raw_values)):
            sl = self.block(i)
            if field.kind == NUMERICAL:
                if field.value_range is None:
                    raise ValueError(f"feature {field.name!r} has no fitted range")
                lo, hi = field.value_range
                v = float(value)
                if hi == lo:
                    out[sl] = 0.0
                else:
                    # values outside the fitted range are clamped into [-1, 1]
                    out[sl] = np.clip(2.0 * (v - lo) / (hi - lo) - 1.0, -1.0, 1.0)
            else:
                try:
                    j = field.categories.index(value)
                except ValueError:
                    raise ValueError(
                        f"unknown category {value!r} for feature {field.name!r}"
                    ) from None
                out[sl.start + j] = 1.0
        return FeatureVector(self, out)

    def to_dict(self) -> list:
        entries = []
        for f in self.fields:
            e = {"name": f.name, "kind": f.kind}
            if f.kind == CATEGORICAL:
                e["categories"] = list(f.categories)
            elif f.value_range is not None:
                e["range"] = list(f.value_range)
            entries.append(e)
        return entries

    @classmethod
    def from_dict(cls, entries) -> "FeatureSchema":
        fields = []
        for e in entries:
            if e["kind"] == CATEGORICAL:
                fields.append(FeatureField(e["name"], CATEGORICAL, tuple(e["categories"])))
            else:
                rng = tuple(e["range"]) if e.get("range") is not None else None
                fields.append(FeatureField(e["name"], NUMERICAL, value_range=rng))
        return cls(tuple(fields))


@dataclass
class FeatureVector:
    """A single user's encoded feature vector (pre-perturbation)."""

    schema: FeatureSchema
    values: np.ndarray

    def validate(self):
        """Check the pre-perturbation invariants; raises ValueError on violation."""
        if self.values.shape != (self.schema.width,):
            raise ValueError(
                f"feature vector has width {self.values.shape}, schema expects {self.schema.width}"
            )
        for i, field in enumerate(self.schema.fields):
            block = self.values[self.schema.block(i)]
            if field.kind == NUMERICAL:
                if not np.all(np.abs(block) <= 1.0):
                    raise ValueError(f"numerical feature {field.name!r} outside [-1, 1]")
            else:
                if not (np.all((block == 0) | (block == 1)) and block.sum() == 1):
                    raise ValueError(f"categorical feature {field.name!r} is not one-hot")


def read_feature_file(path, delimiter: str = ",") -> dict:
    """Read a feature table: header ``user_id,<f1>,...``; returns user_id -> raw row."""
    table = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"feature file {path} is empty")
        n_cols = len(header)
        for row in reader:
            if not row:
                continue
            if len(row) != n_cols:
                raise ValueError(f"malformed feature row in {path}: {row!r}")
            table[row[0]] = [cell.strip() for cell in row[1:]]
    return table


def write_feature_file(path, raw_by_user: dict, field_names, delimiter: str = ","):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow(["user_id", *field_names])
        for user, row in raw_by_user.items():
            writer.writerow([user, *row])


def encode_table(schema: FeatureSchema, raw_by_user: dict, users) -> np.ndarray:
    """Encode rows for ``users`` (in order) into a (len(users), d0) matrix."""
    mat = np.zeros((len(users), schema.width))
    for r, user in enumerate(users):
        if user not in raw_by_user:
            raise ValueError(f"no feature row for user {user!r}")
        mat[r] = schema.encode(raw_by_user[user]).values
    return mat


def schema_to_json(schema: FeatureSchema) -> str:
    return json.dumps(schema.to_dict())


def schema_from_json(text: str) -> FeatureSchema:
    return FeatureSchema.from_dict(json.loads(text))
