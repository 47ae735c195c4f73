"""Sequence datasets: CSV ingestion, encoding, duplicate aggregation and
transversal summaries."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np


class SchemaError(ValueError):
    """Raised when an input file does not match the declared column roles."""


@dataclass(frozen=True)
class Alphabet:
    labels: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("alphabet labels must be unique")
        if len(self.labels) < 2:
            raise ValueError(
                f"alphabet needs at least 2 states, got {list(self.labels)}"
            )

    @property
    def v(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def encode(self, labels: Sequence[str]) -> np.ndarray:
        lookup = {lab: i for i, lab in enumerate(self.labels)}
        return np.array([lookup[x] for x in labels], dtype=np.int16)

    def decode(self, codes) -> list[str]:
        return [self.labels[int(c)] for c in codes]


@dataclass(frozen=True)
class SequenceDataset:
    """Encoded equal-length state sequences with weights and covariates.

    ``weights`` are always normalised to sum to ``n_units``, the number of
    sampled units the rows stand for. For raw data ``n_units == n``; after
    duplicate aggregation each row carries the summed weight of its group, so
    ``n_units`` stays at the original sample size.
    """

    states: np.ndarray
    alphabet: Alphabet
    weights: np.ndarray
    raw_weights: np.ndarray
    covariates: np.ndarray
    covariate_columns: tuple[str, ...] = ()
    covariate_groups: dict = field(default_factory=dict)
    ids: tuple[str, ...] = ()
    time_labels: tuple[str, ...] = ()
    n_units: int = 0

    def __post_init__(self):
        states = np.asarray(self.states)
        if states.ndim != 2 or states.shape[0] < 1 or states.shape[1] < 1:
            raise ValueError("states must be an n x T matrix with n, T >= 1")
        if states.min() < 0 or states.max() >= self.alphabet.v:
            raise ValueError("state index outside the alphabet")
        n = states.shape[0]
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (n,) or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be a length-n nonnegative vector")
        cov = np.asarray(self.covariates, dtype=float).reshape(n, -1)
        if cov.shape[1] != len(self.covariate_columns):
            raise ValueError("covariate matrix does not match its column names")
        for arr in (states, w, cov):
            arr.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "covariates", cov)
        if not self.ids:
            object.__setattr__(self, "ids", tuple(str(i + 1) for i in range(n)))
        if not self.time_labels:
            object.__setattr__(
                self, "time_labels", tuple(f"t{t + 1}" for t in range(self.T))
            )
        if not self.n_units:
            object.__setattr__(self, "n_units", n)
        if not self.covariate_groups:
            object.__setattr__(
                self,
                "covariate_groups",
                {c: (j,) for j, c in enumerate(self.covariate_columns)},
            )

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def T(self) -> int:
        return self.states.shape[1]

    @property
    def v(self) -> int:
        return self.alphabet.v

    @property
    def observed_mask(self) -> np.ndarray:
        """T x v boolean mask of the states observed at each time point."""
        mask = np.zeros((self.T, self.v), dtype=bool)
        for t in range(self.T):
            mask[t, np.unique(self.states[:, t])] = True
        return mask

    @property
    def observed_states(self) -> list[np.ndarray]:
        return [np.flatnonzero(row) for row in self.observed_mask]

    @property
    def v_t(self) -> np.ndarray:
        return self.observed_mask.sum(axis=1)

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return tuple(self.covariate_groups)

    def design(self, names: Sequence[str] = ()) -> np.ndarray:
        """Intercept-augmented design matrix for the named covariates."""
        cols = self.design_columns(names)
        idx = [self.covariate_columns.index(c) for c in cols]
        return np.column_stack([np.ones(self.n), self.covariates[:, idx]])

    def design_columns(self, names: Sequence[str] = ()) -> list[str]:
        cols = []
        for name in names:
            if name not in self.covariate_groups:
                raise KeyError(f"unknown covariate {name!r}")
            cols.extend(self.covariate_columns[j] for j in self.covariate_groups[name])
        return cols

    def with_weights(self, weights) -> "SequenceDataset":
        """Copy with new raw weights, renormalised to sum to ``n_units``."""
        w = np.asarray(weights, dtype=float)
        return replace(
            self, weights=normalize_weights(w, self.n_units), raw_weights=w
        )

    def sequence_labels(self, i: int) -> list[str]:
        return self.alphabet.decode(self.states[i])


@dataclass(frozen=True)
class AggregationMap:
    unique_index_of: np.ndarray
    multiplicity_weights: np.ndarray

    def expand(self, rows: np.ndarray) -> np.ndarray:
        """Map per-unique-row values back onto the original rows."""
        return np.asarray(rows)[self.unique_index_of]


def normalize_weights(w, total) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    s = w.sum()
    if s <= 0:
        raise ValueError("weights must not all be zero")
    return w * (total / s)


def from_arrays(
    sequences: Sequence[Sequence[str]],
    weights=None,
    covariates: dict | None = None,
    ids: Sequence[str] | None = None,
    time_labels: Sequence[str] | None = None,
    alphabet: Alphabet | None = None,
) -> SequenceDataset:
    """Build a dataset from label sequences.

    ``covariates`` maps covariate names to per-row values; numeric columns
    are used as-is and anything else is treatment-coded against its
    lexicographically first level.
    """
    seqs = [list(map(str, s)) for s in sequences]
    if not seqs:
        raise SchemaError("no sequences supplied")
    T = len(seqs[0])
    for i, s in enumerate(seqs):
        if len(s) != T:
            raise SchemaError(f"row {i + 1}: expected {T} states, found {len(s)}")
    if alphabet is None:
        alphabet = Alphabet(tuple(sorted({x for s in seqs for x in s})))
    states = np.array([alphabet.encode(s) for s in seqs], dtype=np.int16)
    n = len(seqs)
    raw = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if raw.shape != (n,):
        raise SchemaError("weights must have one entry per sequence")
    cols, groups, blocks = [], {}, []
    for name, values in (covariates or {}).items():
        block, names = _encode_covariate(name, list(values))
        if block.shape[0] != n:
            raise SchemaError(f"covariate {name!r} has the wrong length")
        groups[name] = tuple(range(len(cols), len(cols) + len(names)))
        cols.extend(names)
        blocks.append(block)
    cov = np.column_stack(blocks) if blocks else np.zeros((n, 0))
    return SequenceDataset(
        states=states,
        alphabet=alphabet,
        weights=normalize_weights(raw, n),
        raw_weights=raw,
        covariates=cov,
        covariate_columns=tuple(cols),
        covariate_groups=groups,
        ids=tuple(ids) if ids is not None else (),
        time_labels=tuple(time_labels) if time_labels is not None else (),
    )


def _encode_covariate(name, values):
    try:
        numeric = np.array([float(x) for x in values])
        if np.all(np.isfinite(numeric)):
            return numeric[:, None], [name]
    except (TypeError, ValueError):
        pass
    values = [str(x) for x in values]
    levels = sorted(set(values))
    if len(levels) < 2:
        return np.zeros((len(values), 0)), []
    block = np.array([[x == lev for lev in levels[1:]] for x in values], dtype=float)
    return block, [f"{name}[{lev}]" for lev in levels[1:]]


def _resolve_columns(header: list[str], spec) -> list[str]:
    if isinstance(spec, str):
        if ":" in spec:
            first, last = spec.split(":", 1)
            for c in (first, last):
                if c not in header:
                    raise SchemaError(f"unknown column {c!r}")
            a, b = header.index(first), header.index(last)
            if a > b:
                raise SchemaError(f"column range {spec!r} is reversed")
            return header[a : b + 1]
        cols = [c for c in header if c.startswith(spec)]
        if not cols:
            raise SchemaError(f"no columns start with prefix {spec!r}")
        return cols
    for c in spec:
        if c not in header:
            raise SchemaError(f"unknown column {c!r}")
    return list(spec)


def parse_csv(
    path,
    sequence_columns,
    id_column: str | None = None,
    weight_column: str | None = None,
    covariate_columns: Sequence[str] = (),
    delimiter: str = ",",
) -> SequenceDataset:
    """Read a wide-format CSV with one sequence per row.

    ``sequence_columns`` is an explicit list of column names, a ``first:last``
    range of header names, or a name prefix.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh, delimiter=delimiter))
    if not rows:
        raise SchemaError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if not body:
        raise SchemaError(f"{path}: header but no data rows")
    seq_cols = _resolve_columns(header, sequence_columns)
    for c in [id_column, weight_column, *covariate_columns]:
        if c is not None and c not in header:
            raise SchemaError(f"{path}: unknown column {c!r}")
    pos = {c: j for j, c in enumerate(header)}
    seqs, weights, ids = [], [], []
    covs = {c: [] for c in covariate_columns}
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise SchemaError(
                f"{path}, line {r}: ragged row ({len(row)} fields, header has "
                f"{len(header)})"
            )
        seq = [row[pos[c]].strip() for c in seq_cols]
        for c, x in zip(seq_cols, seq):
            if not x:
                raise SchemaError(f"{path}, line {r}, column {c!r}: empty state")
        seqs.append(seq)
        if weight_column is not None:
            cell = row[pos[weight_column]]
            try:
                wv = float(cell)
            except ValueError:
                raise SchemaError(
                    f"{path}, line {r}: non-numeric weight {cell!r}"
                ) from None
            if not np.isfinite(wv) or wv < 0:
                raise SchemaError(f"{path}, line {r}: invalid weight {cell!r}")
            weights.append(wv)
        if id_column is not None:
            ids.append(row[pos[id_column]])
        for c in covariate_columns:
            covs[c].append(row[pos[c]].strip())
    return from_arrays(
        seqs,
        weights=weights if weight_column is not None else None,
        covariates=covs,
        ids=ids or None,
        time_labels=seq_cols,
    )


def trim_time_range(ds: SequenceDataset, first: int, last: int) -> SequenceDataset:
    """Restrict to time points ``first..last`` inclusive (0-based)."""
    if not 0 <= first <= last < ds.T:
        raise IndexError(f"invalid time range [{first}, {last}] for T={ds.T}")
    return replace(
        ds,
        states=ds.states[:, first : last + 1].copy(),
        time_labels=ds.time_labels[first : last + 1],
    )


def aggregate_duplicates(
    ds: SequenceDataset, include_covariates: bool = True
) -> tuple[SequenceDataset, AggregationMap]:
    """Merge identical rows, summing their weights.

    Rows are keyed on the sequence and, when ``include_covariates`` is set,
    on the covariate pattern too. Unique rows are ordered lexicographically
    by key so the result does not depend on input order.
    """
    key = ds.states.astype(float)
    if include_covariates and ds.covariates.shape[1]:
        key = np.column_stack([key, ds.covariates])
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.ravel()
    w = np.bincount(inverse, weights=ds.weights, minlength=len(first))
    raw = np.bincount(inverse, weights=ds.raw_weights, minlength=len(first))
    if not include_covariates:
        # merged rows may disagree on covariates, so none are carried over
        ds = select_covariates(ds, ())
    agg = replace(
        ds,
        states=ds.states[first].copy(),
        weights=w,
        raw_weights=raw,
        covariates=ds.covariates[first].copy(),
        ids=tuple(ds.ids[i] for i in first),
        n_units=ds.n_units,
    )
    return agg, AggregationMap(unique_index_of=inverse, multiplicity_weights=w)


def select_covariates(ds: SequenceDataset, names: Sequence[str]) -> SequenceDataset:
    """Copy of ``ds`` carrying only the named covariates."""
    cols = ds.design_columns(names)
    idx = [ds.covariate_columns.index(c) for c in cols]
    groups, k = {}, 0
    for name in names:
        size = len(ds.covariate_groups[name])
        groups[name] = tuple(range(k, k + size))
        k += size
    return replace(
        ds,
        covariates=ds.covariates[:, idx].copy(),
        covariate_columns=tuple(cols),
        covariate_groups=groups,
    )


def state_distribution(ds: SequenceDataset) -> np.ndarray:
    """T x v matrix of weighted state frequencies at each time point."""
    out = np.zeros((ds.T, ds.v))
    for j in range(ds.v):
        out[:, j] = ds.weights @ (ds.states == j)
    return out / ds.weights.sum()


def transversal_entropy(ds: SequenceDataset) -> np.ndarray:
    p = state_distribution(ds)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return -terms.sum(axis=1)


def sps_encode(seq, alphabet: Alphabet) -> str:
    """State-permanence-sequence label, e.g. ``(SC,25)-(HE,45)``."""
    seq = list(seq)
    if not seq:
        raise ValueError("empty sequence")
    runs = []
    start = 0
    for t in range(1, len(seq) + 1):
        if t == len(seq) or seq[t] != seq[start]:
            runs.append(f"({alphabet.labels[int(seq[start])]},{t - start})")
            start = t
    return "-".join(runs)
