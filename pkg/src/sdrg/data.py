"""Longitudinal data model, history extraction and censoring adapters.

A unit is observed as ``(L_0, L_1, A_1, ..., L_K, A_K, Y)`` with binary
treatments ``A_t`` and an outcome ``Y`` in ``[0, 1]``.  ``A_0`` is implicitly
one and the time-0 history is empty, so baseline covariates first enter the
design at ``t = 1``.
"""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

#: value stored for covariates that are unobserved after censoring/event
MISSING = 0.0


class DataError(ValueError):
    """Raised when input data violate the longitudinal data contract."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, order="C")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LongitudinalDataset:
    """Immutable container for ``n`` i.i.d. longitudinal units.

    ``covariates[t-1]`` holds ``L_t`` (shape ``(n, p_t)``), ``treatment[:, t-1]``
    holds ``A_t``.  ``deterministic_one[:, t]`` marks histories where ``Q_t`` is
    known to be one (column 0 is unused and always false).
    """

    baseline: np.ndarray
    covariates: tuple
    treatment: np.ndarray
    outcome: np.ndarray
    deterministic_one: np.ndarray
    baseline_names: tuple
    covariate_names: tuple

    @property
    def n(self) -> int:
        return self.outcome.shape[0]

    @property
    def K(self) -> int:
        return self.treatment.shape[1]

    def A(self, t: int) -> np.ndarray:
        if t == 0:
            return np.ones(self.n, dtype=np.int8)
        return self.treatment[:, t - 1]

    def cum_treated(self, t: int) -> np.ndarray:
        """Indicator ``prod_{s=1}^t A_s`` (all ones at ``t = 0``)."""
        if t == 0:
            return np.ones(self.n, dtype=bool)
        return np.all(self.treatment[:, :t] == 1, axis=1)

    def deterministic(self, t: int) -> np.ndarray:
        if t <= 0 or t > self.K:
            return np.zeros(self.n, dtype=bool)
        return self.deterministic_one[:, t]

    def history_names(self, t: int, include_treatment: bool = True) -> list[str]:
        if t == 0:
            return []
        names = list(self.baseline_names)
        for s in range(1, t + 1):
            if include_treatment and s >= 2:
                names.append(f"A{s - 1}")
            names.extend(self.covariate_names[s - 1])
        return names

    def column(self, name: str) -> np.ndarray:
        idx = self._index.get(name)
        if idx is None:
            raise KeyError(f"unknown column {name!r}")
        block, j = idx
        if block == "A":
            return self.treatment[:, j].astype(float)
        if block == 0:
            return self.baseline[:, j]
        return self.covariates[block - 1][:, j]

    def design(self, names: Sequence[str], rows: np.ndarray | None = None) -> np.ndarray:
        """Float matrix with the named columns, optionally restricted to ``rows``."""
        if len(names) == 0:
            m = 0 if rows is None else int(np.count_nonzero(rows)) if rows.dtype == bool else len(rows)
            return np.zeros((self.n if rows is None else m, 0))
        cols = [self.column(c) for c in names]
        X = np.column_stack(cols).astype(float, copy=False)
        return X if rows is None else X[rows]

    @property
    def _index(self) -> dict:
        cache = self.__dict__.get("_index_cache")
        if cache is None:
            cache = {name: (0, j) for j, name in enumerate(self.baseline_names)}
            for t, names in enumerate(self.covariate_names, start=1):
                cache.update({name: (t, j) for j, name in enumerate(names)})
            cache.update({f"A{t}": ("A", t - 1) for t in range(1, self.K + 1)})
            object.__setattr__(self, "_index_cache", cache)
        return cache

    def subset(self, rows: np.ndarray) -> "LongitudinalDataset":
        """Dataset restricted to ``rows`` (boolean mask or index array)."""
        return LongitudinalDataset(
            baseline=_frozen(self.baseline[rows]),
            covariates=tuple(_frozen(c[rows]) for c in self.covariates),
            treatment=_frozen(self.treatment[rows]),
            outcome=_frozen(self.outcome[rows]),
            deterministic_one=_frozen(self.deterministic_one[rows]),
            baseline_names=self.baseline_names,
            covariate_names=self.covariate_names,
        )


def from_arrays(
    baseline,
    covariates: Sequence,
    treatment,
    outcome,
    *,
    baseline_names: Sequence[str] | None = None,
    covariate_names: Sequence[Sequence[str]] | None = None,
    deterministic_one=None,
) -> LongitudinalDataset:
    """Validate raw arrays and wrap them in a :class:`LongitudinalDataset`."""
    outcome = np.asarray(outcome, dtype=float).reshape(-1)
    n = outcome.shape[0]
    treatment = np.asarray(treatment)
    if treatment.ndim == 1:
        treatment = treatment.reshape(n, -1) if treatment.size else np.zeros((n, 0))
    if treatment.shape[0] != n:
        raise DataError("dimension mismatch: treatment rows != outcome length")
    K = treatment.shape[1]
    if len(covariates) != K:
        raise DataError(f"dimension mismatch: expected {K} covariate blocks, got {len(covariates)}")
    if baseline is None:
        baseline = np.zeros((n, 0))
    baseline = np.asarray(baseline, dtype=float)
    if baseline.ndim == 1:
        baseline = baseline.reshape(n, -1)
    if baseline.shape[0] != n:
        raise DataError("dimension mismatch: baseline rows != outcome length")
    blocks = []
    for t, c in enumerate(covariates, start=1):
        c = np.asarray(c, dtype=float)
        if c.ndim == 1:
            c = c.reshape(n, -1) if c.size else np.zeros((n, 0))
        if c.shape[0] != n:
            raise DataError(f"dimension mismatch: L{t} rows != outcome length")
        blocks.append(c)

    if not np.all(np.isfinite(outcome)) or np.any((outcome < 0) | (outcome > 1)):
        raise DataError("outcome outside [0,1]")
    if not np.all(np.isin(treatment, (0, 1))):
        raise DataError("non-binary treatment")

    if baseline_names is None:
        baseline_names = [f"L0_{j + 1}" for j in range(baseline.shape[1])]
    if covariate_names is None:
        covariate_names = [[f"L{t}_{j + 1}" for j in range(b.shape[1])] for t, b in enumerate(blocks, 1)]
    baseline_names = tuple(baseline_names)
    covariate_names = tuple(tuple(nm) for nm in covariate_names)
    if len(baseline_names) != baseline.shape[1] or any(
        len(nm) != b.shape[1] for nm, b in zip(covariate_names, blocks)
    ):
        raise DataError("dimension mismatch: column names do not match array widths")
    all_names = list(baseline_names) + [x for nm in covariate_names for x in nm]
    if len(set(all_names)) != len(all_names):
        raise DataError("duplicate covariate names")
    if any(re.fullmatch(r"A\d+", x) for x in all_names):
        raise DataError("covariate names of the form A<t> are reserved for treatments")

    det = np.zeros((n, K + 1), dtype=bool)
    if deterministic_one is not None:
        d = np.asarray(deterministic_one, dtype=bool)
        if d.shape == (n, K):
            det[:, 1:] = d
        elif d.shape == (n, K + 1):
            det[:, 1:] = d[:, 1:]
        else:
            raise DataError("dimension mismatch: deterministic_one shape")

    return LongitudinalDataset(
        baseline=_frozen(baseline),
        covariates=tuple(_frozen(b) for b in blocks),
        treatment=_frozen(treatment.astype(np.int8)),
        outcome=_frozen(outcome),
        deterministic_one=_frozen(det),
        baseline_names=baseline_names,
        covariate_names=covariate_names,
    )


def build_dataset(records: Iterable) -> LongitudinalDataset:
    """Build a dataset from per-unit records ``(L0, [(L1, A1), ..., (LK, AK)], Y)``.

    Covariate entries may be scalars or sequences; every unit must share the
    same ``K`` and per-time widths.
    """
    records = list(records)
    if not records:
        raise DataError("no records")

    def vec(x):
        return np.atleast_1d(np.asarray([] if x is None else x, dtype=float))

    K = len(records[0][1])
    l0 = [vec(r[0]) for r in records]
    if any(len(r[1]) != K for r in records):
        raise DataError("dimension mismatch: units disagree on K")
    if len({v.shape for v in l0}) != 1:
        raise DataError("dimension mismatch: baseline widths differ")
    blocks, treat = [], []
    for t in range(K):
        ls = [vec(r[1][t][0]) for r in records]
        if len({v.shape for v in ls}) != 1:
            raise DataError(f"dimension mismatch: L{t + 1} widths differ")
        blocks.append(np.vstack(ls))
        treat.append([r[1][t][1] for r in records])
    treatment = np.array(treat, dtype=float).T.reshape(len(records), K)
    outcome = np.array([float(r[2]) for r in records])
    if not np.all(np.isin(treatment, (0, 1))):
        raise DataError("non-binary treatment")
    return from_arrays(np.vstack(l0), blocks, treatment.astype(np.int8), outcome)


@dataclass(frozen=True)
class HistoryView:
    """Design matrix for ``H_t`` plus the at-risk indicator for one fit type."""

    t: int
    names: tuple
    matrix: np.ndarray
    at_risk: np.ndarray


def history(
    ds: LongitudinalDataset,
    t: int,
    kind: str = "outcome",
    *,
    columns: Sequence[str] | None = None,
    include_treatment: bool = True,
    drop_constant: bool = False,
) -> HistoryView:
    """Extract ``H_t`` for an outcome-regression or treatment-mechanism fit.

    Outcome fits at time ``t`` use units with ``A_1 = ... = A_t = 1``; treatment
    fits use units with ``A_1 = ... = A_{t-1} = 1``.  ``columns`` restricts the
    design to an allow-list (order follows the history).  With
    ``drop_constant`` any column constant over the at-risk rows is removed.
    """
    if not 0 <= t <= ds.K:
        raise DataError(f"t out of range: {t} not in [0, {ds.K}]")
    if kind == "outcome":
        at_risk = ds.cum_treated(t)
    elif kind == "treatment":
        at_risk = ds.cum_treated(max(t - 1, 0))
    else:
        raise ValueError(f"unknown history kind {kind!r}")
    names = ds.history_names(t, include_treatment)
    if columns is not None:
        allowed = set(columns)
        names = [c for c in names if c in allowed]
    X = ds.design(names)
    if drop_constant and names:
        sub = X[at_risk]
        if sub.shape[0] == 0:
            keep = np.zeros(len(names), dtype=bool)
        else:
            keep = np.ptp(sub, axis=0) > 0
        names = [c for c, k in zip(names, keep) if k]
        X = X[:, keep]
    return HistoryView(t=t, names=tuple(names), matrix=X, at_risk=at_risk)


def _path_vectors(path, K):
    return [np.atleast_1d(np.asarray(v, dtype=float)) for v in path]


def from_right_censored(C, L, K: int, baseline=None, names: Sequence[str] | None = None) -> LongitudinalDataset:
    """Map discretely right-censored data ``(C, L_1..L_C)`` onto ``(L, A)`` form.

    ``C`` takes values in ``1..K+1``; ``L[i]`` has length ``C[i]`` and its
    element ``K`` (present only when ``C = K+1``) is the outcome.  Treatment
    becomes the at-risk indicator ``A_t = 1{C > t}``.
    """
    C = np.asarray(C, dtype=int)
    n = C.shape[0]
    if np.any((C < 1) | (C > K + 1)):
        raise DataError("censoring time outside 1..K+1")
    if len(L) != n:
        raise DataError("path length mismatch: number of paths != number of units")
    width = None
    for i, path in enumerate(L):
        if len(path) != C[i]:
            raise DataError(f"path length mismatch for unit {i}: {len(path)} != C={C[i]}")
        for v in list(path)[:K]:
            w = np.atleast_1d(v).shape[0]
            if width is None:
                width = w
            elif w != width:
                raise DataError("dimension mismatch: covariate widths differ")
    width = width or 0
    blocks = [np.full((n, width), MISSING) for _ in range(K)]
    outcome = np.zeros(n)
    for i, path in enumerate(L):
        vecs = _path_vectors(path, K)
        for t, v in enumerate(vecs[:K]):
            blocks[t][i] = v
        if C[i] == K + 1:
            outcome[i] = float(np.asarray(path[K]).reshape(-1)[0])
    treatment = (C[:, None] > np.arange(1, K + 1)[None, :]).astype(np.int8)
    cov_names = None
    if names is not None:
        cov_names = [[f"{nm}_{t}" for nm in names] for t in range(1, K + 1)]
    return from_arrays(baseline, blocks, treatment, outcome, covariate_names=cov_names)


def from_time_to_event(
    Y,
    delta,
    L,
    K: int,
    baseline=None,
    event_paths=None,
    names: Sequence[str] | None = None,
) -> LongitudinalDataset:
    """Map ``(Y = min(T, C), Delta, L_1..L_Y)`` onto ``(L, A)`` form.

    Each ``L_t`` gains a leading ``event`` column ``1{T <= t}``.  Treatment is
    ``A_t = 1{Y > t or Delta = 1}`` and ``Q_t`` is flagged deterministic (equal
    to one) once the event has occurred.  ``L[i]`` must hold ``min(Y_i, K)``
    covariate vectors.  If ``event_paths`` is given, it must agree with the
    event indicators implied by ``(Y, Delta)``.
    """
    Y = np.asarray(Y, dtype=int)
    delta = np.asarray(delta)
    n = Y.shape[0]
    if not np.all(np.isin(delta, (0, 1))):
        raise DataError("event indicator must be binary")
    if np.any((Y < 1) | (Y > K + 1)):
        raise DataError("observed time outside 1..K+1")
    if len(L) != n:
        raise DataError("path length mismatch: number of paths != number of units")
    times = np.arange(1, K + 1)
    event = (delta[:, None] == 1) & (Y[:, None] <= times[None, :])
    if event_paths is not None:
        for i, ev in enumerate(event_paths):
            ev = np.asarray(ev, dtype=int)
            m = min(Y[i], K)
            if len(ev) != m or np.any(np.diff(ev) < 0) or not np.array_equal(ev, event[i, :m].astype(int)):
                raise DataError(f"inconsistent event indicators for unit {i}")
    width = None
    for i, path in enumerate(L):
        if len(path) != min(Y[i], K):
            raise DataError(f"path length mismatch for unit {i}: {len(path)} != min(Y, K)={min(Y[i], K)}")
        for v in path:
            w = np.atleast_1d(v).shape[0]
            if width is None:
                width = w
            elif w != width:
                raise DataError("dimension mismatch: covariate widths differ")
    width = width or 0
    blocks = [np.full((n, width + 1), MISSING) for _ in range(K)]
    for i, path in enumerate(L):
        for t, v in enumerate(_path_vectors(path, K)):
            blocks[t][i, 1:] = v
    for t in range(K):
        blocks[t][:, 0] = event[:, t]
    treatment = ((Y[:, None] > times[None, :]) | (delta[:, None] == 1)).astype(np.int8)
    outcome = (delta == 1).astype(float)
    base = names if names is not None else [str(j + 1) for j in range(width)]
    cov_names = [[f"event_{t}"] + [f"L{t}_{nm}" for nm in base] for t in range(1, K + 1)]
    return from_arrays(baseline, blocks, treatment, outcome, covariate_names=cov_names, deterministic_one=event)


# --------------------------------------------------------------------------
# CSV schema
#
#   L0_<name>    baseline covariate
#   L<t>_<name>  covariate recorded at time t (1 <= t <= K)
#   A<t>         binary treatment at time t (K = largest t present)
#   Y            outcome in [0, 1]
#   D<t>         optional 0/1 flag: Q_t is deterministically one
# --------------------------------------------------------------------------

_COV = re.compile(r"L(\d+)_([A-Za-z0-9_.]+)")
_TRT = re.compile(r"A(\d+)")
_DET = re.compile(r"D(\d+)")


def _parse_header(header: Sequence[str]):
    cov, trt, det, y = {}, {}, {}, None
    for j, col in enumerate(header):
        col = col.strip()
        if (m := _COV.fullmatch(col)) is not None:
            cov.setdefault(int(m.group(1)), []).append((m.group(2), j))
        elif (m := _TRT.fullmatch(col)) is not None:
            trt[int(m.group(1))] = j
        elif (m := _DET.fullmatch(col)) is not None:
            det[int(m.group(1))] = j
        elif col == "Y":
            if y is not None:
                raise DataError("duplicate column 'Y'")
            y = j
        else:
            raise DataError(f"malformed header: unrecognised column {col!r}")
    if y is None:
        raise DataError("malformed header: missing column 'Y'")
    K = max(trt) if trt else 0
    for t in range(1, K + 1):
        if t not in trt:
            raise DataError(f"malformed header: missing column 'A{t}'")
    for t in list(cov) + list(det):
        if t > K or (t == 0 and t in det):
            bad = [f"L{t}_{nm}" for nm, _ in cov.get(t, [])] or [f"D{t}"]
            raise DataError(f"malformed header: column {bad[0]!r} refers to a time beyond K={K}")
    return cov, trt, det, y, K


def read_csv(path: str | Path) -> LongitudinalDataset:
    """Read the one-row-per-unit CSV schema documented above."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("empty file") from None
        cov, trt, det, y, K = _parse_header(header)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                vals = [float(v) for v in row]
            except ValueError:
                raise DataError(f"line {lineno}: non-numeric value") from None
            if not 0.0 <= vals[y] <= 1.0:
                raise DataError(f"line {lineno}: outcome outside [0,1]")
            for t, j in trt.items():
                if vals[j] not in (0.0, 1.0):
                    raise DataError(f"line {lineno}: non-binary treatment A{t}")
            rows.append(vals)
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))

    all_short = [nm for t in cov for nm, _ in cov[t]]
    clash = len(set(all_short)) != len(all_short) or any(_TRT.fullmatch(nm) for nm in all_short)

    def label(t, nm):
        return f"L{t}_{nm}" if clash else nm

    base_cols = cov.get(0, [])
    baseline = data[:, [j for _, j in base_cols]]
    blocks = [data[:, [j for _, j in cov.get(t, [])]] for t in range(1, K + 1)]
    treatment = data[:, [trt[t] for t in range(1, K + 1)]].astype(np.int8)
    detm = np.zeros((len(rows), K + 1), dtype=bool)
    for t, j in det.items():
        detm[:, t] = data[:, j] == 1
    return from_arrays(
        baseline,
        blocks,
        treatment,
        data[:, y],
        baseline_names=[label(0, nm) for nm, _ in base_cols],
        covariate_names=[[label(t, nm) for nm, _ in cov.get(t, [])] for t in range(1, K + 1)],
        deterministic_one=detm,
    )


def write_csv(ds: LongitudinalDataset, path: str | Path) -> None:
    header, cols = [], []
    for j, nm in enumerate(ds.baseline_names):
        header.append(nm if nm.startswith("L0_") else f"L0_{nm}")
        cols.append(ds.baseline[:, j])
    for t in range(1, ds.K + 1):
        for j, nm in enumerate(ds.covariate_names[t - 1]):
            header.append(nm if nm.startswith(f"L{t}_") else f"L{t}_{nm}")
            cols.append(ds.covariates[t - 1][:, j])
        header.append(f"A{t}")
        cols.append(ds.treatment[:, t - 1])
    if ds.deterministic_one[:, 1:].any():
        for t in range(1, ds.K + 1):
            header.append(f"D{t}")
            cols.append(ds.deterministic_one[:, t].astype(int))
    header.append("Y")
    cols.append(ds.outcome)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(ds.n):
            w.writerow([_fmt(c[i]) for c in cols])


def _fmt(v) -> str:
    f = float(v)
    return str(int(f)) if f.is_integer() and abs(f) < 1e15 else repr(f)
