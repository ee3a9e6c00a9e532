"""Linked employer-employee panel: data model, delimited-file ingestion, validation.

A panel is an immutable collection of worker-period observations. External
worker and firm identifiers are arbitrary strings; internally both are mapped
to dense zero-based indices (assigned in sorted external-id order, so the
mapping does not depend on row order). Observations are stored sorted by
(worker, period) and the pair (worker, period) is unique: one employer per
worker and period.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

MANDATORY_COLUMNS = ("worker", "firm", "period", "log_wage")


@dataclass(frozen=True)
class Observation:
    """One worker-period row: who, where, when, log wage, covariates."""

    worker: str
    firm: str
    period: int
    log_wage: float
    covariates: tuple[float, ...] = ()


@dataclass(frozen=True)
class ValidationReport:
    """Ingestion accounting: every row read is either kept or dropped with a reason."""

    rows_read: int
    rows_kept: int
    rows_dropped: int
    duplicate_worker_periods: int
    non_finite_values: int
    unparsable_rows: int
    column_summaries: dict = field(default_factory=dict)
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        assert self.rows_read == self.rows_kept + self.rows_dropped

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "rows_read": self.rows_read,
            "rows_kept": self.rows_kept,
            "rows_dropped": self.rows_dropped,
            "duplicate_worker_periods": self.duplicate_worker_periods,
            "non_finite_values": self.non_finite_values,
            "unparsable_rows": self.unparsable_rows,
            "columns": self.column_summaries,
            "warnings": list(self.warnings),
        }


class Panel:
    """Immutable, validated panel with dense internal worker/firm indices.

    Attributes
    ----------
    worker_idx, firm_idx : int64 arrays, one entry per observation
    period : int64 array
    log_wage : float64 array
    covariates : float64 array of shape (n_obs, covariate_count)
    worker_ids, firm_ids : tuples mapping dense index -> external id
    covariate_names : tuple of column names for the covariates
    """

    __slots__ = (
        "worker_idx",
        "firm_idx",
        "period",
        "log_wage",
        "covariates",
        "worker_ids",
        "firm_ids",
        "covariate_names",
        "_worker_index",
        "_firm_index",
    )

    def __init__(self, worker, firm, period, log_wage, covariates=None, covariate_names=()):
        worker = np.asarray(worker, dtype=object)
        firm = np.asarray(firm, dtype=object)
        period = np.asarray(period, dtype=np.int64)
        log_wage = np.asarray(log_wage, dtype=np.float64)
        n = worker.shape[0]
        if n == 0:
            raise DataError("panel has no observations")
        if covariates is None:
            covariates = np.empty((n, 0), dtype=np.float64)
        covariates = np.asarray(covariates, dtype=np.float64).reshape(n, -1)
        if len(covariate_names) != covariates.shape[1]:
            covariate_names = tuple(f"x{k}" for k in range(covariates.shape[1]))
        if not np.all(np.isfinite(log_wage)):
            raise DataError("panel contains a non-finite log wage")
        if covariates.size and not np.all(np.isfinite(covariates)):
            raise DataError("panel contains a non-finite covariate value")

        worker_ids, widx = np.unique(worker, return_inverse=True)
        firm_ids, fidx = np.unique(firm, return_inverse=True)

        order = np.lexsort((period, widx))
        widx, fidx, period = widx[order], fidx[order], period[order]
        log_wage, covariates = log_wage[order], covariates[order]

        key = widx * (period.max() - period.min() + 1) + (period - period.min())
        if np.unique(key).size != n:
            raise DataError("duplicate (worker, period) observation")

        self.worker_idx = widx.astype(np.int64)
        self.firm_idx = fidx.astype(np.int64)
        self.period = period
        self.log_wage = log_wage
        self.covariates = covariates
        self.worker_ids = tuple(str(x) for x in worker_ids)
        self.firm_ids = tuple(str(x) for x in firm_ids)
        self.covariate_names = tuple(covariate_names)
        self._worker_index = {w: i for i, w in enumerate(self.worker_ids)}
        self._firm_index = {f: j for j, f in enumerate(self.firm_ids)}
        for arr in (self.worker_idx, self.firm_idx, self.period, self.log_wage, self.covariates):
            arr.setflags(write=False)

    # -- size accessors -------------------------------------------------
    @property
    def n_obs(self) -> int:
        return self.worker_idx.shape[0]

    @property
    def n_workers(self) -> int:
        return len(self.worker_ids)

    @property
    def n_firms(self) -> int:
        return len(self.firm_ids)

    @property
    def n_periods(self) -> int:
        return int(np.unique(self.period).size)

    @property
    def covariate_count(self) -> int:
        return self.covariates.shape[1]

    # -- id mapping ------------------------------------------------------
    def worker_index(self, worker_id: str) -> int:
        try:
            return self._worker_index[worker_id]
        except KeyError:
            raise DataError(f"unknown worker id {worker_id!r}") from None

    def firm_index(self, firm_id: str) -> int:
        try:
            return self._firm_index[firm_id]
        except KeyError:
            raise DataError(f"unknown firm id {firm_id!r}") from None

    def observations(self):
        """Iterate observations in (worker, period) order."""
        for k in range(self.n_obs):
            yield Observation(
                worker=self.worker_ids[self.worker_idx[k]],
                firm=self.firm_ids[self.firm_idx[k]],
                period=int(self.period[k]),
                log_wage=float(self.log_wage[k]),
                covariates=tuple(self.covariates[k]),
            )

    def __eq__(self, other):
        if not isinstance(other, Panel):
            return NotImplemented
        return (
            self.worker_ids == other.worker_ids
            and self.firm_ids == other.firm_ids
            and self.covariate_names == other.covariate_names
            and np.array_equal(self.worker_idx, other.worker_idx)
            and np.array_equal(self.firm_idx, other.firm_idx)
            and np.array_equal(self.period, other.period)
            and np.array_equal(self.log_wage, other.log_wage)
            and np.array_equal(self.covariates, other.covariates)
        )

    def __repr__(self):
        return (
            f"Panel(n_obs={self.n_obs}, n_workers={self.n_workers}, "
            f"n_firms={self.n_firms}, n_periods={self.n_periods}, "
            f"covariates={self.covariate_count})"
        )


def _parse_float(text: str) -> float:
    return float(text)


def load_panel(path, schema=None, delimiter=",") -> tuple[Panel, ValidationReport]:
    """Read a delimited text file with a header row into a validated Panel.

    Parameters
    ----------
    path : file path
    schema : mapping with keys "worker", "firm", "period", "log_wage" naming the
        columns, plus optional "covariates": list of covariate column names.
        Defaults to the identity mapping with no covariates.
    delimiter : field separator, default comma.

    Returns the Panel plus a ValidationReport enumerating dropped rows. Rows
    are dropped (never repaired) when a value fails to parse, a wage or
    covariate is non-finite, or the (worker, period) pair repeats; for
    duplicates the first occurrence wins.
    """
    schema = dict(schema or {})
    colmap = {k: schema.get(k, k) for k in MANDATORY_COLUMNS}
    cov_cols = list(schema.get("covariates", []))

    if not os.path.exists(path):
        raise ConfigError(f"panel file not found: {path}")

    rows = []
    warnings: list[str] = []
    n_read = n_dup = n_nonfinite = n_unparsable = 0
    seen: set[tuple[str, int]] = set()

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        header = reader.fieldnames or []
        for key, col in colmap.items():
            if col not in header:
                raise ConfigError(f"missing mandatory column {col!r} (maps to {key!r})")
        for col in cov_cols:
            if col not in header:
                raise ConfigError(f"missing covariate column {col!r}")

        for lineno, rec in enumerate(reader, start=2):
            n_read += 1
            try:
                worker = rec[colmap["worker"]].strip()
                firm = rec[colmap["firm"]].strip()
                period = int(float(rec[colmap["period"]]))
                wage = _parse_float(rec[colmap["log_wage"]])
                covs = tuple(_parse_float(rec[c]) for c in cov_cols)
            except (TypeError, ValueError, AttributeError):
                n_unparsable += 1
                warnings.append(f"line {lineno}: unparsable row dropped")
                continue
            if not worker or not firm:
                n_unparsable += 1
                warnings.append(f"line {lineno}: empty worker or firm id")
                continue
            if not math.isfinite(wage) or any(not math.isfinite(c) for c in covs):
                n_nonfinite += 1
                warnings.append(f"line {lineno}: non-finite value dropped")
                continue
            if (worker, period) in seen:
                n_dup += 1
                warnings.append(f"line {lineno}: duplicate (worker, period) dropped")
                continue
            seen.add((worker, period))
            rows.append((worker, firm, period, wage, covs))

    if not rows:
        raise DataError(f"no valid rows in {path}")

    panel = Panel(
        worker=[r[0] for r in rows],
        firm=[r[1] for r in rows],
        period=[r[2] for r in rows],
        log_wage=[r[3] for r in rows],
        covariates=[r[4] for r in rows] if cov_cols else None,
        covariate_names=tuple(cov_cols),
    )

    summaries = {"log_wage": _summary(panel.log_wage)}
    for k, name in enumerate(panel.covariate_names):
        summaries[name] = _summary(panel.covariates[:, k])

    report = ValidationReport(
        rows_read=n_read,
        rows_kept=len(rows),
        rows_dropped=n_read - len(rows),
        duplicate_worker_periods=n_dup,
        non_finite_values=n_nonfinite,
        unparsable_rows=n_unparsable,
        column_summaries=summaries,
        warnings=tuple(warnings),
    )
    return panel, report


def _summary(values: np.ndarray) -> dict:
    return {
        "min": float(values.min()),
        "max": float(values.max()),
        "mean": float(values.mean()),
    }


def write_panel(panel: Panel, path, delimiter=",") -> None:
    """Write a Panel back to delimited text. Floats use repr-precision so a
    write/load round trip reproduces values bit-for-bit."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow(["worker", "firm", "period", "log_wage", *panel.covariate_names])
        for k in range(panel.n_obs):
            writer.writerow(
                [
                    panel.worker_ids[panel.worker_idx[k]],
                    panel.firm_ids[panel.firm_idx[k]],
                    int(panel.period[k]),
                    float.__repr__(float(panel.log_wage[k])),
                    *[float.__repr__(float(v)) for v in panel.covariates[k]],
                ]
            )


def restrict_panel(panel: Panel, keep_workers, keep_firms) -> Panel:
    """Restrict to observations whose worker AND firm are both kept.

    `keep_workers` and `keep_firms` are sets of external ids. Internal indices
    are re-densified; external ids are preserved. Raises DataError when the
    restriction is empty.
    """
    keep_workers = set(keep_workers)
    keep_firms = set(keep_firms)
    if not keep_workers or not keep_firms:
        raise ConfigError("keep sets must be nonempty")

    wmask = np.fromiter(
        (w in keep_workers for w in panel.worker_ids), dtype=bool, count=panel.n_workers
    )
    fmask = np.fromiter(
        (f in keep_firms for f in panel.firm_ids), dtype=bool, count=panel.n_firms
    )
    mask = wmask[panel.worker_idx] & fmask[panel.firm_idx]
    if not mask.any():
        raise DataError("restriction produced an empty panel")

    widx = panel.worker_idx[mask]
    fidx = panel.firm_idx[mask]
    worker = np.array(panel.worker_ids, dtype=object)[widx]
    firm = np.array(panel.firm_ids, dtype=object)[fidx]
    return Panel(
        worker=worker,
        firm=firm,
        period=panel.period[mask],
        log_wage=panel.log_wage[mask],
        covariates=panel.covariates[mask],
        covariate_names=panel.covariate_names,
    )
