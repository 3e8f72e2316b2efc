"""Data model for lagged time-series regression designs.

A regression observation at time t stacks, in fixed order, the most recent
``p1`` lags of the response, ``p2`` contemporaneous covariates, and ``p3``
predictors observed one period earlier. Raw series enter either from CSV
files or from the simulation module; :func:`build_design` trims the lead-in
rows and aligns everything so that no design entry peeks at the response's
own period or later.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataError


def default_variable_names(p1: int, p2: int, p3: int) -> tuple[str, ...]:
    """Generic design column labels: response lags, covariates, lagged predictors."""
    names = [f"y_l{i}" for i in range(1, p1 + 1)]
    names += [f"w{i}" for i in range(1, p2 + 1)]
    names += [f"x{i}_l1" for i in range(1, p3 + 1)]
    return tuple(names)


def expand_variable_names(
    response: str,
    covariates: Sequence[str],
    predictors: Sequence[str],
    p1: int,
) -> tuple[str, ...]:
    """Design column labels derived from raw series names (CSV workflow)."""
    names = [f"{response}_l{i}" for i in range(1, p1 + 1)]
    names += list(covariates)
    names += [f"{name}_l1" for name in predictors]
    return tuple(names)


@dataclass(frozen=True)
class ModelSpec:
    """Shape of the regression: lag counts and design column labels.

    Parameters
    ----------
    p1 : int
        Number of autoregressive lags of the response.
    p2 : int
        Number of contemporaneous covariate columns.
    p3 : int
        Number of one-lag predictor columns.
    include_intercept : bool
        When true the effective sample is mean-centered and the centering
        means are kept on the dataset so an unpenalized intercept can be
        recovered after fitting. Off by default.
    variable_names : tuple of str, optional
        One label per design column, in lag-expanded order. Generated when
        omitted.
    """

    p1: int
    p2: int
    p3: int
    include_intercept: bool = False
    variable_names: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        for label, value in (("p1", self.p1), ("p2", self.p2), ("p3", self.p3)):
            if value < 0:
                raise ValueError(f"{label} must be nonnegative, got {value}")
        if self.p < 1:
            raise ValueError("the design must contain at least one column")
        if self.variable_names is None:
            object.__setattr__(
                self, "variable_names", default_variable_names(self.p1, self.p2, self.p3)
            )
        else:
            object.__setattr__(self, "variable_names", tuple(self.variable_names))
        names = self.variable_names
        assert names is not None
        if len(names) != self.p:
            raise ValueError(
                f"expected {self.p} variable names after lag expansion, got {len(names)}"
            )
        if len(set(names)) != len(names):
            raise ValueError("variable names must be distinct")

    @property
    def p(self) -> int:
        return self.p1 + self.p2 + self.p3


@dataclass(frozen=True)
class ColumnMapping:
    """Maps CSV header names onto the roles of the regression."""

    response: str
    covariates: tuple[str, ...] = ()
    predictors: tuple[str, ...] = ()
    date: str | None = None


@dataclass(frozen=True)
class RawSeriesTable:
    """Rectangular block of observed series: response first, then regressors.

    ``values`` has one column per series, all of equal length; ``labels``
    optionally carries row labels (dates) that never enter any computation.
    """

    names: tuple[str, ...]
    values: np.ndarray
    labels: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise DataError("raw series table must be two-dimensional")
        if values.shape[1] != len(self.names):
            raise DataError(
                f"{len(self.names)} column names for {values.shape[1]} columns"
            )
        if self.labels is not None and len(self.labels) != values.shape[0]:
            raise DataError("row labels must match the number of rows")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class TimeSeriesDataset:
    """Aligned response and design for the effective sample.

    Row t of ``design`` holds (in order) the response lags 1..p1, the
    contemporaneous covariates, and the predictors lagged by one period,
    all for the same effective time index as ``y[t]``. Immutable; safe to
    share across parallel workers.
    """

    y: np.ndarray
    design: np.ndarray
    names: tuple[str, ...]
    origin: str
    y_mean: float | None = None
    design_means: np.ndarray | None = None
    design_scales: np.ndarray | None = None

    def __post_init__(self) -> None:
        y = np.asarray(self.y, dtype=float).copy()
        design = np.asarray(self.design, dtype=float).copy()
        if design.ndim != 2 or y.ndim != 1 or design.shape[0] != y.shape[0]:
            raise DataError("response and design must have matching row counts")
        if y.shape[0] <= design.shape[1]:
            raise DataError(
                f"need more observations ({y.shape[0]}) than columns ({design.shape[1]})"
            )
        y.flags.writeable = False
        design.flags.writeable = False
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "design", design)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.design.shape[1]


def build_design(raw: RawSeriesTable, spec: ModelSpec, origin: str | None = None) -> TimeSeriesDataset:
    """Assemble the aligned regression dataset from raw series.

    Parameters
    ----------
    raw : RawSeriesTable
        Response in column 0 followed by the p2 covariates and p3 predictors.
    spec : ModelSpec
        Lag structure; ``spec.p2 + spec.p3`` must match the regressor count.
    origin : str, optional
        Provenance tag; defaults to a generic label.

    Returns
    -------
    TimeSeriesDataset
        Effective sample of ``raw.n_rows - max(p1, 1)`` observations.
    """
    values = raw.values
    t_total = raw.n_rows
    if values.shape[1] != 1 + spec.p2 + spec.p3:
        raise DataError(
            f"raw table has {values.shape[1]} columns; the model needs "
            f"1 response + {spec.p2} covariates + {spec.p3} predictors"
        )
    lead = max(spec.p1, 1)
    if t_total <= lead + 1:
        raise DataError(
            f"{t_total} rows is too short for {spec.p1} response lags; "
            f"need more than {lead + 1}"
        )
    if not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(values))[0]
        raise DataError(
            f"non-finite value in column '{raw.names[bad[1]]}' at row {bad[0] + 1}"
        )

    resp = values[:, 0]
    cov = values[:, 1 : 1 + spec.p2]
    pred = values[:, 1 + spec.p2 :]

    n = t_total - lead
    blocks = []
    for lag in range(1, spec.p1 + 1):
        blocks.append(resp[lead - lag : lead - lag + n, None])
    if spec.p2:
        blocks.append(cov[lead:, :])
    if spec.p3:
        blocks.append(pred[lead - 1 : lead - 1 + n, :])
    design = np.hstack(blocks) if blocks else np.empty((n, 0))
    y = resp[lead:].copy()

    y_mean = None
    design_means = None
    if spec.include_intercept:
        y_mean = float(y.mean())
        design_means = design.mean(axis=0)
        y = y - y_mean
        design = design - design_means

    names = spec.variable_names
    assert names is not None
    return TimeSeriesDataset(
        y=y,
        design=design,
        names=names,
        origin=origin if origin is not None else "raw-series",
        y_mean=y_mean,
        design_means=design_means,
    )


def read_csv(path: str, schema: ColumnMapping) -> RawSeriesTable:
    """Parse a headered CSV into the mapped raw series, in declared order.

    The date column, when mapped, is kept verbatim as row labels. Every
    other mapped cell must parse as a finite float; failures report the
    offending row and column.
    """
    try:
        with open(path, "r", encoding="utf-8", newline="") as handle:
            rows = list(csv.reader(handle))
    except OSError as exc:
        raise DataError(f"cannot read '{path}': {exc}") from exc
    if not rows:
        raise DataError(f"'{path}' is empty")
    header = [cell.strip() for cell in rows[0]]
    if len(set(header)) != len(header):
        dupes = sorted({name for name in header if header.count(name) > 1})
        raise DataError(f"duplicate header names in '{path}': {', '.join(dupes)}")

    wanted = [schema.response, *schema.covariates, *schema.predictors]
    missing = [name for name in wanted if name not in header]
    if schema.date is not None and schema.date not in header:
        missing.append(schema.date)
    if missing:
        raise DataError(f"'{path}' is missing column(s): {', '.join(missing)}")

    positions = [header.index(name) for name in wanted]
    date_pos = header.index(schema.date) if schema.date is not None else None

    data = np.empty((len(rows) - 1, len(wanted)), dtype=float)
    labels: list[str] = []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"'{path}' row {r} has {len(row)} cells, expected {len(header)}")
        for k, pos in enumerate(positions):
            cell = row[pos].strip()
            try:
                value = float(cell)
            except ValueError:
                raise DataError(
                    f"'{path}' row {r}, column '{header[pos]}': cannot parse {cell!r}"
                ) from None
            if not math.isfinite(value):
                raise DataError(
                    f"'{path}' row {r}, column '{header[pos]}': non-finite value {cell!r}"
                )
            data[r - 2, k] = value
        if date_pos is not None:
            labels.append(row[date_pos].strip())

    return RawSeriesTable(
        names=tuple(wanted),
        values=data,
        labels=tuple(labels) if date_pos is not None else None,
    )


def write_csv(table: RawSeriesTable, path: str) -> None:
    """Write the table with 17-significant-digit floats (round-trip exact)."""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        header = list(table.names)
        if table.labels is not None:
            header = ["date"] + header
        writer.writerow(header)
        for r in range(table.n_rows):
            row = [format(v, ".17g") for v in table.values[r]]
            if table.labels is not None:
                row = [table.labels[r]] + row
            writer.writerow(row)
