"""Tabular data container, fold splitting and row/column views.

Covariates are stored column-major (Fortran order) so that gathering a few
columns for many rows, the access pattern of the refitting sweep, touches
contiguous memory.  Row and column indices are 0-based throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import (BoundsError, EmptyDataError, InputError, ParseError,
                     SchemaError, SizeError)
from .models import ModelSpec, as_model


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable table of ``n`` observations.

    ``y`` is used by the linear and logistic families, ``time``/``status`` by
    the Cox family.
    """

    x: np.ndarray
    family: str
    y: np.ndarray | None = None
    time: np.ndarray | None = None
    status: np.ndarray | None = None
    column_names: tuple[str, ...] = ()

    def __post_init__(self):
        x = np.asfortranarray(np.asarray(self.x, dtype=np.float64))
        if x.ndim != 2:
            raise InputError("covariate matrix must be two-dimensional")
        n, p = x.shape
        if n < 1 or p < 1:
            raise EmptyDataError(f"need n >= 1 and p >= 1, got {x.shape}")
        if not np.isfinite(x).all():
            raise InputError("covariates contain non-finite values")
        model = as_model(self.family)
        object.__setattr__(self, "family", model.family)
        object.__setattr__(self, "x", x)
        if model.family == "cox":
            if self.time is None or self.status is None:
                raise InputError("cox data need time and status")
            time = np.asarray(self.time, dtype=np.float64).ravel()
            status = np.asarray(self.status, dtype=np.float64).ravel()
            if time.shape != (n,) or status.shape != (n,):
                raise InputError("time/status length must equal n")
            if not (np.isfinite(time).all() and (time > 0).all()):
                raise InputError("cox times must be finite and strictly positive")
            if not np.isin(status, (0.0, 1.0)).all():
                raise InputError("cox status must be 0/1")
            object.__setattr__(self, "time", time)
            object.__setattr__(self, "status", status)
        else:
            if self.y is None:
                raise InputError(f"{model.family} data need a response y")
            y = np.asarray(self.y, dtype=np.float64).ravel()
            if y.shape != (n,):
                raise InputError("response length must equal n")
            if not np.isfinite(y).all():
                raise InputError("response contains non-finite values")
            if model.family == "logistic" and not np.isin(y, (0.0, 1.0)).all():
                raise InputError("logistic responses must be 0/1")
            object.__setattr__(self, "y", y)
        names = tuple(self.column_names) or tuple(f"x{j + 1}" for j in range(p))
        if len(names) != p:
            raise InputError("column_names length must equal p")
        object.__setattr__(self, "column_names", names)
        for arr in (self.x, self.y, self.time, self.status):
            if arr is not None:
                arr.flags.writeable = False

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def response(self):
        """``y`` or the ``(time, status)`` pair, depending on the family."""
        if self.family == "cox":
            return (self.time, self.status)
        return self.y


@dataclass(frozen=True, eq=False)
class DatasetView:
    """Lazy row/column restriction of a :class:`Dataset`.

    Rows may repeat (with-replacement subsamples).  Nothing is copied until
    one of the array properties is read.
    """

    base: Dataset
    rows: np.ndarray
    cols: np.ndarray

    @property
    def family(self) -> str:
        return self.base.family

    @property
    def n(self) -> int:
        return len(self.rows)

    @property
    def p(self) -> int:
        return len(self.cols)

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(self.base.column_names[c] for c in self.cols)

    @property
    def x(self) -> np.ndarray:
        return self.base.x[np.ix_(self.rows, self.cols)]

    def column(self, k: int) -> np.ndarray:
        """Column ``k`` of the view (``k`` indexes ``cols``)."""
        return self.base.x[self.rows, self.cols[k]]

    @property
    def y(self):
        return None if self.base.y is None else self.base.y[self.rows]

    @property
    def time(self):
        return None if self.base.time is None else self.base.time[self.rows]

    @property
    def status(self):
        return None if self.base.status is None else self.base.status[self.rows]

    @property
    def response(self):
        if self.family == "cox":
            return (self.time, self.status)
        return self.y


@dataclass(frozen=True)
class FoldSplit:
    fold1: np.ndarray
    fold2: np.ndarray

    def swapped(self) -> "FoldSplit":
        return FoldSplit(self.fold2, self.fold1)


def _index_array(idx, size: int, what: str) -> np.ndarray:
    if idx is None:
        return np.arange(size, dtype=np.intp)
    arr = np.asarray(idx)
    if arr.size == 0:
        return np.zeros(0, dtype=np.intp)
    if arr.ndim != 1 or not np.issubdtype(arr.dtype, np.integer):
        raise BoundsError(f"{what} indices must be a 1-d integer sequence")
    if arr.min() < 0 or arr.max() >= size:
        raise BoundsError(f"{what} index out of range [0, {size})")
    return arr.astype(np.intp, copy=False)


def view(data: Dataset | DatasetView, rows=None, cols=None) -> DatasetView:
    """Restrict ``data`` to ``rows`` x ``cols``; ``None`` keeps everything.

    Views compose: ``view(view(D, A, B), A2, B2)`` addresses ``D`` at
    ``A[A2]`` x ``B[B2]``.
    """
    if isinstance(data, DatasetView):
        r = _index_array(rows, data.n, "row")
        c = _index_array(cols, data.p, "column")
        return DatasetView(data.base, data.rows[r], data.cols[c])
    r = _index_array(rows, data.n, "row")
    c = _index_array(cols, data.p, "column")
    return DatasetView(data, r, c)


def augmented_columns(active: Sequence[int], j: int) -> list[int]:
    """Columns of the refit for coefficient ``j``: sorted ``active``, then ``j``
    appended unless it is already selected."""
    cols = sorted(int(a) for a in active)
    if j not in cols:
        cols.append(int(j))
    return cols


def split_halves(data: Dataset | int, rng: np.random.Generator) -> FoldSplit:
    """Uniformly random partition into folds of sizes ``n // 2`` and the rest."""
    n = data if isinstance(data, (int, np.integer)) else data.n
    if n < 2:
        raise SizeError(f"cannot split n={n} rows into two folds")
    perm = rng.permutation(n)
    n1 = n // 2
    return FoldSplit(np.sort(perm[:n1]), np.sort(perm[n1:]))


# -- CSV I/O ----------------------------------------------------------------

@dataclass(frozen=True)
class CsvSchema:
    response: str | None = None
    time: str | None = None
    status: str | None = None

    def response_columns(self, family: str) -> list[str]:
        if family == "cox":
            if not (self.time and self.status):
                raise SchemaError("cox model needs time and status column names")
            return [self.time, self.status]
        if not self.response:
            raise SchemaError(f"{family} model needs a response column name")
        return [self.response]


def _locate_bad_cell(path: Path):
    text = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    num = text.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)
    bad = ~np.isfinite(num)
    i, k = map(int, np.argwhere(bad)[0])
    col = str(text.columns[k])
    # header is line 1
    raise ParseError(
        f"{path.name}: line {i + 2}, column '{col}': cannot parse {text.iat[i, k]!r}"
        " as a finite number", row=i + 2, column=col)


def load_csv(path: str | Path, schema: CsvSchema, model: ModelSpec | str) -> Dataset:
    """Read a header-first numeric CSV; all non-response columns are covariates.

    Missing or non-numeric cells are rejected with their file line and column.
    """
    model = as_model(model)
    path = Path(path)
    if not path.exists():
        raise InputError(f"no such file: {path}")
    resp_cols = schema.response_columns(model.family)
    # round_trip keeps the conversion exact; the default C parser can be off by an ulp
    raw = pd.read_csv(path, skipinitialspace=True, float_precision="round_trip")
    missing = [c for c in resp_cols if c not in raw.columns]
    if missing:
        raise SchemaError(f"column(s) {missing} not found in {path.name}")
    if len(raw) == 0:
        raise EmptyDataError(f"{path.name} has no data rows")
    numeric = all(pd.api.types.is_numeric_dtype(t) for t in raw.dtypes)
    values = raw.astype(np.float64) if numeric else None
    if values is None or not np.isfinite(values.to_numpy()).all():
        _locate_bad_cell(path)
    covariates = [c for c in raw.columns if c not in resp_cols]
    if not covariates:
        raise SchemaError("no covariate columns left after removing the response")
    kw = {}
    if model.family == "cox":
        kw["time"] = values[schema.time].to_numpy()
        kw["status"] = values[schema.status].to_numpy()
    else:
        kw["y"] = values[schema.response].to_numpy()
    return Dataset(x=values[covariates].to_numpy(dtype=np.float64),
                   family=model.family, column_names=tuple(map(str, covariates)),
                   **kw)


def write_csv(data: Dataset, path: str | Path, schema: CsvSchema | None = None) -> None:
    """Write ``data`` back in the format :func:`load_csv` reads (17 significant
    digits, so values round-trip exactly)."""
    if schema is None:
        schema = (CsvSchema(time="time", status="status") if data.family == "cox"
                  else CsvSchema(response="y"))
    cols = {}
    if data.family == "cox":
        cols[schema.time] = data.time
        cols[schema.status] = data.status
    else:
        cols[schema.response] = data.y
    for j, name in enumerate(data.column_names):
        cols[name] = data.x[:, j]
    pd.DataFrame(cols).to_csv(path, index=False, float_format="%.17g")
