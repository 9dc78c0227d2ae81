"""CSV datasets, input normalization, train/test splits and error metrics."""

import csv
from dataclasses import dataclass, field
import logging
import math
import os
import re

import numpy as np

from .errors import DataError
from .model import Dataset, Normalization

log = logging.getLogger(__name__)

_HEADER = re.compile(r"^([xy])(\d+)$")


def _parse_header(header, path, require_y=True):
    names = [h.strip() for h in header]
    kinds = []
    for col, name in enumerate(names, start=1):
        m = _HEADER.match(name)
        if not m:
            raise DataError(f"{path}: header column {col} is {name!r}, expected x<i> or y<j>")
        kinds.append((m.group(1), int(m.group(2))))
    xs = [i for k, i in kinds if k == "x"]
    ys = [i for k, i in kinds if k == "y"]
    if xs != list(range(len(xs))) or ys != list(range(len(ys))):
        raise DataError(f"{path}: header must list x0..x(p-1) then y0..y(D-1) in order")
    if not xs or (require_y and not ys):
        raise DataError(f"{path}: need at least one x and one y column")
    if [k for k, _ in kinds] != ["x"] * len(xs) + ["y"] * len(ys):
        raise DataError(f"{path}: x columns must precede y columns")
    return len(xs), len(ys)


def load_csv(path, require_y=True):
    """Read a dataset whose header is ``x0,..,x{p-1},y0,..,y{D-1}``.

    With ``require_y=False`` an inputs-only file is accepted (``Y`` has zero
    columns).

    Rows are numbered from 1 for the header line, so the first data row is
    row 2 in error messages, matching what a text editor shows.
    """
    path = os.fspath(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        p, D = _parse_header(header, path, require_y)
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != p + D:
                raise DataError(f"{path}: row {line_no} has {len(row)} fields, expected {p + D}")
            values = []
            for col, cell in enumerate(row, start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: row {line_no}, column {col} ({header[col - 1].strip()}): "
                        f"cannot parse {cell!r}") from None
                if not math.isfinite(v):
                    raise DataError(
                        f"{path}: row {line_no}, column {col} ({header[col - 1].strip()}): "
                        f"non-finite value {cell!r}")
                values.append(v)
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    arr = np.array(rows, dtype=float)
    return Dataset(arr[:, :p], arr[:, p:])


def save_csv(dataset, path):
    """Write ``dataset`` so that :func:`load_csv` recovers it bit-for-bit."""
    p, D = dataset.X.shape[1], dataset.Y.shape[1]
    header = [f"x{i}" for i in range(p)] + [f"y{j}" for j in range(D)]
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in np.hstack([dataset.X, dataset.Y]):
            writer.writerow([f"{v:.17g}" for v in row])
    os.replace(tmp, path)


def fit_normalization(X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] < 2:
        raise DataError("normalization needs at least 2 rows")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    flat = ~(std > 0)
    if np.any(flat):
        log.warning("input columns %s have zero variance; std clamped to 1",
                    np.flatnonzero(flat).tolist())
        std = np.where(flat, 1.0, std)
    return Normalization(mean, std)


def normalize(dataset, record=None):
    """Standardize the inputs (outputs stay raw); returns ``(dataset, record)``.

    Pass the training ``record`` to transform test data consistently.
    """
    if record is None:
        record = fit_normalization(dataset.X)
    return Dataset(record.apply(dataset.X), dataset.Y, record), record


def denormalize(dataset):
    if dataset.normalization is None:
        return dataset
    return Dataset(dataset.normalization.invert(dataset.X), dataset.Y)


def split(dataset, fractions, seed):
    """Random disjoint ``(train, test)`` split.

    ``fractions`` is ``(train, test)``; each entry is either a fraction in
    [0, 1] or an exact row count (an int > 1).
    """
    N = dataset.N
    if len(fractions) != 2:
        raise DataError("fractions must be (train, test)")
    counts = []
    for f in fractions:
        if isinstance(f, (int, np.integer)) and not isinstance(f, bool) and f > 1:
            counts.append(int(f))
        else:
            f = float(f)
            if not 0 <= f <= 1:
                raise DataError(f"split fraction {f} outside [0, 1]")
            counts.append(int(round(f * N)))
    n_train, n_test = counts
    if n_train + n_test > N:
        raise DataError(f"split needs {n_train + n_test} rows, dataset has {N}")
    perm = np.random.default_rng(seed).permutation(N)
    tr, te = np.sort(perm[:n_train]), np.sort(perm[n_train:n_train + n_test])
    return (Dataset(dataset.X[tr], dataset.Y[tr], dataset.normalization),
            Dataset(dataset.X[te], dataset.Y[te], dataset.normalization))


@dataclass
class MetricsReport:
    mae: float
    nrmse: float
    rmse: float
    normalizer: float
    normalizer_kind: str = "range(Y_test)"
    zero_range: bool = False
    per_output_mae: list = field(default_factory=list)
    predictive_loglik: float = None

    def to_dict(self):
        d = {"mae": self.mae, "nrmse": self.nrmse, "rmse": self.rmse,
             "normalizer": self.normalizer, "normalizer_kind": self.normalizer_kind,
             "zero_range": self.zero_range, "per_output_mae": list(self.per_output_mae)}
        if self.predictive_loglik is not None:
            d["predictive_loglik"] = self.predictive_loglik
        return d


def metrics(Y_pred, Y_test):
    Y_pred = np.atleast_2d(np.asarray(Y_pred, dtype=float))
    Y_test = np.atleast_2d(np.asarray(Y_test, dtype=float))
    if Y_pred.shape != Y_test.shape:
        raise DataError(f"prediction shape {Y_pred.shape} vs targets {Y_test.shape}")
    if Y_test.size == 0:
        raise DataError("no test targets")
    err = Y_pred - Y_test
    rmse = float(np.sqrt(np.mean(err**2)))
    rng = float(Y_test.max() - Y_test.min())
    zero = not rng > 0
    return MetricsReport(
        mae=float(np.mean(np.abs(err))),
        nrmse=rmse if zero else rmse / rng,
        rmse=rmse,
        normalizer=1.0 if zero else rng,
        zero_range=zero,
        per_output_mae=np.mean(np.abs(err), axis=0).tolist(),
    )
