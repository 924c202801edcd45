"""Sales data model: transaction ingestion, sparse tensor construction,
chronological splitting, and value standardization.

The central object is :class:`SalesTensor`, a sparse store x product x week
tensor stored as parallel index/value arrays.  Unobserved cells are absent,
never stored as zeros; every loss and metric downstream runs over the
observed set only.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyTensorError, SchemaError

logger = logging.getLogger(__name__)

#: Default bindings from logical roles to CSV column names (IRI-style file).
DEFAULT_COLUMNS = {
    "store": "store",
    "week": "week",
    "syscode": "syscode",
    "gen": "gen",
    "vendor": "vendor",
    "item": "item",
    "units": "units",
    "dollars": "dollars",
}

#: Store/product transaction-count screening thresholds conventionally used
#: for full-scale retail panels (at least 1,000 transactions per kept store,
#: 200 per kept product).  Synthetic data is usually built with (0, 0).
IRI_MIN_STORE_TXNS = 1000
IRI_MIN_PRODUCT_TXNS = 200


@dataclass(frozen=True)
class Transaction:
    """One raw sales record: a (store, product, week) observation.

    ``product_id`` is the four UPC columns joined by ``-``.  Duplicate
    (store, product, week) rows are legal here; they are summed when the
    tensor is built.
    """

    store_id: str
    week: int
    product_id: str
    units: float
    dollars: float


@dataclass
class IngestReport:
    """Row accounting for one CSV ingestion pass."""

    rows_read: int = 0
    rows_kept: int = 0
    rows_rejected: int = 0
    rejected_lines: list[tuple[int, str]] = field(default_factory=list)


def ingest_csv(path, column_map=None):
    """Read transactions from a CSV file.

    Parameters
    ----------
    path:
        CSV file with a header row.  Must contain columns resolvable to the
        roles in :data:`DEFAULT_COLUMNS` (store, week, the four UPC parts,
        units, dollars).
    column_map:
        Optional overrides, e.g. ``{"store": "IRI_KEY"}``.

    Returns
    -------
    (transactions, report):
        ``transactions`` is a list of :class:`Transaction`; ``report``
        counts malformed rows, which are rejected with their line number.

    Raises
    ------
    FileNotFoundError
        If ``path`` does not exist.
    SchemaError
        If a required column cannot be resolved.
    """
    cols = dict(DEFAULT_COLUMNS)
    if column_map:
        cols.update(column_map)

    txns: list[Transaction] = []
    report = IngestReport()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: empty file, no header row")
        missing = [name for name in cols.values() if name not in reader.fieldnames]
        if missing:
            raise SchemaError(
                f"{path}: cannot resolve column(s) {missing}; "
                f"header has {reader.fieldnames}"
            )
        for line_no, row in enumerate(reader, start=2):
            report.rows_read += 1
            try:
                week = int(row[cols["week"]])
                units = float(row[cols["units"]])
                dollars = float(row[cols["dollars"]])
                if week < 1 or dollars < 0 or units < 0:
                    raise ValueError("negative or out-of-range value")
                product_id = "-".join(
                    row[cols[part]].strip() for part in ("syscode", "gen", "vendor", "item")
                )
                store_id = row[cols["store"]].strip()
                if not store_id or not product_id.replace("-", ""):
                    raise ValueError("blank identifier")
            except (ValueError, TypeError, KeyError) as exc:
                report.rows_rejected += 1
                if len(report.rejected_lines) < 20:
                    report.rejected_lines.append((line_no, str(exc)))
                continue
            txns.append(Transaction(store_id, week, product_id, units, dollars))
            report.rows_kept += 1
    if report.rows_rejected:
        logger.warning(
            "%s: rejected %d malformed row(s), first at line %d",
            path,
            report.rows_rejected,
            report.rejected_lines[0][0],
        )
    return txns, report


class SalesTensor:
    """Sparse store x product x week sales tensor.

    Cells are stored as parallel arrays ``(i, j, t, y)`` with 0-based dense
    indices.  ``store_ids`` / ``product_ids`` give index -> id; the inverse
    maps are ``store_index`` / ``product_index``.  ``week_origin`` is the
    calendar week mapped to ``t = 0``.
    """

    def __init__(self, n_stores, n_products, n_weeks, i, j, t, y,
                 store_ids, product_ids, week_origin=0):
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        t = np.asarray(t, dtype=np.int64)
        y = np.asarray(y, dtype=np.float64)
        if not (len(i) == len(j) == len(t) == len(y)):
            raise ValueError("cell arrays must have equal length")
        if len(i) and (i.min() < 0 or i.max() >= n_stores):
            raise ValueError("store index out of range")
        if len(j) and (j.min() < 0 or j.max() >= n_products):
            raise ValueError("product index out of range")
        if len(t) and (t.min() < 0 or t.max() >= n_weeks):
            raise ValueError("week index out of range")
        key = (i * n_products + j) * n_weeks + t
        if len(np.unique(key)) != len(key):
            raise ValueError("duplicate (store, product, week) cell")
        self.n_stores = int(n_stores)
        self.n_products = int(n_products)
        self.n_weeks = int(n_weeks)
        self.i, self.j, self.t, self.y = i, j, t, y
        for arr in (self.i, self.j, self.t, self.y):
            arr.setflags(write=False)
        self.store_ids = list(store_ids)
        self.product_ids = list(product_ids)
        self.store_index = {s: idx for idx, s in enumerate(self.store_ids)}
        self.product_index = {p: idx for idx, p in enumerate(self.product_ids)}
        self.week_origin = int(week_origin)
        self._mode_order: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    @property
    def n_cells(self) -> int:
        return len(self.y)

    @property
    def density(self) -> float:
        total = self.n_stores * self.n_products * self.n_weeks
        return self.n_cells / total if total else 0.0

    def mode_indices(self, mode: int) -> np.ndarray:
        return (self.i, self.j, self.t)[mode]

    def mode_size(self, mode: int) -> int:
        return (self.n_stores, self.n_products, self.n_weeks)[mode]

    def sorted_by_mode(self, mode: int):
        """Cells sorted by one mode's index, cached.

        Returns ``(order, starts)`` where ``order`` permutes cells so the
        mode index is non-decreasing and ``starts`` has length
        ``mode_size + 1`` with the segment boundaries of each entity.
        """
        if mode not in self._mode_order:
            idx = self.mode_indices(mode)
            order = np.argsort(idx, kind="stable")
            counts = np.bincount(idx, minlength=self.mode_size(mode))
            starts = np.concatenate([[0], np.cumsum(counts)])
            self._mode_order[mode] = (order, starts)
        return self._mode_order[mode]

    def with_values(self, y_new) -> "SalesTensor":
        """Copy of this tensor with replaced cell values (same support)."""
        y_new = np.asarray(y_new, dtype=np.float64)
        if y_new.shape != self.y.shape:
            raise ValueError("replacement values must match cell count")
        return SalesTensor(self.n_stores, self.n_products, self.n_weeks,
                           self.i, self.j, self.t, y_new,
                           self.store_ids, self.product_ids, self.week_origin)

    def __repr__(self):
        return (f"SalesTensor(n_stores={self.n_stores}, n_products={self.n_products}, "
                f"n_weeks={self.n_weeks}, cells={self.n_cells}, "
                f"density={self.density:.4g})")


def build_tensor(txns, min_store_txns=0, min_product_txns=0):
    """Assemble a :class:`SalesTensor` from raw transactions.

    Stores with fewer than ``min_store_txns`` rows and products with fewer
    than ``min_product_txns`` rows are removed; because removing one side
    can push the other below threshold, the screen repeats until stable.
    Weeks are re-based so the earliest observed calendar week becomes
    ``t = 0`` (gaps stay gaps).  Duplicate (store, product, week) rows are
    summed; dollars become the cell value.

    Raises
    ------
    EmptyTensorError
        If no transactions survive screening.
    """
    txns = list(txns)
    if not txns:
        raise EmptyTensorError("no transactions to build a tensor from")

    keep = txns
    while True:
        store_counts: dict[str, int] = {}
        product_counts: dict[str, int] = {}
        for tx in keep:
            store_counts[tx.store_id] = store_counts.get(tx.store_id, 0) + 1
            product_counts[tx.product_id] = product_counts.get(tx.product_id, 0) + 1
        bad_stores = {s for s, c in store_counts.items() if c < min_store_txns}
        bad_products = {p for p, c in product_counts.items() if c < min_product_txns}
        if not bad_stores and not bad_products:
            break
        keep = [tx for tx in keep
                if tx.store_id not in bad_stores and tx.product_id not in bad_products]
        if not keep:
            raise EmptyTensorError(
                f"screening (min_store_txns={min_store_txns}, "
                f"min_product_txns={min_product_txns}) removed every transaction")

    store_ids = sorted({tx.store_id for tx in keep})
    product_ids = sorted({tx.product_id for tx in keep})
    store_index = {s: k for k, s in enumerate(store_ids)}
    product_index = {p: k for k, p in enumerate(product_ids)}
    weeks = np.array([tx.week for tx in keep], dtype=np.int64)
    week_origin = int(weeks.min())
    n_weeks = int(weeks.max()) - week_origin + 1

    i = np.array([store_index[tx.store_id] for tx in keep], dtype=np.int64)
    j = np.array([product_index[tx.product_id] for tx in keep], dtype=np.int64)
    t = weeks - week_origin
    y = np.array([tx.dollars for tx in keep], dtype=np.float64)

    # sum duplicates onto unique (i, j, t) keys
    key = (i * len(product_ids) + j) * n_weeks + t
    order = np.argsort(key, kind="stable")
    key_sorted = key[order]
    uniq, first = np.unique(key_sorted, return_index=True)
    y_sum = np.add.reduceat(y[order], first)
    i_u = (uniq // n_weeks) // len(product_ids)
    j_u = (uniq // n_weeks) % len(product_ids)
    t_u = uniq % n_weeks

    return SalesTensor(len(store_ids), len(product_ids), n_weeks,
                       i_u, j_u, t_u, y_sum, store_ids, product_ids, week_origin)


def tensor_to_transactions(tensor: SalesTensor) -> list[Transaction]:
    """Re-express tensor cells as transactions (units set to 1)."""
    return [
        Transaction(tensor.store_ids[i], tensor.week_origin + int(t),
                    tensor.product_ids[j], 1.0, float(y))
        for i, j, t, y in zip(tensor.i, tensor.j, tensor.t, tensor.y)
    ]


@dataclass(frozen=True)
class SplitSpec:
    """Contiguous chronological train/validation/test boundaries (in weeks,
    exclusive ends): train covers ``t < train_end``, validation
    ``train_end <= t < valid_end``, test ``valid_end <= t < test_end``."""

    train_end: int
    valid_end: int
    test_end: int

    def validate(self, n_weeks: int) -> None:
        if not (0 < self.train_end < self.valid_end <= self.test_end <= n_weeks):
            raise ValueError(
                f"invalid split {self} for a tensor with {n_weeks} weeks: "
                "require 0 < train_end < valid_end <= test_end <= n_weeks")


def chronological_split(tensor: SalesTensor, spec: SplitSpec):
    """Partition cells by week into (train, valid, test) tensors.

    The three outputs share the parent's store/product index maps and
    week origin; week indices stay absolute.  Each split's ``n_weeks`` is
    its own exclusive end boundary.
    """
    spec.validate(tensor.n_weeks)

    def subset(mask, n_weeks):
        return SalesTensor(tensor.n_stores, tensor.n_products, n_weeks,
                           tensor.i[mask], tensor.j[mask], tensor.t[mask],
                           tensor.y[mask], tensor.store_ids, tensor.product_ids,
                           tensor.week_origin)

    t = tensor.t
    train = subset(t < spec.train_end, spec.train_end)
    valid = subset((t >= spec.train_end) & (t < spec.valid_end), spec.valid_end)
    test = subset((t >= spec.valid_end) & (t < spec.test_end), spec.test_end)
    return train, valid, test


@dataclass(frozen=True)
class Standardizer:
    """Invertible value transform fitted on training cells only.

    Modes: ``none`` (identity), ``zscore`` ((y - mean) / stddev with the
    sample standard deviation), ``log1p`` (log(1 + y)).
    """

    mode: str = "none"
    mean: float = 0.0
    stddev: float = 1.0

    def apply(self, values):
        values = np.asarray(values, dtype=np.float64)
        if self.mode == "none":
            return values.copy()
        if self.mode == "zscore":
            return (values - self.mean) / self.stddev
        if self.mode == "log1p":
            return np.log1p(values)
        raise ValueError(f"unknown standardizer mode {self.mode!r}")

    def invert(self, values):
        values = np.asarray(values, dtype=np.float64)
        if self.mode == "none":
            return values.copy()
        if self.mode == "zscore":
            return values * self.stddev + self.mean
        if self.mode == "log1p":
            return np.expm1(values)
        raise ValueError(f"unknown standardizer mode {self.mode!r}")


def fit_standardizer(train: SalesTensor, mode: str = "none") -> Standardizer:
    """Fit a :class:`Standardizer` on the training cells.

    ``zscore`` needs at least two training cells with nonzero variance;
    otherwise it falls back to ``none`` with a warning.
    """
    if mode == "none":
        return Standardizer("none")
    if mode == "log1p":
        return Standardizer("log1p")
    if mode == "zscore":
        y = train.y
        if len(y) < 2 or float(np.var(y)) == 0.0:
            warnings.warn("zscore standardizer needs >= 2 train cells with "
                          "nonzero variance; falling back to mode 'none'")
            return Standardizer("none")
        return Standardizer("zscore", float(np.mean(y)), float(np.std(y, ddof=1)))
    raise ValueError(f"unknown standardizer mode {mode!r}")


def export_tensor_csv(tensor: SalesTensor, path, standardizer: Standardizer | None = None):
    """Write the canonical tensor export: a CSV of cells plus a ``.meta``
    sidecar with counts, week origin and standardizer parameters.

    Values are written with 6 fractional digits; re-ingesting reproduces
    the written decimals exactly.
    """
    path = str(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["store_id", "product_id", "week_t", "y"])
        for i, j, t, y in zip(tensor.i, tensor.j, tensor.t, tensor.y):
            writer.writerow([tensor.store_ids[i], tensor.product_ids[j],
                             int(t), f"{y:.6f}"])
    std = standardizer or Standardizer()
    with open(path + ".meta", "w", encoding="utf-8") as fh:
        fh.write(f"n_stores={tensor.n_stores}\n")
        fh.write(f"n_products={tensor.n_products}\n")
        fh.write(f"n_weeks={tensor.n_weeks}\n")
        fh.write(f"n_cells={tensor.n_cells}\n")
        fh.write(f"week_origin={tensor.week_origin}\n")
        fh.write(f"standardizer_mode={std.mode}\n")
        fh.write(f"standardizer_mean={std.mean!r}\n")
        fh.write(f"standardizer_stddev={std.stddev!r}\n")


def read_tensor_csv(path):
    """Read a canonical tensor export back into a :class:`SalesTensor`.

    Returns ``(tensor, standardizer)``.  Requires the ``.meta`` sidecar
    written by :func:`export_tensor_csv`.
    """
    path = str(path)
    meta: dict[str, str] = {}
    with open(path + ".meta", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and "=" in line:
                k, v = line.split("=", 1)
                meta[k] = v
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        expect = {"store_id", "product_id", "week_t", "y"}
        if reader.fieldnames is None or not expect.issubset(reader.fieldnames):
            raise SchemaError(f"{path}: expected columns {sorted(expect)}")
        for row in reader:
            rows.append((row["store_id"], row["product_id"],
                         int(row["week_t"]), float(row["y"])))
    if not rows:
        raise EmptyTensorError(f"{path}: no cells")
    store_ids = sorted({r[0] for r in rows})
    product_ids = sorted({r[1] for r in rows})
    s_index = {s: k for k, s in enumerate(store_ids)}
    p_index = {p: k for k, p in enumerate(product_ids)}
    i = np.array([s_index[r[0]] for r in rows])
    j = np.array([p_index[r[1]] for r in rows])
    t = np.array([r[2] for r in rows])
    y = np.array([r[3] for r in rows])
    tensor = SalesTensor(len(store_ids), len(product_ids),
                         int(meta.get("n_weeks", t.max() + 1)),
                         i, j, t, y, store_ids, product_ids,
                         int(meta.get("week_origin", 0)))
    std = Standardizer(meta.get("standardizer_mode", "none"),
                       float(meta.get("standardizer_mean", 0.0)),
                       float(meta.get("standardizer_stddev", 1.0)))
    return tensor, std
