"""Transaction/firm-file parsing, windowed network construction, activity summaries."""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from typing import IO, Iterable, Sequence

import numpy as np

from .graph import RATINGS, FirmMeta, GraphError, PaymentGraph

GRANULARITIES = ("daily", "weekly", "monthly")

TRANSACTION_COLUMNS = ("payer", "payee", "date", "amount", "count", "kind")
FIRM_COLUMNS = ("id", "status", "rating", "sector")

_STATUS_ALIASES = {"customer": "customer", "former": "former", "non": "non-customer",
                   "non-customer": "non-customer", "NA": "unknown", "unknown": "unknown", "": "unknown"}


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class TransactionRecord:
    payer: str
    payee: str
    date: dt.date
    amount: float
    count: int = 1
    kind: str = ""


@dataclass(frozen=True)
class RowError:
    line: int
    message: str


@dataclass
class ParseResult:
    records: list[TransactionRecord]
    errors: list[RowError]
    rows_read: int

    @property
    def record_count(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class TimeWindow:
    """One window of the tiling at the given granularity.

    Select either by `label` (e.g. "2014-01", "2014-W03", "2014-01-15") or by
    `index`, the ordinal among calendar windows spanned by the data.
    """

    granularity: str
    index: int | None = None
    label: str | None = None

    def __post_init__(self) -> None:
        if self.granularity not in GRANULARITIES:
            raise IngestError(f"unknown granularity {self.granularity!r}")
        if self.index is None and self.label is None:
            raise IngestError("TimeWindow needs an index or a label")


def window_label(date: dt.date, granularity: str) -> str:
    if granularity == "daily":
        return date.isoformat()
    if granularity == "weekly":
        y, w, _ = date.isocalendar()
        return f"{y:04d}-W{w:02d}"
    if granularity == "monthly":
        return f"{date.year:04d}-{date.month:02d}"
    raise IngestError(f"unknown granularity {granularity!r}")


def span_labels(dates: Sequence[dt.date], granularity: str) -> list[str]:
    """All window labels between min and max date, inclusive (empty ones too)."""
    if not len(dates):
        return []
    lo, hi = min(dates), max(dates)
    labels: list[str] = []
    if granularity == "daily":
        d = lo
        while d <= hi:
            labels.append(d.isoformat())
            d += dt.timedelta(days=1)
    elif granularity == "weekly":
        d = lo - dt.timedelta(days=lo.isocalendar()[2] - 1)  # back to Monday
        while d <= hi:
            labels.append(window_label(d, "weekly"))
            d += dt.timedelta(days=7)
    else:
        y, mth = lo.year, lo.month
        while (y, mth) <= (hi.year, hi.month):
            labels.append(f"{y:04d}-{mth:02d}")
            y, mth = (y + 1, 1) if mth == 12 else (y, mth + 1)
    return labels


# -- parsing -------------------------------------------------------------------


def parse_transactions(stream: IO[str] | Iterable[str], schema: Sequence[str] = TRANSACTION_COLUMNS) -> ParseResult:
    """Parse a transactions CSV; invalid rows are reported, not fatal.

    A missing required column is fatal. Amounts are fixed-point with two
    decimal digits, handled as floats downstream.
    """
    reader = csv.DictReader(stream)
    if reader.fieldnames is None:
        raise IngestError("empty transactions file")
    missing = [c for c in schema if c not in reader.fieldnames]
    if missing:
        raise IngestError(f"missing required columns: {missing}")
    records: list[TransactionRecord] = []
    errors: list[RowError] = []
    rows = 0
    for row in reader:
        rows += 1
        line = reader.line_num
        try:
            date = dt.date.fromisoformat((row["date"] or "").strip())
        except ValueError:
            errors.append(RowError(line, f"malformed date {row['date']!r}"))
            continue
        try:
            amount = float(Decimal((row["amount"] or "").strip()).quantize(Decimal("0.01")))
        except InvalidOperation:
            errors.append(RowError(line, f"malformed amount {row['amount']!r}"))
            continue
        if amount < 0:
            errors.append(RowError(line, f"negative amount {row['amount']!r}"))
            continue
        try:
            count = int((row["count"] or "1").strip() or "1")
        except ValueError:
            errors.append(RowError(line, f"malformed count {row['count']!r}"))
            continue
        if count < 1:
            errors.append(RowError(line, f"non-positive count {row['count']!r}"))
            continue
        payer, payee = (row["payer"] or "").strip(), (row["payee"] or "").strip()
        if not payer or not payee:
            errors.append(RowError(line, "missing payer or payee"))
            continue
        records.append(TransactionRecord(payer, payee, date, amount, count, (row.get("kind") or "").strip()))
    return ParseResult(records, errors, rows)


def parse_firms(stream: IO[str] | Iterable[str]) -> list[FirmMeta]:
    reader = csv.DictReader(stream)
    if reader.fieldnames is None:
        raise IngestError("empty firms file")
    missing = [c for c in FIRM_COLUMNS if c not in reader.fieldnames]
    if missing:
        raise IngestError(f"missing required columns: {missing}")
    firms: list[FirmMeta] = []
    for row in reader:
        status = _STATUS_ALIASES.get((row["status"] or "").strip())
        if status is None:
            raise IngestError(f"line {reader.line_num}: invalid status {row['status']!r}")
        rating = (row["rating"] or "NA").strip() or "NA"
        if rating not in RATINGS:
            raise IngestError(f"line {reader.line_num}: invalid rating {row['rating']!r}")
        firms.append(FirmMeta(row["id"].strip(), status, rating, (row["sector"] or "").strip() or None))
    return firms


# -- network construction --------------------------------------------------------


def build_network(
    records: Sequence[TransactionRecord],
    firms: Sequence[FirmMeta] = (),
    window: TimeWindow | None = None,
) -> PaymentGraph:
    """Aggregate in-window records into a payment graph.

    One node per firm active in the window; edge weight is the sum of row
    amounts for the ordered pair. Self-payments are dropped and counted in
    graph.meta. Firms absent from metadata get status=unknown, rating=NA.
    """
    by_id: dict[str, FirmMeta] = {}
    for f in firms:
        if f.id in by_id:
            raise IngestError(f"duplicate firm id {f.id!r}")
        by_id[f.id] = f

    if window is not None:
        label = window.label
        if label is None:
            labels = span_labels([r.date for r in records], window.granularity)
            label = labels[window.index] if 0 <= window.index < len(labels) else "__out_of_span__"
        records = [r for r in records if window_label(r.date, window.granularity) == label]

    self_loops = 0
    self_amount = 0.0
    weights: dict[tuple[str, str], float] = {}
    active: dict[str, None] = {}
    for r in records:
        if r.payer == r.payee:
            self_loops += 1
            self_amount += r.amount
            continue
        active.setdefault(r.payer)
        active.setdefault(r.payee)
        key = (r.payer, r.payee)
        weights[key] = weights.get(key, 0.0) + r.amount

    node_ids = sorted(active)
    index = {nid: i for i, nid in enumerate(node_ids)}
    src = np.fromiter((index[a] for a, _ in weights), dtype=np.int64, count=len(weights))
    dst = np.fromiter((index[b] for _, b in weights), dtype=np.int64, count=len(weights))
    wgt = np.fromiter(weights.values(), dtype=np.float64, count=len(weights))
    pos = wgt > 0
    meta = {
        "rows_in_window": len(records),
        "self_loops_dropped": self_loops,
        "self_loop_amount": round(self_amount, 2),
        "zero_weight_edges_dropped": int((~pos).sum()),
    }
    metas = [by_id.get(nid, FirmMeta(nid)) for nid in node_ids]
    return PaymentGraph(
        node_ids, src[pos], dst[pos], wgt[pos],
        status=[f.status for f in metas],
        rating=[f.rating for f in metas],
        sector=[f.sector for f in metas],
        meta=meta,
    )


# -- temporal activity ------------------------------------------------------------


@dataclass
class ActivitySeries:
    granularity: str
    labels: list[str]
    node_counts: list[int]
    edge_counts: list[int]
    node_persistence: dict[int, int] = field(default_factory=dict)
    edge_persistence: dict[int, int] = field(default_factory=dict)


def activity_summary(records: Sequence[TransactionRecord], granularity: str) -> ActivitySeries:
    """Per-window node/edge counts plus persistence histograms.

    Persistence of a node (edge) is the number of windows it appears in.
    """
    if granularity not in GRANULARITIES:
        raise IngestError(f"unknown granularity {granularity!r}")
    labels = span_labels([r.date for r in records], granularity)
    pos = {lab: i for i, lab in enumerate(labels)}
    node_windows: dict[str, set[int]] = {}
    edge_windows: dict[tuple[str, str], set[int]] = {}
    per_window_nodes: list[set[str]] = [set() for _ in labels]
    per_window_edges: list[set[tuple[str, str]]] = [set() for _ in labels]
    for r in records:
        if r.payer == r.payee:
            continue
        w = pos[window_label(r.date, granularity)]
        per_window_nodes[w].update((r.payer, r.payee))
        per_window_edges[w].add((r.payer, r.payee))
        node_windows.setdefault(r.payer, set()).add(w)
        node_windows.setdefault(r.payee, set()).add(w)
        edge_windows.setdefault((r.payer, r.payee), set()).add(w)
    node_pers: dict[int, int] = {}
    for ws in node_windows.values():
        node_pers[len(ws)] = node_pers.get(len(ws), 0) + 1
    edge_pers: dict[int, int] = {}
    for ws in edge_windows.values():
        edge_pers[len(ws)] = edge_pers.get(len(ws), 0) + 1
    return ActivitySeries(
        granularity,
        labels,
        [len(s) for s in per_window_nodes],
        [len(s) for s in per_window_edges],
        node_pers,
        edge_pers,
    )
