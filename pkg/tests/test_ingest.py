import datetime as dt
import io

import numpy as np
import pytest

from paynet.graph import FirmMeta
from paynet.ingest import (
    IngestError,
    TimeWindow,
    TransactionRecord,
    activity_summary,
    build_network,
    parse_firms,
    parse_transactions,
    span_labels,
    window_label,
)

HEADER = "payer,payee,date,amount,count,kind\n"


def rec(payer, payee, date, amount, count=1, kind=""):
    return TransactionRecord(payer, payee, dt.date.fromisoformat(date), amount, count, kind)


class TestParseTransactions:
    def test_direct_field_mapping(self):
        res = parse_transactions(io.StringIO(HEADER + "A,B,2014-01-15,1000.00,2,wire\n"))
        assert res.record_count == 1
        r = res.records[0]
        assert (r.payer, r.payee, r.amount, r.count, r.kind) == ("A", "B", 1000.0, 2, "wire")
        assert r.date == dt.date(2014, 1, 15)

    def test_negative_amount_is_row_error(self):
        res = parse_transactions(io.StringIO(HEADER + "A,B,2014-01-15,-5,1,\nC,D,2014-01-16,7,1,\n"))
        assert res.record_count == 1
        assert len(res.errors) == 1
        assert res.errors[0].line == 2
        assert "amount" in res.errors[0].message

    def test_malformed_date_is_row_error_processing_continues(self):
        res = parse_transactions(io.StringIO(HEADER + "A,B,not-a-date,5,1,\nC,D,2014-02-01,7,1,\n"))
        assert res.record_count == 1
        assert res.errors[0].line == 2

    def test_bad_count_rejected(self):
        res = parse_transactions(io.StringIO(HEADER + "A,B,2014-01-15,5,0,\n"))
        assert res.record_count == 0 and len(res.errors) == 1

    def test_missing_required_column_fatal(self):
        with pytest.raises(IngestError, match="missing required columns"):
            parse_transactions(io.StringIO("payer,payee,date,amount\nA,B,2014-01-01,5\n"))

    def test_rows_read_counts_invalid_rows(self):
        res = parse_transactions(io.StringIO(HEADER + "A,B,2014-01-15,5,1,\nX,Y,bad,1,1,\n"))
        assert res.rows_read == 2


class TestParseFirms:
    def test_status_aliases_and_rating(self):
        firms = parse_firms(io.StringIO("id,status,rating,sector\nA,customer,L,mfg\nB,non,NA,\nC,NA,,\n"))
        assert firms[0] == FirmMeta("A", "customer", "L", "mfg")
        assert firms[1].status == "non-customer" and firms[1].rating == "NA"
        assert firms[2].status == "unknown"

    def test_invalid_rating_fatal(self):
        with pytest.raises(IngestError, match="invalid rating"):
            parse_firms(io.StringIO("id,status,rating,sector\nA,customer,Z,\n"))


class TestBuildNetwork:
    def test_same_pair_amounts_sum(self):
        g = build_network([rec("A", "B", "2014-01-03", 10.0), rec("A", "B", "2014-01-20", 15.0)],
                          window=TimeWindow("monthly", label="2014-01"))
        assert g.m == 1
        assert g.weight[0] == pytest.approx(25.0)

    def test_out_of_window_yields_empty_graph(self):
        g = build_network([rec("A", "B", "2014-02-03", 10.0)],
                          window=TimeWindow("monthly", label="2014-01"))
        assert g.n == 0 and g.m == 0

    def test_three_cycle_direct_construction(self):
        g = build_network([rec("A", "B", "2014-01-01", 1.0), rec("B", "C", "2014-01-02", 2.0),
                           rec("C", "A", "2014-01-03", 3.0)])
        assert g.n == 3 and g.m == 3
        weights = {(g.node_ids[s], g.node_ids[d]): w
                   for s, d, w in zip(g.src, g.dst, g.weight)}
        assert weights == {("A", "B"): 1.0, ("B", "C"): 2.0, ("C", "A"): 3.0}

    def test_self_payments_dropped_and_counted(self):
        g = build_network([rec("A", "A", "2014-01-01", 9.0), rec("A", "B", "2014-01-01", 1.0)])
        assert g.m == 1
        assert g.meta["self_loops_dropped"] == 1
        assert g.meta["self_loop_amount"] == pytest.approx(9.0)

    def test_unknown_firms_get_na_rating(self):
        g = build_network([rec("A", "B", "2014-01-01", 1.0)],
                          firms=[FirmMeta("A", "customer", "L")])
        i_a, i_b = g.index_of("A"), g.index_of("B")
        assert g.rating[i_a] == "L" and g.status[i_a] == "customer"
        assert g.rating[i_b] == "NA" and g.status[i_b] == "unknown"

    def test_duplicate_firm_meta_fatal(self):
        with pytest.raises(IngestError, match="duplicate firm id"):
            build_network([rec("A", "B", "2014-01-01", 1.0)],
                          firms=[FirmMeta("A"), FirmMeta("A")])

    def test_conservation_of_volume(self):
        rng = np.random.default_rng(0)
        records = []
        firms_pool = [f"F{i}" for i in range(20)]
        for _ in range(300):
            a, b = rng.choice(firms_pool, size=2, replace=True)
            records.append(rec(a, b, "2014-03-15", round(float(rng.uniform(0.5, 100)), 2)))
        g = build_network(records)
        dropped = sum(r.amount for r in records if r.payer == r.payee)
        assert g.weight.sum() == pytest.approx(sum(r.amount for r in records) - dropped, rel=1e-6)

    def test_order_independence(self):
        rng = np.random.default_rng(1)
        records = [rec(f"F{rng.integers(6)}", f"F{rng.integers(6)}", "2014-01-05",
                       round(float(rng.uniform(1, 50)), 2)) for _ in range(60)]
        g1 = build_network(records)
        perm = list(records)
        rng.shuffle(perm)
        g2 = build_network(perm)
        assert g1.same_structure(g2)

    def test_node_count_bounded_by_distinct_ids(self):
        records = [rec("A", "B", "2014-01-01", 1.0), rec("B", "C", "2014-02-01", 1.0)]
        g = build_network(records)
        assert g.n <= len({r.payer for r in records} | {r.payee for r in records})


class TestWindows:
    def test_window_labels(self):
        d = dt.date(2014, 1, 15)
        assert window_label(d, "daily") == "2014-01-15"
        assert window_label(d, "weekly") == "2014-W03"
        assert window_label(d, "monthly") == "2014-01"

    def test_span_includes_empty_months(self):
        labels = span_labels([dt.date(2014, 1, 5), dt.date(2014, 4, 2)], "monthly")
        assert labels == ["2014-01", "2014-02", "2014-03", "2014-04"]

    def test_window_by_index(self):
        records = [rec("A", "B", "2014-01-03", 1.0), rec("C", "D", "2014-02-03", 2.0)]
        g = build_network(records, window=TimeWindow("monthly", index=1))
        assert g.n == 2 and g.node_ids == ("C", "D")


class TestActivitySummary:
    def test_persistence_counts_all_windows(self):
        records = [rec("A", "B", f"2014-{m:02d}-10", 1.0) for m in range(1, 13)]
        act = activity_summary(records, "monthly")
        assert act.node_persistence == {12: 2}
        assert act.edge_persistence == {12: 1}
        assert act.node_counts == [2] * 12

    def test_single_record(self):
        act = activity_summary([rec("A", "B", "2014-06-01", 1.0)], "daily")
        assert act.node_counts == [2] and act.edge_counts == [1]
        assert act.node_persistence == {1: 2}

    def test_end_of_month_spike_visible_daily_flat_monthly(self):
        # synthetic spike: heavy activity on the last day of each month
        rng = np.random.default_rng(7)
        records = []
        for month, last in ((1, 31), (2, 28), (3, 31)):
            for day in range(1, last + 1):
                n_tx = 40 if day == last else 8
                for i in range(n_tx):
                    a, b = rng.integers(0, 200, size=2)
                    if a != b:
                        records.append(rec(f"F{a}", f"F{b}", f"2014-{month:02d}-{day:02d}", 1.0))
        daily = activity_summary(records, "daily")
        monthly = activity_summary(records, "monthly")
        peaks = np.array(daily.edge_counts, dtype=float)
        assert peaks.max() / np.median(peaks) > 3.0
        mcounts = np.array(monthly.edge_counts, dtype=float)
        assert mcounts.max() / mcounts.min() < 1.5
