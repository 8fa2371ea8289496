"""Results ledger on a throwaway SQLite file."""
import pytest

from weaves.bench import ScaleReport, TimingRecord
from weaves.errors import WeaveError
from weaves.models import ResultsLedger


@pytest.fixture
def ledger(tmp_path):
    return ResultsLedger(f"sqlite:///{tmp_path / 'results.db'}")


class TestResultsLedger:
    def test_timings(self, ledger):
        stored = ledger.store_timings([
            TimingRecord("weaves", 2, 2010.0, 0.5, 3, setup_ms=0.4),
            TimingRecord("processes", 2, 0.0, 0.0, 3, skipped=True),
        ])
        assert stored == 2
        rows = ledger.recent()
        assert [r["model"] for r in rows] == ["processes", "weaves"]
        assert rows[0]["total_wall_ms"] is None
        assert rows[1]["total_wall_ms"] == 2010.0
        assert rows[1]["created_at"] is not None

    def test_scale_runs(self, ledger):
        report = ScaleReport(8, (8, 4, 4), [10.0, 12.0], ["ab", "ab"], [1.0, 1.0], 55.5)
        assert ledger.store_scale(report) == 2
        rows = ledger.recent("scale_runs", limit=1)
        assert len(rows) == 1
        assert rows[0]["wall_ms"] == 12.0
        assert rows[0]["variation_pct"] == pytest.approx(2.0 / 11.0 * 100.0)

    def test_rows_survive_reopening(self, ledger):
        ledger.store_timings([TimingRecord("baseline", 1, 100.0)])
        again = ResultsLedger(ledger.url)
        assert len(again.recent()) == 1

    def test_unknown_table(self, ledger):
        with pytest.raises(WeaveError) as exc:
            ledger.recent("nope")
        assert exc.value.code == "unknown-table"
