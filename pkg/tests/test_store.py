import pytest

from trrsim.database import DatabaseTransaction, configure_database, get_db, test_connection
from trrsim.models import Run
from trrsim.repositories.runs import RunRepository
from trrsim.services.runs import RunService


@pytest.fixture
def store():
    configure_database("sqlite://")
    return RunService()


def test_connection_ok(store):
    assert test_connection()


def test_record_and_fetch_run(store):
    records = [{"kind": "histogram", "histogram": {"1": 4}}, {"kind": "rs_parity_needed", "parity_symbols": 1}]
    run_id = store.record_run("ecc-report", "A0", 0, "desk", "ok", {"lines": ["4 flips"]}, records)
    run = store.get_run(run_id)
    assert run["verb"] == "ecc-report"
    assert run["summary"] == {"lines": ["4 flips"]}
    assert run["records"] == records


def test_missing_run(store):
    assert store.get_run(42) is None


def test_list_runs_filters_by_verb(store):
    store.record_run("device", "A0", 0, "desk", "ok", {})
    store.record_run("reveng", "B0", 1, "desk", "inconclusive", {})
    store.record_run("device", "C7", 0, "paper", "ok", {})
    assert [r["preset"] for r in store.list_runs("device")] == ["A0", "C7"]
    assert len(store.list_runs()) == 3


def test_records_of_kind_and_latest(store):
    run_id = store.record_run("attack", "A0", 0, "desk", "ok", {},
                              [{"kind": "sweep_point", "hammers": 8}, {"kind": "attack", "total_flips": 3}])
    store.record_run("attack", "A0", 1, "desk", "ok", {})
    with DatabaseTransaction() as db:
        repo = RunRepository(db)
        assert [r.payload["hammers"] for r in repo.records_of(run_id, "sweep_point")] == [8]
        assert repo.latest("attack", "A0").seed == 1
        assert repo.latest("reveng") is None


def test_failed_transaction_rolls_back(store):
    with pytest.raises(RuntimeError):
        with DatabaseTransaction() as db:
            db.add(Run(verb="device", preset="A0", seed=0, profile="desk", status="ok", summary={}))
            db.flush()
            raise RuntimeError("boom")
    assert store.list_runs() == []


def test_deleting_run_drops_records(store):
    run_id = store.record_run("device", "A0", 0, "desk", "ok", {}, [{"kind": "device", "banks": 16}])
    with DatabaseTransaction() as db:
        repo = RunRepository(db)
        assert repo.delete(run_id)
        assert repo.records_of(run_id) == []


def test_get_db_reads_without_committing(store):
    store.record_run("device", "A0", 0, "desk", "ok", {})
    sessions = get_db()
    db = next(sessions)
    assert [r.preset for r in RunRepository(db).runs("device")] == ["A0"]
    db.add(Run(verb="device", preset="B0", seed=0, profile="desk", status="ok", summary={}))
    sessions.close()
    assert [r["preset"] for r in store.list_runs("device")] == ["A0"]
