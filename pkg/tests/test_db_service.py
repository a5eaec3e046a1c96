"""
Run history on a scratch SQLite database.
"""
import pytest

from parafact.services.db_service import DatabaseService


@pytest.fixture
def db(tmp_path):
    service = DatabaseService(f"sqlite:///{tmp_path / 'runs' / 'history.db'}")
    yield service
    service.close()


def log(db, command, exit_code, wall_time_ms=10.0):
    return db.log_run(command=command, inputs={"/tmp/a.eq": "abc"}, report={"command": command},
                      exit_code=exit_code, seed=0, wall_time_ms=wall_time_ms)


def test_log_run_returns_increasing_ids(db):
    first = log(db, "check", 0)
    second = log(db, "check", 1)
    assert second > first


def test_statistics(db):
    log(db, "check", 0, 10.0)
    log(db, "check", 1, 30.0)
    log(db, "classify", 0, 20.0)
    stats = db.get_statistics(days=7)
    assert stats["total_runs"] == 3
    assert stats["by_command"] == {"check": 2, "classify": 1}
    assert stats["by_exit_code"] == {"0": 2, "1": 1}
    assert stats["average_wall_time_ms"] == pytest.approx(20.0)
    assert stats["time_period_days"] == 7


def test_empty_history(db):
    stats = db.get_statistics()
    assert stats["total_runs"] == 0
    assert stats["average_wall_time_ms"] == 0.0
    assert db.recent_runs() == []


def test_recent_runs_newest_first(db):
    for command in ("check", "quotient", "normalize"):
        log(db, command, 0)
    recent = db.recent_runs(limit=2)
    assert [r["command"] for r in recent] == ["normalize", "quotient"]
    assert recent[0]["inputs"] == "a.eq"


def test_health_check(db):
    assert db.health_check()
