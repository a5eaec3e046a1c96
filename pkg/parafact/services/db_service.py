import logging
import os
from datetime import datetime, timedelta
from typing import Any, Dict, List, Optional

from sqlalchemy import create_engine, func, select
from sqlalchemy.engine import make_url
from sqlalchemy.orm import sessionmaker

from parafact.core.config import DATABASE_URL
from parafact.models import Base, RunLog

logger = logging.getLogger(__name__)


class DatabaseService:
    """
    Run history on SQLAlchemy. The engine is created on first use so that
    commands which never log a run do not touch the database.
    """

    def __init__(self, url: str = DATABASE_URL):
        self.url = url
        self._engine = None
        self._session = None

    @property
    def engine(self):
        if self._engine is None:
            url = make_url(self.url)
            if url.drivername.startswith("sqlite") and url.database not in (None, "", ":memory:"):
                os.makedirs(os.path.dirname(os.path.abspath(url.database)), exist_ok=True)
            self._engine = create_engine(self.url, echo=False, pool_pre_ping=True)
            self._session = sessionmaker(self._engine, expire_on_commit=False)
        return self._engine

    def session(self):
        if self._session is None:
            self.engine
        return self._session()

    def init_db(self):
        """
        Create the tables if needed.
        """
        try:
            Base.metadata.create_all(self.engine)
            logger.debug("Run log tables initialized")
        except Exception as e:
            logger.error(f"Failed to initialize run log database: {e}")
            raise

    def log_run(self, command: str, inputs: Dict[str, str], report: Dict[str, Any], exit_code: int,
                seed: Optional[int], wall_time_ms: float) -> int:
        """
        Store one run. Returns the log ID.
        """
        self.init_db()
        with self.session() as session:
            try:
                log = RunLog(
                    command=command,
                    inputs_json=inputs,
                    report_json=report,
                    exit_code=exit_code,
                    seed=seed,
                    wall_time_ms=wall_time_ms
                )
                session.add(log)
                session.commit()
                session.refresh(log)
                logger.debug(f"Logged run {log.id} ({command}, exit {exit_code})")
                return log.id
            except Exception as e:
                session.rollback()
                logger.error(f"Failed to log run to database: {e}")
                raise

    def get_statistics(self, days: int = 7) -> Dict[str, Any]:
        """
        Run counts by command and exit code over the last N days.
        """
        self.init_db()
        with self.session() as session:
            try:
                cutoff_date = datetime.utcnow() - timedelta(days=days)
                recent = RunLog.created_at >= cutoff_date

                total_runs = session.execute(select(func.count(RunLog.id)).where(recent)).scalar() or 0
                by_command = dict(session.execute(
                    select(RunLog.command, func.count(RunLog.id)).where(recent).group_by(RunLog.command)
                ).all())
                by_exit = session.execute(
                    select(RunLog.exit_code, func.count(RunLog.id)).where(recent).group_by(RunLog.exit_code)
                ).all()
                avg_time = session.execute(select(func.avg(RunLog.wall_time_ms)).where(recent)).scalar()

                return {
                    "total_runs": total_runs,
                    "by_command": by_command,
                    "by_exit_code": {str(code): count for code, count in by_exit},
                    "average_wall_time_ms": round(float(avg_time or 0), 2),
                    "time_period_days": days
                }
            except Exception as e:
                logger.error(f"Failed to get statistics: {e}")
                raise

    def recent_runs(self, limit: int = 10) -> List[Dict[str, Any]]:
        self.init_db()
        with self.session() as session:
            rows = session.execute(
                select(RunLog).order_by(RunLog.id.desc()).limit(limit)
            ).scalars().all()
            return [
                {
                    "id": r.id,
                    "command": r.command,
                    "exit_code": r.exit_code,
                    "seed": r.seed,
                    "wall_time_ms": r.wall_time_ms,
                    "inputs": ", ".join(os.path.basename(p) for p in (r.inputs_json or {})),
                    "created_at": r.created_at
                }
                for r in rows
            ]

    def health_check(self) -> bool:
        """
        Check if the database is reachable.
        """
        try:
            with self.session() as session:
                return session.execute(select(1)).scalar() == 1
        except Exception as e:
            logger.error(f"Database health check failed: {e}")
            return False

    def close(self):
        if self._engine is not None:
            self._engine.dispose()
            self._engine = None
            self._session = None
            logger.debug("Database connections closed")


# Global database service instance
db_service = DatabaseService()
