from datetime import datetime

from sqlalchemy import JSON, TIMESTAMP, BigInteger, Column, Float, Index, Integer, String, text
from sqlalchemy.orm import declarative_base

Base = declarative_base()


class RunLog(Base):
    """
    One CLI run: the command, hashed inputs and the full JSON report.
    JSON columns keep the report queryable without a fixed schema.
    """
    __tablename__ = "run_logs"

    id = Column(BigInteger().with_variant(Integer, "sqlite"), primary_key=True, autoincrement=True)

    command = Column(String(50), nullable=False, index=True)  # check, quotient, classify, ...
    inputs_json = Column(JSON, nullable=False)  # path -> sha256
    report_json = Column(JSON, nullable=False)

    exit_code = Column(Integer, nullable=False)
    seed = Column(Integer, nullable=True)
    wall_time_ms = Column(Float, nullable=True)

    created_at = Column(TIMESTAMP(timezone=True), default=datetime.utcnow,
                        server_default=text("CURRENT_TIMESTAMP"), index=True)

    __table_args__ = (
        Index("idx_command_exit", "command", "exit_code"),
    )
