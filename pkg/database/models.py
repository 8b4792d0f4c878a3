"""
ORM model for the sweep run ledger. Each scenario of a sweep gets one
SweepRun row that moves through the RunState values.
"""

import logging
import enum

import ulid
from sqlalchemy import Column, DateTime, Enum, Integer, String, Text

from .db_config import Base, utcnow

logger = logging.getLogger(__name__)


# lock in the available states for a scenario run
class RunState(enum.Enum):
    pending = "pending"
    running = "running"
    success = "success"
    failed = "failed"


logger.debug("RunState enum defined.")


class SweepRun(Base):
    __tablename__ = "sweep_run"

    # === make primary key ===
    id = Column(Integer, primary_key=True, index=True)
    run_ulid = Column(String, unique=True, default=lambda: str(ulid.ulid()))

    # === scenario ===
    scenario_name = Column(String, nullable=False)
    kind = Column(String, nullable=False)
    config_path = Column(String)
    output_dir = Column(String)

    # === outcome ===
    state = Column(Enum(RunState), default=RunState.pending, nullable=False)
    artifact_count = Column(Integer, default=0)
    last_error = Column(Text)

    # === Timestamps ===
    started_at = Column(DateTime(timezone=True))
    finished_at = Column(DateTime(timezone=True))
    created_at = Column(DateTime(timezone=True), default=utcnow)

    def __repr__(self):
        return f"<SweepRun {self.scenario_name} ({self.kind}) {self.state.value}>"


logger.debug("SweepRun ORM model defined.")
