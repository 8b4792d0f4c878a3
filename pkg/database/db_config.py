import logging
import sqlalchemy as sa
from sqlalchemy.orm import declarative_base, sessionmaker
from datetime import datetime, timezone
from pathlib import Path

from config import config

logger = logging.getLogger(__name__)


# Helper function to get current UTC time
def utcnow():
    return datetime.now(timezone.utc)


# SQLAlchemy setup; the engine is bound lazily so importing never touches disk
Base = declarative_base()
SessionLocal = sessionmaker(autocommit=False, autoflush=False)
engine = None


def bind_engine(db_path: Path = config.LEDGER_PATH):
    """Points SessionLocal at the SQLite ledger file at db_path."""
    global engine
    db_path = Path(db_path)
    db_path.parent.mkdir(parents=True, exist_ok=True)
    if engine is not None:
        engine.dispose()
    engine = sa.create_engine(f"sqlite:///{db_path}")
    SessionLocal.configure(bind=engine)
    logger.debug("SQLAlchemy engine created for: %s", engine.url)
    return engine
