import logging
from contextlib import contextmanager
from pathlib import Path

from config import config
from . import db_config
from .db_config import SessionLocal

logger = logging.getLogger(__name__)


def init_ledger(db_path: Path = config.LEDGER_PATH):
    """Binds the session factory to db_path and creates missing tables."""
    from . import models  # noqa: F401  registers the tables on Base

    engine = db_config.bind_engine(db_path)
    db_config.Base.metadata.create_all(bind=engine)
    logger.info("Run ledger ready at %s", db_path)
    return engine


@contextmanager
def get_session():
    """This function provides a session for other modules to use."""
    if db_config.engine is None:
        init_ledger()
    session = SessionLocal()
    logger.debug("Opening new SQLAlchemy session.")
    try:
        yield session
        session.commit()
        logger.debug("Session committed successfully.")
    except Exception:
        session.rollback()
        logger.error("Session rolled back due to exception.", exc_info=True)
        raise
    finally:
        session.close()
        logger.debug("SQLAlchemy session closed.")
