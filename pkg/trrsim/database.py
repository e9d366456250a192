from sqlalchemy import create_engine, text
from sqlalchemy.orm import sessionmaker, scoped_session
from sqlalchemy.pool import StaticPool
import logging
from trrsim.models import Base

logger = logging.getLogger(__name__)

# In-memory until a run asks for a file-backed store
DATABASE_URL = 'sqlite://'
_MEMORY_URLS = ('sqlite://', 'sqlite:///:memory:')


def _make_engine(url: str):
    if url in _MEMORY_URLS:
        # a memory database lives on one shared connection
        return create_engine(url, connect_args={'check_same_thread': False}, poolclass=StaticPool)
    return create_engine(url, pool_pre_ping=True)


engine = _make_engine(DATABASE_URL)

SessionLocal = scoped_session(sessionmaker(
    autocommit=False,
    autoflush=False,
    bind=engine
))


def create_tables():
    Base.metadata.create_all(bind=engine)
    logger.info(f"Result tables ready on {engine.url}")


def configure_database(url: str):
    """Point the session factory at ``url`` and create the tables there."""
    global engine
    SessionLocal.remove()
    engine.dispose()
    engine = _make_engine(url)
    SessionLocal.configure(bind=engine)
    create_tables()
    return engine


def get_db():
    """Read-only session: yielded, then closed without a commit."""
    db = SessionLocal()
    try:
        yield db
    finally:
        db.close()


class DatabaseTransaction:
    """One session per block: commit on success, rollback on any exception."""

    def __enter__(self):
        self.db = SessionLocal()
        return self.db

    def __exit__(self, exc_type, exc_val, exc_tb):
        try:
            if exc_type is None:
                self.db.commit()
            else:
                logger.warning(f"Rolling back results transaction: {exc_type.__name__}: {exc_val}")
                self.db.rollback()
        finally:
            self.db.close()


def test_connection() -> bool:
    """True when the results store answers a trivial query."""
    try:
        for db in get_db():
            db.execute(text("SELECT 1")).scalar_one()
    except Exception as e:
        logger.error(f"Results store unreachable at {engine.url}: {e}")
        return False
    return True


test_connection.__test__ = False
