import logging
from functools import lru_cache
from typing import List, Optional

from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker

from app import settings
from .schema import Base, Run

logger = logging.getLogger(__name__)


@lru_cache(maxsize=None)
def _session_factory(database_file: str):
    engine = create_engine(
        f"sqlite:///{database_file}",
        connect_args={
            "check_same_thread": False,
            "timeout": 30
        },
        pool_pre_ping=True,
        echo=False
    )
    Base.metadata.create_all(bind=engine)
    return sessionmaker(autocommit=False, autoflush=False, bind=engine)


def ledger_enabled() -> bool:
    return bool(settings.RUNS_DB)


def get_db():
    """Yield a session on the run ledger configured by DFV2_RUNS_DB."""
    db = _session_factory(settings.RUNS_DB)()
    try:
        yield db
    finally:
        db.close()


def record_run(command: str, numeric_mode: str, version: str, arm: Optional[str] = None,
               seed: Optional[int] = None, wall_seconds: Optional[float] = None,
               headline: Optional[str] = None, manifest_path: Optional[str] = None) -> Optional[int]:
    """Best-effort ledger insert; failures are logged and swallowed."""
    if not ledger_enabled():
        return None
    try:
        db = next(get_db())
        try:
            run = Run(command=command, arm=arm, seed=seed, numeric_mode=numeric_mode, version=version,
                      wall_seconds=wall_seconds, headline=headline, manifest_path=manifest_path)
            db.add(run)
            db.commit()
            return run.id
        finally:
            db.close()
    except Exception as e:
        logger.warning(f"Could not record run in ledger {settings.RUNS_DB}: {e}")
        return None


def recent_runs(limit: int = 20) -> List[Run]:
    if not ledger_enabled():
        return []
    db = next(get_db())
    try:
        return db.query(Run).order_by(Run.created_at.desc(), Run.id.desc()).limit(limit).all()
    finally:
        db.close()
