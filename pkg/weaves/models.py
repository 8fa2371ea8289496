import logging
import platform
from datetime import datetime
from typing import List, Sequence

from sqlalchemy import Column, DateTime, Float, Integer, String, create_engine, select
from sqlalchemy.exc import SQLAlchemyError
from sqlalchemy.orm import Session, declarative_base

from .errors import WeaveError

logger = logging.getLogger(__name__)

Base = declarative_base()


class TimingRow(Base):
    __tablename__ = 'timing_records'

    id = Column(Integer, primary_key=True, autoincrement=True)
    created_at = Column(DateTime, default=datetime.utcnow, nullable=False)
    model = Column(String(32), nullable=False, index=True)
    n_flows = Column(Integer, nullable=False)
    total_wall_ms = Column(Float, nullable=True)  # null when the model was skipped
    overhead_pct = Column(Float, nullable=True)
    reps = Column(Integer, nullable=False)
    setup_ms = Column(Float, default=0.0)
    host = Column(String(255), nullable=True)

    def __repr__(self):
        return f'<TimingRow {self.model} n={self.n_flows}>'

    def to_dict(self):
        return {
            'id': self.id,
            'created_at': self.created_at.isoformat() if self.created_at else None,
            'model': self.model,
            'n_flows': self.n_flows,
            'total_wall_ms': self.total_wall_ms,
            'overhead_pct': self.overhead_pct,
            'reps': self.reps,
            'setup_ms': self.setup_ms,
            'host': self.host,
        }


class ScaleRow(Base):
    __tablename__ = 'scale_runs'

    id = Column(Integer, primary_key=True, autoincrement=True)
    created_at = Column(DateTime, default=datetime.utcnow, nullable=False)
    n_weaves = Column(Integer, nullable=False, index=True)
    wall_ms = Column(Float, nullable=False)
    digest = Column(String(64), nullable=False)
    variation_pct = Column(Float, nullable=True)
    peak_rss_mb = Column(Float, nullable=True)

    def __repr__(self):
        return f'<ScaleRow n_weaves={self.n_weaves} {self.wall_ms:.1f}ms>'

    def to_dict(self):
        return {
            'id': self.id,
            'created_at': self.created_at.isoformat() if self.created_at else None,
            'n_weaves': self.n_weaves,
            'wall_ms': self.wall_ms,
            'digest': self.digest,
            'variation_pct': self.variation_pct,
            'peak_rss_mb': self.peak_rss_mb,
        }


class ResultsLedger:
    """Benchmark results kept across runs in a SQL database."""

    def __init__(self, url: str):
        self.url = url
        self.engine = create_engine(url)
        Base.metadata.create_all(self.engine)

    def _commit(self, rows) -> int:
        try:
            with Session(self.engine) as session:
                session.add_all(rows)
                session.commit()
        except SQLAlchemyError as e:
            logger.error(f"Failed to store results in {self.url}: {e}")
            raise WeaveError(f"Could not store results: {e}", "ledger")
        logger.info(f"Stored {len(rows)} rows in {self.url}")
        return len(rows)

    def store_timings(self, records: Sequence) -> int:
        host = platform.node()
        rows = [
            TimingRow(
                model=r.model,
                n_flows=r.n_flows,
                total_wall_ms=None if r.skipped else r.total_wall_ms,
                overhead_pct=None if r.skipped else r.overhead_pct,
                reps=r.reps,
                setup_ms=r.setup_ms,
                host=host,
            )
            for r in records
        ]
        return self._commit(rows)

    def store_scale(self, report) -> int:
        rows = [
            ScaleRow(
                n_weaves=report.n_weaves,
                wall_ms=wall,
                digest=digest,
                variation_pct=report.variation_pct,
                peak_rss_mb=report.peak_rss_mb,
            )
            for wall, digest in zip(report.wall_ms, report.digests)
        ]
        return self._commit(rows)

    def recent(self, table: str = 'timing_records', limit: int = 20) -> List[dict]:
        model = {'timing_records': TimingRow, 'scale_runs': ScaleRow}.get(table)
        if model is None:
            raise WeaveError(f"Unknown results table {table!r}", "unknown-table")
        with Session(self.engine) as session:
            rows = session.scalars(select(model).order_by(model.id.desc()).limit(limit)).all()
            return [row.to_dict() for row in rows]
