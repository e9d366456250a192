from sqlalchemy import Column, Integer, String, DateTime, ForeignKey, Index, JSON
from sqlalchemy.orm import declarative_base, relationship
from sqlalchemy.sql import func

Base = declarative_base()


class Run(Base):
    __tablename__ = 'runs'

    id = Column(Integer, primary_key=True, autoincrement=True)
    verb = Column(String(32), nullable=False, index=True)
    preset = Column(String(255), index=True)  # preset name or config path
    seed = Column(Integer)
    profile = Column(String(16))
    status = Column(String(16), nullable=False, default='ok')
    summary = Column(JSON)
    created_at = Column(DateTime(timezone=True), server_default=func.now())

    records = relationship("RunRecord", back_populates="run", cascade="all, delete-orphan")

    __table_args__ = (
        Index('idx_run_verb_preset', 'verb', 'preset'),
    )

    def __repr__(self):
        return f"<Run {self.id}: {self.verb} {self.preset}>"


class RunRecord(Base):
    __tablename__ = 'run_records'

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(Integer, ForeignKey('runs.id'), nullable=False, index=True)
    kind = Column(String(64), nullable=False)
    payload = Column(JSON, nullable=False)

    run = relationship("Run", back_populates="records")

    __table_args__ = (
        Index('idx_run_record_kind', 'run_id', 'kind'),
    )

    def __repr__(self):
        return f"<RunRecord run_id={self.run_id} kind={self.kind}>"
