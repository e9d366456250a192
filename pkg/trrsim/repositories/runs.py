from typing import Any, Dict, Iterable, List, Optional, Tuple
from trrsim.models import Run, RunRecord
from trrsim.repositories.base import BaseRepository


class RunRepository(BaseRepository):
    def __init__(self, db_session=None):
        super().__init__(Run, db_session)

    def add_records(self, run: Run, records: Iterable[Tuple[str, Dict[str, Any]]]) -> int:
        added = [RunRecord(kind=kind, payload=payload) for kind, payload in records]
        run.records.extend(added)
        self.db.flush()
        return len(added)

    def runs(self, verb: Optional[str] = None, preset: Optional[str] = None) -> List[Run]:
        """Oldest first."""
        return self.find(order_by=Run.id, verb=verb, preset=preset)

    def latest(self, verb: Optional[str] = None, preset: Optional[str] = None) -> Optional[Run]:
        found = self.find(order_by=Run.id.desc(), limit=1, verb=verb, preset=preset)
        return found[0] if found else None

    def records_of(self, run_id: int, kind: Optional[str] = None) -> List[RunRecord]:
        query = self.db.query(RunRecord).filter(RunRecord.run_id == run_id)
        if kind:
            query = query.filter(RunRecord.kind == kind)
        return query.order_by(RunRecord.id).all()
