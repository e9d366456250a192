from typing import Any, Dict, Iterable, List, Optional
from trrsim.services.base import BaseService
from trrsim.repositories.runs import RunRepository
import logging

logger = logging.getLogger(__name__)


class RunService(BaseService):
    """Records finished CLI runs and their result records."""

    def record_run(self, verb: str, preset: Optional[str], seed: Optional[int], profile: str,
                   status: str, summary: Dict[str, Any], records: Iterable[Dict[str, Any]] = ()) -> int:
        def _record():
            repo = RunRepository(self.db)
            run = repo.create(verb=verb, preset=preset, seed=seed, profile=profile,
                              status=status, summary=summary)
            n = repo.add_records(run, ((r.get("kind", verb), r) for r in records))
            logger.info(f"Stored run {run.id} ({verb}, {preset}) with {n} records")
            return run.id

        return self._execute_with_transaction(_record)

    def get_run(self, run_id: int) -> Optional[Dict[str, Any]]:
        def _get():
            repo = RunRepository(self.db)
            run = repo.get_by_id(run_id)
            if not run:
                return None
            return {
                'id': run.id,
                'verb': run.verb,
                'preset': run.preset,
                'seed': run.seed,
                'profile': run.profile,
                'status': run.status,
                'summary': run.summary,
                'records': [r.payload for r in repo.records_of(run.id)],
            }

        return self._execute_with_transaction(_get)

    def list_runs(self, verb: Optional[str] = None) -> List[Dict[str, Any]]:
        def _list():
            repo = RunRepository(self.db)
            return [
                {'id': r.id, 'verb': r.verb, 'preset': r.preset, 'status': r.status}
                for r in repo.runs(verb)
            ]

        return self._execute_with_transaction(_list)
