from typing import Any, List, Optional, Type
from sqlalchemy.orm import Session
from trrsim.database import SessionLocal


class BaseRepository:
    """Queries over one mapped class on the caller's session.

    Writes only flush; the surrounding DatabaseTransaction commits.
    """

    def __init__(self, model_class: Type, db_session: Optional[Session] = None):
        self.model_class = model_class
        self.db = db_session or SessionLocal()

    def get_by_id(self, id: int) -> Optional[Any]:
        return self.db.get(self.model_class, id)

    def find(self, order_by=None, limit: Optional[int] = None, **filters) -> List[Any]:
        """Rows whose columns equal ``filters``; None-valued filters are ignored."""
        query = self.db.query(self.model_class).filter_by(
            **{k: v for k, v in filters.items() if v is not None}
        )
        if order_by is not None:
            query = query.order_by(order_by)
        if limit:
            query = query.limit(limit)
        return query.all()

    def create(self, **columns) -> Any:
        instance = self.model_class(**columns)
        self.db.add(instance)
        self.db.flush()
        return instance

    def delete(self, id: int) -> bool:
        instance = self.get_by_id(id)
        if instance is None:
            return False
        self.db.delete(instance)
        self.db.flush()
        return True
