from abc import ABC
from typing import Callable, Optional, TypeVar
from sqlalchemy.orm import Session
from trrsim.database import DatabaseTransaction

T = TypeVar("T")


class BaseService(ABC):
    """Each public call runs its closure inside one DatabaseTransaction, exposed as ``self.db``."""

    def __init__(self):
        self.db: Optional[Session] = None

    def _execute_with_transaction(self, func: Callable[..., T], *args, **kwargs) -> T:
        with DatabaseTransaction() as db:
            self.db = db
            try:
                return func(*args, **kwargs)
            finally:
                self.db = None
