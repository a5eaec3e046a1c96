"""Services package: artifact cache and run history."""

from .cache_service import cache_service
from .db_service import db_service

__all__ = ["cache_service", "db_service"]
