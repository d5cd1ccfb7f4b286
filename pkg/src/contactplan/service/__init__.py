"""Network-facing wrapper: schemas, paced loop, and the HTTP/WS app."""

from .app import create_app
from .loop import SimLoop
from .schemas import PROTOCOL_VERSION

__all__ = ["PROTOCOL_VERSION", "SimLoop", "create_app"]
