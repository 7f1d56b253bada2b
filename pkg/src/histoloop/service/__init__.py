from .app import create_app, serve
from .config import ServiceConfig

__all__ = ["create_app", "serve", "ServiceConfig"]
