"""FastAPI service wrapping the optimization pipeline."""

from .app import create_app

__all__ = ["create_app"]
