"""HTTP service exposing generation, training, transfer and benchmarking."""

from .app import app, create_app

__all__ = ["app", "create_app"]
