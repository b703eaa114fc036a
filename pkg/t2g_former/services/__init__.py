"""T2G-Former run services."""

from .runs import RunService

__all__ = ["RunService"]
