"""lateconsensus CLI package."""

from lateconsensus.cli.main import app

__all__ = ["app"]
