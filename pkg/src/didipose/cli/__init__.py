"""Command-line driver and the stage functions it binds."""
from .config import DEFAULTS, RunConfig, config_hash, load_config
from .main import build_parser, main

__all__ = ["DEFAULTS", "RunConfig", "build_parser", "config_hash", "load_config", "main"]
