"""Command-line interface: configuration, subcommands and run manifests."""

from .config import ConfigError, PipelineConfig, config_from_dict, load_config
from .main import main
from .manifest import RunManifest, load_manifest

__all__ = ["ConfigError", "PipelineConfig", "config_from_dict", "load_config", "main", "RunManifest",
           "load_manifest"]
