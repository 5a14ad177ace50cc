"""Build supply chain knowledge graphs from unstructured text with an LLM."""

from .errors import ConfigError, PipelineError, SupplyKGError
from .schema import SchemaConfig, default_schema, load_schema

__version__ = "0.1.0"

__all__ = ["ConfigError", "PipelineError", "SupplyKGError", "SchemaConfig", "default_schema", "load_schema", "__version__"]
