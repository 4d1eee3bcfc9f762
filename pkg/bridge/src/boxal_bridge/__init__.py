"""Pool-record exporter running alongside a torch 3D detector."""

__version__ = "0.1.0"

from .export import ExportConfig, export_pool

__all__ = ["ExportConfig", "export_pool", "__version__"]
