"""VGG16 to HCRW weight exporter."""

from .export import ExportError, conv_entries, export_pretrained
from .manifest import CONV_LAYERS, manifest, total_parameters

__version__ = "0.1.0"

__all__ = [
    "CONV_LAYERS",
    "ExportError",
    "conv_entries",
    "export_pretrained",
    "manifest",
    "total_parameters",
]
