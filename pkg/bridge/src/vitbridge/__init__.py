"""Reference ViT-B16 oracle: protocol server and attention-bundle exporter."""

from .export import export_bundles
from .model import HookedViT
from .server import serve_stdio, serve_tcp

__version__ = "0.1.0"

__all__ = ["HookedViT", "export_bundles", "serve_stdio", "serve_tcp"]
