"""Sidecar model server for the decoding engine's oracle wire protocol."""

from .export import export_table, read_record
from .model import StubModel, load_backend
from .protocol import fingerprint
from .server import BridgeServer, ServerConfig

__version__ = "0.1.0"
