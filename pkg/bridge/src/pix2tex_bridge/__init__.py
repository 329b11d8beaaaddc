from .server import BridgeConfig, serve

__version__ = "0.1.0"
