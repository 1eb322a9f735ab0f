"""Two-party graph similarity learning with obfuscated message exchange."""

__version__ = "0.1.0"
