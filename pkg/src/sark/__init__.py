"""Reference implementation of the Sark USO asset protocol."""

__version__ = "0.1.0"
