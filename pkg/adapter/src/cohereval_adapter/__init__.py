"""Wire-protocol inference service exposing pretrained language models."""

__version__ = "0.1.0"
