"""Single-cell expression toolkit: preprocessing, conditional generation, interpretation and evaluation."""

__version__ = "0.1.0"
