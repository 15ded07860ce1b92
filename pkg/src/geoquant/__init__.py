"""Numerical experiments on collapsing prequantum circle bundles near real polarizations."""

__version__ = "0.1.0"
