"""Cavity QED gate simulation with quantized atomic motion."""

__version__ = "0.1.0"
