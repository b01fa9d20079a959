"""Instruction-conditioned bird's-eye-view target prediction on synthetic indoor scenes."""

__version__ = "0.1.0"
