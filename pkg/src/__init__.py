"""
METR - message-carrying ring watermarks for diffusion sampling.
"""

__version__ = "0.1.0"
