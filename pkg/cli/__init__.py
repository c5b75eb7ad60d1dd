"""
Command-line package for ICV Shrink.
"""

from .commands import main
from .config import RunConfig

__all__ = ['main', 'RunConfig']
