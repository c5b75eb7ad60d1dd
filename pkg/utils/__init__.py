"""
Utils __init__ file for ICV Shrink utilities.
"""

from .archive import RunArchive

__all__ = ['RunArchive']
