"""Hierarchical motion planning for cooperative transport by mobile manipulators."""

__version__ = "0.1.0"
