"""Trace-driven monitoring and regulation of collaborative PLM workflows."""

__version__ = "0.1.0"
