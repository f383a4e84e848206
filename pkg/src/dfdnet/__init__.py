"""Blind face restoration with multi-scale component dictionaries."""
__version__ = "0.1.0"
