"""Greenhouse control: reference world, learned twin simulator, strategy search."""

__version__ = "0.1.0"
