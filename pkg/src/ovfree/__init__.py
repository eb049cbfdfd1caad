"""Operator-valued free probability toolkit over matrix base algebras."""

__version__ = "0.1.0"
