"""Oblivious transfer built on Hardy's nonlocality test, as a runnable simulation."""

__version__ = "0.1.0"
