"""Virus-vs-bacteria blood panel classification toolkit."""

__version__ = "0.1.0"
