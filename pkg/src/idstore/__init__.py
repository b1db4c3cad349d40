"""Intraday battery storage valuation on continuous electricity markets."""
__version__ = "0.1.0"
