"""Mixed-frequency quantile regression with Almon lag structure and adaptive non-crossing constraints."""

__version__ = "0.1.0"
