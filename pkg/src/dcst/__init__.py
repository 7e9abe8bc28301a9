"""Cross-scale transformer student distilled from a graph teacher, for traffic speed forecasting."""

__version__ = "0.1.0"
