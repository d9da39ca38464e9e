"""Closed-form value functions and verified simulation for five
infinite-dimensional optimal control models: spatial AK growth,
transboundary pollution, one-hoss-shay vintage capital, age-structured
vintage capital, and time-to-build growth."""

__version__ = "0.1.0"
