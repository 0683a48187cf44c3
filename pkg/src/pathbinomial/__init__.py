"""Binomial option pricing with natural-world upturn probabilities,
path-dependent (CSY) stock dynamics and informed-trader pricing."""

__version__ = "0.1.0"
