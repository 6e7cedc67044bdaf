"""Deep-belief-network training on an in-process map/shuffle/reduce engine."""

__version__ = "0.1.0"
