"""Strategy representations, randomness/exploitation indicators and filtered
behaviour cloning for offline data from two-player zero-sum games."""

__version__ = "0.1.0"
