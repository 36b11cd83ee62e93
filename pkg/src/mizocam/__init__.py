"""Multi-information estimation with zeroth-order regret minimisation and an in-scene camera controller."""

__version__ = "0.1.0"
