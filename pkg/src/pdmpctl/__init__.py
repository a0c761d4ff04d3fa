"""Average-cost and discounted control of piecewise deterministic Markov processes."""

__version__ = "0.1.0"
