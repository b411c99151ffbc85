"""Heteroskedastic Gaussian process forecasts of seasonal disease incidence.

Also provides a negative-binomial GLM comparator and the scoring harness
used to evaluate both.
"""

__version__ = "0.1.0"
