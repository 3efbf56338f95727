"""Empirical Bayes shrinkage and optimal local spending rules for noisy policy estimates."""

__version__ = "0.1.0"
