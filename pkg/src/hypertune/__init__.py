"""Black-box hyperparameter tuning: random, grid and GP-based Bayesian search over mixed spaces."""

__version__ = "0.1.0"
