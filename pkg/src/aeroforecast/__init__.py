"""Share-price forecasting testbed.

Feature extraction (technical indicators + fundamental ratios), PCA
dimensionality reduction, and a target-delayed recurrent network trained
by Levenberg-Marquardt, Bayesian-regularized LM, or Moller's scaled
conjugate gradient, wrapped in a seeded experiment harness.
"""

__version__ = "0.1.0"
