"""Maximum-likelihood estimation for multivariate generalized Gaussian distributions."""

__version__ = "0.1.0"
