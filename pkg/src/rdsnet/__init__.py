"""Bayesian prevalence estimation from respondent-driven samples over a latent network."""

__version__ = "0.1.0"
