"""Dependent operational-risk model: copula-linked risk profiles, compound
annual losses, and slice-sampler Bayesian estimation of frequency
characteristics from loss counts and expert opinions."""

__version__ = "0.1.0"
