"""Two-phase Bayesian dictionary learning for identifying active source regions from MEG data."""

__version__ = "0.1.0"
