"""MCMC over model structures with probability-tree priors."""

__version__ = "0.1.0"
