"""MaxRL objective lab: truncated maximum-likelihood policy gradients at desk scale."""

__version__ = "0.1.0"
