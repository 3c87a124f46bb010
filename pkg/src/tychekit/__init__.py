"""Stochastic in-context segmentation: a set-interaction network that
returns K plausible label maps for a target given a context of examples,
an in-context test-time augmentation wrapper for deterministic models,
synthetic multi-rater data and the matching metrics."""

from .model import ModelConfig, TycheNet, count_parameters, make_noise

__version__ = "0.1.0"

__all__ = ["ModelConfig", "TycheNet", "count_parameters", "make_noise", "__version__"]
