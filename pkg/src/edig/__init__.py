"""Batch active learning with expert-confidence-weighted sampling.

The package covers the full loop at desk scale: dataset loading and
standardization, from-scratch probabilistic learners, ranked-batch and
confidence-weighted query scoring with cluster diversification, label
oracles (ground truth, simulated expert, noisy, deferred-to-human), a
paired multi-split experiment runner, the accompanying statistics, and a
small HTTP service for live labeling sessions.
"""

__version__ = "0.1.0"
