"""Structured self-supervised learning: encoder, MPNN relational head, NWJ objective, mask interpretation."""

from ._core import (
    Model,
    gaussian_mi,
    gaussian_nwj_estimate,
    linear_probe,
    nwj_exact,
    nwj_optimal_critic,
    pairwise_mi,
    synth_shapes,
    total_correlation,
    train,
)

__all__ = [
    "Model",
    "gaussian_mi",
    "gaussian_nwj_estimate",
    "linear_probe",
    "nwj_exact",
    "nwj_optimal_critic",
    "pairwise_mi",
    "synth_shapes",
    "total_correlation",
    "train",
]
