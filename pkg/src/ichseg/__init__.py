"""Weakly supervised intracranial-hemorrhage segmentation pipeline.

CT windowing, detector-driven box prompts, morphology-based point prompts,
majority-vote segmentation ensembles, and a detection/segmentation
evaluation harness.
"""

from .windowing import CompositeImage, CtSlice, WindowSpec, apply_window, make_composite

__all__ = [
    "CompositeImage",
    "CtSlice",
    "WindowSpec",
    "apply_window",
    "make_composite",
]

__version__ = "0.1.0"
