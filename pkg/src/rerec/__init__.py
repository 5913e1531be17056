"""Offline RL recommendation lab with a diffusion reward world model.

Components: a conditional DDPM over rewards (mean and sample-variance
beliefs), k-gram behavior-policy entropy penalties blended by a decaying
weight, an interactive quit-rule simulator, and a one-step A2C learner.
"""
from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"
__all__ = ["KERNEL_BACKEND", "__version__"]
