"""Offline safe reinforcement learning with a diffusion-regularized Gaussian
policy, pessimistic cost critics and gradient-manipulated safety adaptation."""

__version__ = "0.1.0"
