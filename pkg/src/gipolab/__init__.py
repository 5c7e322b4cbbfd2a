"""Replay-heavy policy optimization with Gaussian trust weighting of importance ratios."""

from .surrogate import GIPO, SAPO, NoClip, PPOClip, gaussian_weight, gipo_multiplier

__all__ = ["GIPO", "PPOClip", "SAPO", "NoClip", "gaussian_weight", "gipo_multiplier"]
__version__ = "0.1.0"
