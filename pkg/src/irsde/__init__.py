"""Mean-reverting SDE image restoration: forward process, exact and learned
scores, reverse SDE/ODE samplers, maximum-likelihood training and oracles."""

__version__ = "0.1.0"

from .sde import DEFAULT_LAMBDA_SQ, PairedSample, SdeConfig, marginal_stats, sample_forward, transition_stats
from .solvers import ExactScore, LearnedScore, optimal_reverse_state, restore, terminal_state
from .denoising import denoise, t_star
from .model import ScoreModel

__all__ = [
    "DEFAULT_LAMBDA_SQ", "PairedSample", "SdeConfig", "marginal_stats", "sample_forward", "transition_stats",
    "ExactScore", "LearnedScore", "optimal_reverse_state", "restore", "terminal_state",
    "denoise", "t_star", "ScoreModel",
]
