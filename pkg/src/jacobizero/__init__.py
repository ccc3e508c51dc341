"""Learned pivot selection for the Jacobi eigenvalue method."""

from .game import GameConfig, GameState, Outcome
from .linalg import EigenResult, GivensCoeffs, apply_rotation, givens_coefficients
from .mcts import MCTSAgent, SearchConfig, TreeSearch
from .net import Arch, NetParams, init_params, load_checkpoint, save_checkpoint
from .solvers import Cyclic, MaxElement, brute_force_shortest_path, solve

__version__ = "0.1.0"

__all__ = [
    "Arch", "Cyclic", "EigenResult", "GameConfig", "GameState", "GivensCoeffs", "MCTSAgent",
    "MaxElement", "NetParams", "Outcome", "SearchConfig", "TreeSearch", "apply_rotation",
    "brute_force_shortest_path", "givens_coefficients", "init_params", "load_checkpoint",
    "save_checkpoint", "solve",
]
