"""Mirror ascent with an augmented-Lagrangian coordinator for generalized Nash equilibria."""

from .engine import Schedule, ScheduleCertificate, auto_delta, run, validate_schedule
from .game_model import (AffineConstraint, Game, GameConstants, PlayerSpec, check_concavity,
                         check_slater, estimate_constants)
from .geometry import ActionSet, project
from .mirror import Regularizer
from .scenarios import ScenarioSpec, builtin, builtin_spec

__all__ = [
    "ActionSet", "AffineConstraint", "Game", "GameConstants", "PlayerSpec", "Regularizer",
    "ScenarioSpec", "Schedule", "ScheduleCertificate", "auto_delta", "builtin", "builtin_spec",
    "check_concavity", "check_slater", "estimate_constants", "project", "run", "validate_schedule",
]

__version__ = "0.1.0"
