"""The pivot-selection game played on a symmetric matrix.

A single agent repeatedly picks an above-tolerance upper-triangle entry and
applies the Jacobi rotation that annihilates it. The episode is won once every
off-diagonal entry is below tolerance and lost when the step budget runs out.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .linalg import apply_rotation, as_symmetric, givens_coefficients, upper_pairs
from .solvers import DEFAULT_TOL, pair_count


class IllegalMove(ValueError):
    pass


class TerminalKind(enum.Enum):
    DIAGONALIZED = "diagonalized"
    BUDGET_EXHAUSTED = "budget_exhausted"


@dataclass(frozen=True)
class Outcome:
    z: int
    kind: TerminalKind

    @classmethod
    def win(cls) -> "Outcome":
        return cls(1, TerminalKind.DIAGONALIZED)

    @classmethod
    def loss(cls) -> "Outcome":
        return cls(-1, TerminalKind.BUDGET_EXHAUSTED)


@dataclass(frozen=True)
class PivotAction:
    i: int
    j: int
    flat: int

    @classmethod
    def from_pair(cls, i: int, j: int, n: int) -> "PivotAction":
        return cls(i, j, action_index(i, j, n))

    @classmethod
    def from_flat(cls, flat: int, n: int) -> "PivotAction":
        i, j = action_pair(flat, n)
        return cls(i, j, flat)


def action_index(i: int, j: int, n: int) -> int:
    if not (0 <= i < j < n):
        raise IndexError(f"({i}, {j}) is not an upper-triangle pair for order {n}")
    return i * n - i * (i + 1) // 2 + (j - i - 1)


def action_pair(flat: int, n: int) -> tuple[int, int]:
    if not (0 <= flat < pair_count(n)):
        raise IndexError(f"action {flat} out of range for order {n}")
    i = 0
    k = flat
    while k >= n - 1 - i:
        k -= n - 1 - i
        i += 1
    return i, i + 1 + k


@dataclass(frozen=True)
class GameConfig:
    """Rules of one episode.

    ``step_cost`` shapes the training value target and the search backup:
    a won episode is worth ``1 - step_cost * (moves still to play)``, clipped
    to [-1, 1]. Zero gives the plain +1/-1 terminal outcome.
    """

    tol: float = DEFAULT_TOL
    max_steps: int = 30
    step_cost: float = 0.0


@dataclass(frozen=True, eq=False)
class GameState:
    matrix: np.ndarray
    steps_taken: int = 0
    tol: float = DEFAULT_TOL
    max_steps: int = 30

    def __post_init__(self):
        if self.steps_taken > self.max_steps:
            raise ValueError("steps_taken exceeds max_steps")
        self.matrix.setflags(write=False)
        iu, ju = upper_pairs(self.matrix.shape[0])
        object.__setattr__(self, "_offdiag", np.abs(self.matrix[iu, ju]))

    @classmethod
    def initial(cls, a, cfg: GameConfig | None = None) -> "GameState":
        cfg = cfg or GameConfig()
        return cls(as_symmetric(a), 0, cfg.tol, cfg.max_steps)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def legal_mask(self) -> np.ndarray:
        return self._offdiag >= self.tol

    def is_diagonalized(self) -> bool:
        return self.n < 2 or float(self._offdiag.max()) < self.tol

    def terminal(self) -> Outcome | None:
        """Outcome if this state ends the episode, else None."""
        if self.is_diagonalized():
            return Outcome.win()
        if self.steps_taken >= self.max_steps:
            return Outcome.loss()
        return None


def legal_actions(s: GameState) -> list[PivotAction]:
    n = s.n
    return [PivotAction.from_flat(int(k), n) for k in np.flatnonzero(s.legal_mask())]


def step(s: GameState, a: PivotAction | int | tuple[int, int]) -> tuple[GameState, Outcome | None]:
    n = s.n
    if isinstance(a, PivotAction):
        i, j = a.i, a.j
    elif isinstance(a, tuple):
        i, j = a
    else:
        i, j = action_pair(int(a), n)
    if not (0 <= i < j < n):
        raise IllegalMove(f"({i}, {j}) is not an upper-triangle pivot")
    if abs(s.matrix[i, j]) < s.tol:
        raise IllegalMove(f"pivot ({i}, {j}) is already below tolerance")
    if s.steps_taken >= s.max_steps:
        raise IllegalMove("step budget already exhausted")
    m = apply_rotation(s.matrix, givens_coefficients(s.matrix, i, j))
    nxt = GameState(m, s.steps_taken + 1, s.tol, s.max_steps)
    return nxt, nxt.terminal()


def encode_state(s: GameState | np.ndarray) -> np.ndarray:
    """1 x n x n tensor of matrix values scaled by the largest magnitude."""
    m = s.matrix if isinstance(s, GameState) else np.asarray(s, dtype=np.float64)
    scale = max(1e-30, float(np.max(np.abs(m))))
    return (m / scale)[None, :, :]


def value_target(outcome: Outcome, remaining: int, step_cost: float) -> float:
    """Training value for a state ``remaining`` moves before the end of an episode."""
    if outcome.z < 0:
        return -1.0
    return float(np.clip(1.0 - step_cost * remaining, -1.0, 1.0))
