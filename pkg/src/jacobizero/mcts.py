"""PUCT tree search over pivot choices, guided by a policy-value evaluator."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .game import GameConfig, GameState, Outcome, action_pair, encode_state, step
from .net import CompiledNet, NetParams

Evaluator = Callable[[GameState], tuple[np.ndarray, float]]


@dataclass(frozen=True)
class SearchConfig:
    c_puct: float = 4.0
    n_playouts: int = 560
    temperature: float = 0.0
    temperature_moves: int = 0  # moves played at temperature 1 before switching
    root_noise: tuple[float, float] | None = None  # (dirichlet alpha, mix fraction)
    time_cap_secs: float | None = None
    step_cost: float = 0.0

    def __post_init__(self):
        if self.c_puct < 0:
            raise ValueError("c_puct must be >= 0")
        if self.n_playouts < 1:
            raise ValueError("n_playouts must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


class SearchNode:
    """Edge statistics for every action out of one state."""

    __slots__ = ("state", "terminal", "priors", "visits", "total", "children", "legal", "_offset")

    def __init__(self, state: GameState):
        self.state = state
        self.terminal: Outcome | None = state.terminal()
        self.priors: np.ndarray | None = None
        self.visits: np.ndarray | None = None
        self.total: np.ndarray | None = None
        self.children: dict[int, SearchNode] = {}
        self.legal: np.ndarray | None = None
        self._offset: np.ndarray | None = None  # 0 on legal actions, -inf elsewhere

    @property
    def expanded(self) -> bool:
        return self.priors is not None

    def expand(self, priors: np.ndarray) -> None:
        legal = self.state.legal_mask()
        p = np.where(legal, priors, 0.0)
        s = p.sum()
        # an evaluator may put all its mass off the legal set; fall back to uniform
        self.priors = p / s if s > 0 else legal / legal.sum()
        self.legal = legal
        self._offset = np.where(legal, 0.0, -np.inf)
        self.visits = np.zeros(len(p), dtype=np.int64)
        self.total = np.zeros(len(p))

    def q(self) -> np.ndarray:
        # unvisited edges have total == 0, so dividing by max(N, 1) gives Q = 0 there
        return self.total / np.maximum(self.visits, 1)

    def child(self, action: int) -> "SearchNode":
        node = self.children.get(action)
        if node is None:
            nxt, _ = step(self.state, action)
            node = self.children[action] = SearchNode(nxt)
        return node


def select_child(node: SearchNode, c_puct: float) -> int:
    """argmax over legal actions of Q + c_puct * P / (1 + N); lowest index wins ties."""
    if not node.expanded:
        raise ValueError("cannot select from an unexpanded node")
    score = node.q() + c_puct * node.priors / (1.0 + node.visits) + node._offset
    return int(np.argmax(score))


def backup(path: list[tuple[SearchNode, int]], leaf_value: float, step_cost: float = 0.0) -> None:
    """Add one visit and the leaf value to every traversed edge.

    With ``step_cost > 0`` an edge ``d`` moves above the leaf's parent edge is
    credited ``leaf_value - step_cost * d``, clipped to [-1, 1].
    """
    if not path:
        raise ValueError("empty path")
    last = len(path) - 1
    for k, (node, a) in enumerate(path):
        v = leaf_value - step_cost * (last - k) if step_cost else leaf_value
        node.visits[a] += 1
        node.total[a] += min(1.0, max(-1.0, v))


def policy_from_visits(counts, tau: float) -> np.ndarray:
    """pi_a proportional to N_a^(1/tau); tau == 0 gives a one-hot argmax."""
    c = np.asarray(counts, dtype=np.float64)
    if tau < 0:
        raise ValueError("temperature must be >= 0")
    if c.sum() <= 0:
        raise ValueError("no visits to convert into a policy")
    if tau == 0:
        pi = np.zeros_like(c)
        pi[int(np.argmax(c))] = 1.0
        return pi
    scaled = (c / c.max()) ** (1.0 / tau)
    return scaled / scaled.sum()


def net_evaluator(params: NetParams | CompiledNet) -> Evaluator:
    net = params if isinstance(params, CompiledNet) else CompiledNet(params)

    def evaluate(state: GameState):
        return net.evaluate(encode_state(state), state.legal_mask())

    return evaluate


def uniform_evaluator(state: GameState):
    """Uniform priors and a neutral value; useful as an untrained baseline."""
    legal = state.legal_mask()
    return legal / legal.sum(), 0.0


class TreeSearch:
    """One search tree, owned by one episode, reused across moves."""

    def __init__(self, evaluator: Evaluator, cfg: SearchConfig, rng: np.random.Generator | None = None):
        self.evaluate = evaluator
        self.cfg = cfg
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.root: SearchNode | None = None
        self.evaluations = 0

    def set_root(self, state: GameState) -> None:
        if (
            self.root is None
            or self.root.state.steps_taken != state.steps_taken
            or not np.array_equal(self.root.state.matrix, state.matrix)
        ):
            self.root = SearchNode(state)

    def advance(self, action: int) -> None:
        """Keep the subtree below ``action`` as the next root."""
        if self.root is not None and action in self.root.children:
            self.root = self.root.children[action]
        else:
            self.root = None

    def _leaf_value(self, node: SearchNode) -> float:
        if node.terminal is not None:
            return float(node.terminal.z)
        priors, v = self.evaluate(node.state)
        self.evaluations += 1
        node.expand(priors)
        return float(v)

    def _add_root_noise(self, root: SearchNode) -> None:
        alpha, frac = self.cfg.root_noise
        legal = np.flatnonzero(root.legal)
        noise = self.rng.dirichlet([alpha] * len(legal))
        p = root.priors.copy()
        p[legal] = (1 - frac) * p[legal] + frac * noise
        root.priors = p

    def run(self, state: GameState) -> np.ndarray:
        """Top the root up to ``n_playouts`` visits; return root visit counts."""
        self.set_root(state)
        root = self.root
        if root.terminal is not None:
            raise ValueError("search root is terminal")
        if not root.expanded:
            self._leaf_value(root)
        if self.cfg.root_noise:
            self._add_root_noise(root)
        cfg = self.cfg
        todo = cfg.n_playouts - int(root.visits.sum())
        deadline = None if cfg.time_cap_secs is None else time.monotonic() + cfg.time_cap_secs
        for _ in range(max(0, todo)):
            node = root
            path = []
            while True:
                a = select_child(node, cfg.c_puct)
                path.append((node, a))
                node = node.child(a)
                if node.terminal is not None or not node.expanded:
                    break
            backup(path, self._leaf_value(node), cfg.step_cost)
            if deadline is not None and time.monotonic() > deadline:
                break
        return root.visits.copy()


def search(root_state: GameState, evaluator: Evaluator, cfg: SearchConfig, rng=None) -> np.ndarray:
    """Fresh-tree search from ``root_state``; returns visit counts per flat action."""
    return TreeSearch(evaluator, cfg, rng).run(root_state)


class MCTSAgent:
    """Pivot policy driven by tree search (plugs into :func:`solvers.solve`).

    ``mode="eval"`` plays at ``cfg.temperature`` throughout (0, the default,
    means the most visited action); ``mode="train"`` plays the first
    ``cfg.temperature_moves`` moves at temperature 1. Positive temperatures
    sample from the visit distribution.
    """

    name = "learned"

    def __init__(self, evaluator: Evaluator, cfg: SearchConfig, *, mode: str = "eval",
                 game: GameConfig | None = None, seed: int = 0):
        self.evaluator = evaluator
        self.cfg = cfg
        self.mode = mode
        self.game = game
        self.seed = seed
        self.tree: TreeSearch | None = None
        self.last_visits: np.ndarray | None = None
        self.visits = 0  # solver bookkeeping: evaluator calls

    def start(self, a0, tol, max_steps):
        self.tree = TreeSearch(self.evaluator, self.cfg, np.random.default_rng(self.seed))
        self.tol, self.max_steps = tol, max_steps

    def temperature(self, step_idx: int) -> float:
        if self.mode == "eval":
            return self.cfg.temperature
        return 1.0 if step_idx < self.cfg.temperature_moves else self.cfg.temperature

    def choose(self, a, step_idx):
        state = GameState(np.array(a), step_idx, self.tol, self.max_steps)
        counts = self.tree.run(state)
        self.last_visits = counts
        tau = self.temperature(step_idx)
        pi = policy_from_visits(counts, tau)
        if tau > 0:
            flat = int(self.tree.rng.choice(len(pi), p=pi))
        else:
            flat = int(np.argmax(pi))
        self.visits = self.tree.evaluations
        return action_pair(flat, a.shape[0])

    def observe(self, pivot, a_next):
        n = a_next.shape[0]
        i, j = pivot
        self.tree.advance(i * n - i * (i + 1) // 2 + (j - i - 1))
