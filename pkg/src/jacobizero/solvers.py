"""Reference Jacobi eigensolvers and pivot-path oracles."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .linalg import (
    EigenResult,
    MatrixError,
    accumulate_rotation,
    apply_rotation,
    as_symmetric,
    givens_coefficients,
    offdiag_max,
    upper_pairs,
)

DEFAULT_TOL = 1e-5


def pair_count(n: int) -> int:
    return n * (n - 1) // 2


def default_max_steps(n: int) -> int:
    return 20 * pair_count(n)


def effective_tol(a0: np.ndarray, tol: float, mode: str = "absolute") -> float:
    """Absolute threshold for ``tol``; relative mode scales by ``||A0||_F``."""
    if not tol > 0:
        raise MatrixError(f"tolerance must be positive, got {tol}")
    if mode == "absolute":
        return tol
    if mode == "relative":
        scale = float(np.linalg.norm(a0))
        return tol * scale if scale > 0 else tol
    raise ValueError(f"unknown tolerance mode {mode!r}")


@dataclass
class SolvePath:
    pivots: list[tuple[int, int]]
    offdiag_trace: list[float]
    result: EigenResult
    converged: bool
    tol: float
    visits: int = 0  # off-diagonal elements inspected while choosing pivots
    extra: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return len(self.pivots)


class PivotPolicy(Protocol):
    """Chooses the next pivot; ``start`` is called once per solve."""

    name: str

    def start(self, a0: np.ndarray, tol: float, max_steps: int) -> None: ...

    def choose(self, a: np.ndarray, step: int) -> tuple[int, int]: ...

    def observe(self, pivot: tuple[int, int], a_next: np.ndarray) -> None: ...


class MaxElement:
    name = "maxelement"

    def __init__(self) -> None:
        self.visits = 0

    def start(self, a0, tol, max_steps):
        self.visits = 0

    def choose(self, a, step):
        n = a.shape[0]
        self.visits += pair_count(n)
        return offdiag_max(a)[1]

    def observe(self, pivot, a_next):
        pass


def cyclic_next(n: int, cursor: int) -> tuple[tuple[int, int], int]:
    """Pivot at ``cursor`` in row-major upper-triangle order and the next cursor.

    ``cursor`` is a flat pair index; it wraps modulo ``n(n-1)/2``.
    """
    if n < 2:
        raise MatrixError("cyclic order needs n >= 2")
    total = pair_count(n)
    k = cursor % total
    i = 0
    while k >= n - 1 - i:
        k -= n - 1 - i
        i += 1
    return (i, i + 1 + k), (cursor + 1) % total


class Cyclic:
    """Row-major cyclic sweep; pivots already below tolerance are skipped."""

    name = "cyclic"

    def __init__(self) -> None:
        self.cursor = 0
        self.tol = DEFAULT_TOL
        self.visits = 0

    def start(self, a0, tol, max_steps):
        self.cursor = 0
        self.tol = tol
        self.visits = 0

    def choose(self, a, step):
        n = a.shape[0]
        for _ in range(pair_count(n)):
            (i, j), self.cursor = cyclic_next(n, self.cursor)
            self.visits += 1
            if abs(a[i, j]) >= self.tol:
                return i, j
        raise RuntimeError("cyclic sweep found no pivot above tolerance")

    def observe(self, pivot, a_next):
        pass


def make_policy(strategy) -> PivotPolicy:
    if isinstance(strategy, str):
        key = strategy.lower().replace("_", "").replace("-", "")
        if key == "maxelement":
            return MaxElement()
        if key == "cyclic":
            return Cyclic()
        if key == "learned":
            raise ValueError("the learned strategy needs a trained agent, not a name")
        raise ValueError(f"unknown strategy {strategy!r}")
    return strategy


def solve(
    a,
    strategy="maxelement",
    tol: float = DEFAULT_TOL,
    max_steps: int | None = None,
    *,
    tol_mode: str = "absolute",
) -> SolvePath:
    """Jacobi-diagonalize ``a`` choosing pivots with ``strategy``.

    ``strategy`` is ``"maxelement"``, ``"cyclic"`` or any object following
    :class:`PivotPolicy` (e.g. a trained agent). Running out of steps is
    reported through ``converged=False``, not raised.
    """
    a = as_symmetric(a)
    n = a.shape[0]
    if n < 2:
        raise MatrixError("solve needs n >= 2")
    if max_steps is None:
        max_steps = default_max_steps(n)
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    thr = effective_tol(a, tol, tol_mode)
    policy = make_policy(strategy)
    policy.start(a, thr, max_steps)

    u = np.eye(n)
    pivots: list[tuple[int, int]] = []
    trace: list[float] = []
    cur = a
    converged = offdiag_max(cur)[0] < thr
    while not converged and len(pivots) < max_steps:
        i, j = policy.choose(cur, len(pivots))
        if abs(cur[i, j]) < thr:
            raise RuntimeError(f"{policy.name} chose pivot ({i}, {j}) below tolerance")
        g = givens_coefficients(cur, i, j)
        cur = apply_rotation(cur, g)
        u = accumulate_rotation(u, g)
        pivots.append((i, j))
        m = offdiag_max(cur)[0]
        trace.append(m)
        converged = m < thr
        policy.observe((i, j), cur)

    result = EigenResult(np.diag(cur).copy(), u, len(pivots))
    return SolvePath(pivots, trace, result, converged, thr, visits=getattr(policy, "visits", 0))


class SearchBudgetError(RuntimeError):
    pass


def brute_force_shortest_path(
    a,
    tol: float = DEFAULT_TOL,
    depth_limit: int = 8,
    *,
    node_budget: int = 2_000_000,
) -> tuple[int | None, SolvePath | None]:
    """Exhaustive breadth-first search for the shortest legal pivot sequence.

    Only pivots with ``|a_ij| >= tol`` are expanded (the game's legal moves).
    Returns ``(None, None)`` when no sequence of at most ``depth_limit`` steps
    converges. Raises :class:`SearchBudgetError` once more than
    ``node_budget`` states would be generated.
    """
    a = as_symmetric(a)
    n = a.shape[0]
    if n < 2:
        raise MatrixError("search needs n >= 2")
    iu, ju = upper_pairs(n)
    if offdiag_max(a)[0] < tol:
        return 0, solve(a, "maxelement", tol, 1)

    frontier: list[tuple[np.ndarray, tuple]] = [(a, ())]
    generated = 0
    for depth in range(1, depth_limit + 1):
        nxt = []
        for mat, seq in frontier:
            legal = np.flatnonzero(np.abs(mat[iu, ju]) >= tol)
            generated += len(legal)
            if generated > node_budget:
                raise SearchBudgetError(
                    f"brute-force search exceeded {node_budget} nodes at depth {depth}"
                )
            for k in legal:
                p = (int(iu[k]), int(ju[k]))
                child = apply_rotation(mat, givens_coefficients(mat, *p))
                path = seq + (p,)
                if offdiag_max(child)[0] < tol:
                    return depth, replay(a, list(path), tol)
                nxt.append((child, path))
        frontier = nxt
    return None, None


class _Replay:
    name = "replay"

    def __init__(self, pivots):
        self.pivots = list(pivots)

    def start(self, a0, tol, max_steps):
        pass

    def choose(self, a, step):
        return self.pivots[step]

    def observe(self, pivot, a_next):
        pass


def replay(a, pivots: list[tuple[int, int]], tol: float = DEFAULT_TOL) -> SolvePath:
    """Apply a fixed pivot sequence (stopping early if it converges)."""
    return solve(a, _Replay(pivots), tol, max(1, len(pivots)))


# eigenvalue oracles ---------------------------------------------------------


def closed_form_eigenvalues(a) -> np.ndarray:
    """Sorted eigenvalues of a symmetric matrix of order <= 3 from its
    characteristic polynomial (trigonometric cubic roots, Newton-polished)."""
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    if n == 1:
        return np.array([a[0, 0]])
    if n == 2:
        m = 0.5 * (a[0, 0] + a[1, 1])
        r = math.hypot(0.5 * (a[0, 0] - a[1, 1]), a[0, 1])
        return np.array([m - r, m + r])
    if n != 3:
        raise ValueError("closed-form oracle only covers n <= 3")
    p1 = a[0, 1] ** 2 + a[0, 2] ** 2 + a[1, 2] ** 2
    q = (a[0, 0] + a[1, 1] + a[2, 2]) / 3.0
    if p1 == 0.0:
        return np.sort(np.diag(a).copy())
    p2 = (a[0, 0] - q) ** 2 + (a[1, 1] - q) ** 2 + (a[2, 2] - q) ** 2 + 2.0 * p1
    p = math.sqrt(p2 / 6.0)
    b = (a - q * np.eye(3)) / p
    r = float(np.clip(_det3(b) / 2.0, -1.0, 1.0))
    phi = math.acos(r) / 3.0
    e1 = q + 2.0 * p * math.cos(phi)
    e3 = q + 2.0 * p * math.cos(phi + 2.0 * math.pi / 3.0)
    e2 = 3.0 * q - e1 - e3
    # characteristic polynomial  l^3 - c2 l^2 + c1 l - c0
    c2 = a[0, 0] + a[1, 1] + a[2, 2]
    c1 = (
        a[0, 0] * a[1, 1] + a[0, 0] * a[2, 2] + a[1, 1] * a[2, 2]
        - a[0, 1] ** 2 - a[0, 2] ** 2 - a[1, 2] ** 2
    )
    c0 = _det3(a)
    roots = []
    for lam in (e3, e2, e1):
        for _ in range(3):
            f = ((lam - c2) * lam + c1) * lam - c0
            df = (3.0 * lam - 2.0 * c2) * lam + c1
            if df == 0.0:
                break
            step = f / df
            # Newton is only trusted for small corrections near simple roots
            if abs(step) > 1e-6 * max(1.0, p):
                break
            lam -= step
        roots.append(lam)
    return np.sort(np.array(roots))


def _det3(m) -> float:
    return float(
        m[0, 0] * (m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
        - m[0, 1] * (m[1, 0] * m[2, 2] - m[1, 2] * m[2, 0])
        + m[0, 2] * (m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0])
    )


def reference_eigenvalues(a) -> np.ndarray:
    """Sorted eigenvalues from an oracle independent of the strategy under test.

    Closed form for n <= 3; beyond that a long MaxElement run at tol 1e-12
    (a self-consistency check rather than a truly independent one).
    """
    a = as_symmetric(a)
    if a.shape[0] <= 3:
        return closed_form_eigenvalues(a)
    path = solve(a, "maxelement", tol=1e-12, max_steps=200 * pair_count(a.shape[0]))
    return np.sort(path.result.eigenvalues)
