"""Self-play episode generation and the network training loop."""

from __future__ import annotations

import csv
import json
import logging
import math
import threading
import time
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .game import GameConfig, GameState, Outcome, action_pair, encode_state, step, value_target
from .linalg import EigenResult, accumulate_rotation, as_symmetric, givens_coefficients, upper_pairs
from .mcts import SearchConfig, TreeSearch, net_evaluator, policy_from_visits
from .net import (
    Arch,
    NetParams,
    Optimizer,
    TrainBatch,
    grad,
    init_params,
    load_checkpoint,
    loss,
    save_checkpoint,
)
from .solvers import SolvePath

log = logging.getLogger(__name__)

LOG_COLUMNS = ["iteration", "episodes", "mean_len", "mean_loss", "win_rate", "wall_seconds"]


@dataclass
class TrainingExample:
    state: np.ndarray  # (1, n, n) encoded
    mask: np.ndarray  # (N,) legal actions of that state
    pi: np.ndarray  # (N,) search policy
    z: int  # episode outcome, +1 / -1
    value: float  # regression target (z, or the step-cost shaped value)
    episode: int
    step: int


class ReplayBuffer:
    """Bounded FIFO of training examples; appends are whole episodes."""

    def __init__(self, capacity: int = 10_000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: deque[TrainingExample] = deque(maxlen=capacity)
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(list(self._items))

    def add_episode(self, examples: list[TrainingExample]) -> None:
        with self._lock:
            self._items.extend(examples)

    def as_batch(self, idx=None) -> TrainBatch:
        items = list(self._items) if idx is None else [self._items[i] for i in idx]
        return TrainBatch(
            np.stack([e.state for e in items]),
            np.stack([e.mask for e in items]),
            np.stack([e.pi for e in items]),
            np.array([e.value for e in items]),
        )

    def to_arrays(self) -> dict[str, np.ndarray]:
        items = list(self._items)
        if not items:
            return {"buf_capacity": np.array(self.capacity)}
        return {
            "buf_capacity": np.array(self.capacity),
            "buf_state": np.stack([e.state for e in items]),
            "buf_mask": np.stack([e.mask for e in items]),
            "buf_pi": np.stack([e.pi for e in items]),
            "buf_z": np.array([e.z for e in items]),
            "buf_value": np.array([e.value for e in items]),
            "buf_episode": np.array([e.episode for e in items]),
            "buf_step": np.array([e.step for e in items]),
        }

    @classmethod
    def from_arrays(cls, arrays) -> "ReplayBuffer":
        buf = cls(int(arrays["buf_capacity"]))
        if "buf_state" in arrays:
            for k in range(len(arrays["buf_z"])):
                buf._items.append(
                    TrainingExample(
                        np.array(arrays["buf_state"][k]), np.array(arrays["buf_mask"][k]),
                        np.array(arrays["buf_pi"][k]), int(arrays["buf_z"][k]),
                        float(arrays["buf_value"][k]), int(arrays["buf_episode"][k]),
                        int(arrays["buf_step"][k]),
                    )
                )
        return buf


def run_episode(
    initial,
    evaluator,
    cfg: SearchConfig,
    game: GameConfig | None = None,
    *,
    mode: str = "train",
    seed: int = 0,
    episode_id: int = 0,
) -> tuple[list[TrainingExample], Outcome, SolvePath]:
    """Play one game from ``initial`` with tree search choosing every move.

    ``evaluator`` is a callable state -> (priors, value) or a parameter set.
    In ``train`` mode moves are sampled from the visit distribution (at
    temperature 1 for the first ``cfg.temperature_moves`` moves, then at
    ``cfg.temperature``); in ``eval`` mode the most visited move is played.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    game = game or GameConfig()
    if isinstance(evaluator, NetParams):
        evaluator = net_evaluator(evaluator)
    if game.step_cost != cfg.step_cost:
        cfg = replace(cfg, step_cost=game.step_cost)
    a0 = as_symmetric(initial)
    state = GameState.initial(a0, game)
    if state.terminal() is not None:
        raise ValueError("episode start state is already terminal")
    rng = np.random.default_rng(seed)
    tree = TreeSearch(evaluator, cfg, rng)
    n = state.n
    u = np.eye(n)
    records = []
    pivots, trace = [], []
    outcome = None
    while outcome is None:
        counts = tree.run(state)
        pi = policy_from_visits(counts, 1.0)
        records.append((encode_state(state), state.legal_mask(), pi))
        t = len(pivots)
        if mode == "train":
            tau = 1.0 if t < cfg.temperature_moves else cfg.temperature
            probs = policy_from_visits(counts, tau)
            flat = int(rng.choice(len(probs), p=probs)) if tau > 0 else int(np.argmax(probs))
        else:
            flat = int(np.argmax(policy_from_visits(counts, cfg.temperature)))
        i, j = action_pair(flat, n)
        u = accumulate_rotation(u, givens_coefficients(state.matrix, i, j))
        state, outcome = step(state, flat)
        tree.advance(flat)
        pivots.append((i, j))
        iu, ju = upper_pairs(n)
        trace.append(float(np.max(np.abs(state.matrix[iu, ju]))))

    total = len(pivots)
    examples = [
        TrainingExample(s, m, p, outcome.z, value_target(outcome, total - t, game.step_cost), episode_id, t)
        for t, (s, m, p) in enumerate(records)
    ]
    result = EigenResult(np.diag(state.matrix).copy(), u, total)
    path = SolvePath(pivots, trace, result, outcome.z > 0, game.tol, visits=tree.evaluations)
    return examples, outcome, path


@dataclass
class TrainHyper:
    batch_size: int = 64
    epochs: int = 50
    learning_rate: float = 1e-3
    c_reg: float = 1e-4
    optimizer: str = "adam"
    holdout_fraction: float = 0.1
    early_stop_tol: float = 0.05  # allowed relative rise of held-out loss


@dataclass
class TrainReport:
    iteration: int
    episodes: int
    mean_len: float
    mean_loss: float
    win_rate: float
    checkpoint: str = ""
    wall_seconds: float = 0.0
    param_change: float = 0.0
    epochs_run: int = 0


def train_iteration(
    buffer: ReplayBuffer,
    params: NetParams,
    hyper: TrainHyper,
    optimizer: Optimizer | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[NetParams, TrainReport]:
    """Run ``hyper.epochs`` passes of minibatch descent over the buffer.

    A held-back slice of the buffer is scored after every epoch; training
    stops and keeps the best parameters once that loss rises more than
    ``early_stop_tol`` (relative) above its best value.
    """
    if len(buffer) == 0:
        raise ValueError("cannot train on an empty replay buffer")
    rng = rng if rng is not None else np.random.default_rng(0)
    if optimizer is None:
        optimizer = Optimizer(hyper.optimizer, hyper.learning_rate)
    m = len(buffer)
    order = rng.permutation(m)
    n_hold = int(hyper.holdout_fraction * m) if m >= 20 else 0
    hold_idx, train_idx = order[:n_hold], order[n_hold:]
    hold = buffer.as_batch(hold_idx) if n_hold else None
    full = buffer.as_batch()

    best = params
    best_hold = loss(params, hold, hyper.c_reg) if hold is not None else math.inf
    losses = []
    epochs_run = 0
    for _ in range(hyper.epochs):
        perm = rng.permutation(train_idx)
        for s in range(0, len(perm), hyper.batch_size):
            idx = perm[s:s + hyper.batch_size]
            mb = TrainBatch(full.states[idx], full.masks[idx], full.target_policies[idx], full.target_values[idx])
            g = grad(params, mb, hyper.c_reg)
            params = optimizer.step(params, g)
        epochs_run += 1
        if hold is not None:
            h = loss(params, hold, hyper.c_reg)
            if h <= best_hold:
                best, best_hold = params, h
            elif h > best_hold * (1.0 + hyper.early_stop_tol) + 1e-12:
                params = best
                break
        else:
            best = params
    params = best if hold is not None else params
    losses.append(loss(params, full, hyper.c_reg))
    report = TrainReport(0, 0, 0.0, float(np.mean(losses)), 0.0, epochs_run=epochs_run)
    return params, report


@dataclass
class LoopConfig:
    n: int = 5
    channels: tuple[int, int, int] = (32, 64, 128)
    value_hidden: int = 64
    seed: int = 0
    max_iterations: int = 20
    episodes_per_iteration: int = 50
    buffer_capacity: int = 10_000
    min_param_change: float = 1e-4
    workers: int = 1
    search: SearchConfig = field(default_factory=lambda: SearchConfig(temperature_moves=2))
    game: GameConfig = field(default_factory=GameConfig)
    hyper: TrainHyper = field(default_factory=TrainHyper)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        if self.search.root_noise is not None:
            d["search"]["root_noise"] = list(self.search.root_noise)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LoopConfig":
        d = dict(d)
        search = dict(d.pop("search"))
        if search.get("root_noise") is not None:
            search["root_noise"] = tuple(search["root_noise"])
        return cls(
            channels=tuple(d.pop("channels")),
            search=SearchConfig(**search),
            game=GameConfig(**d.pop("game")),
            hyper=TrainHyper(**d.pop("hyper")),
            **d,
        )


def dataset_label(dataset) -> str:
    """Short tag naming a dataset's perturbation level, used to label bench grids."""
    manifest = getattr(dataset, "manifest", None) or {}
    cfg = manifest.get("config") or {}
    if "eps" in cfg:
        return f"eps={cfg['eps']:g}"
    return manifest.get("label", "unlabelled")


def _episode_seed(seed: int, iteration: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, iteration, k, 1]).generate_state(1)[0])


def _play_job(job):
    params, matrix, search, game, seed, eid = job
    examples, outcome, path = run_episode(matrix, params, search, game, mode="train", seed=seed, episode_id=eid)
    return examples, outcome, path.steps


def _schedule(cfg: LoopConfig, n_matrices: int, iteration: int) -> list[int]:
    """Dataset indices played in ``iteration``: consecutive slices of seeded shuffles."""
    per = cfg.episodes_per_iteration
    out = []
    start = (iteration - 1) * per
    for k in range(start, start + per):
        epoch, pos = divmod(k, n_matrices)
        perm = np.random.default_rng([cfg.seed, epoch, 7]).permutation(n_matrices)
        out.append(int(perm[pos]))
    return out


class Trainer:
    """Owns the parameters, optimizer and buffer of one run directory.

    Files in ``out_dir``: ``manifest.json`` (configuration, seeds, dataset
    digest), ``train_log.csv``, ``ckpt_XXXX.pvn`` per iteration,
    ``latest.pvn`` and ``trainer_state.npz`` (optimizer + buffer + iteration)
    for resuming.
    """

    def __init__(self, dataset, cfg: LoopConfig, out_dir, *, resume: bool = False, manifest_extra=None):
        self.matrices = [as_symmetric(m) for m in (dataset.matrices if hasattr(dataset, "matrices") else dataset)]
        if not self.matrices:
            raise ValueError("training needs a non-empty dataset")
        self.cfg = cfg
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.reports: list[TrainReport] = []
        self.label = dataset_label(dataset)
        state_file = self.out / "trainer_state.npz"
        if resume and state_file.exists():
            self._load_state(state_file)
        else:
            arch = Arch(cfg.n, tuple(cfg.channels), value_hidden=cfg.value_hidden)
            self.params = init_params(arch, cfg.seed)
            self.optimizer = Optimizer(cfg.hyper.optimizer, cfg.hyper.learning_rate)
            self.buffer = ReplayBuffer(cfg.buffer_capacity)
            self.iteration = 0
            self._write_manifest(dataset, manifest_extra)
            with open(self.out / "train_log.csv", "w", newline="") as fh:
                csv.writer(fh).writerow(LOG_COLUMNS)

    def _write_manifest(self, dataset, extra):
        manifest = {"config": self.cfg.to_dict(), "seed": self.cfg.seed}
        if hasattr(dataset, "digest"):
            manifest["dataset"] = {
                "digest": dataset.digest(),
                "size": len(dataset),
                "ids": list(dataset.ids),
                "split": dataset.manifest.get("split"),
            }
        if extra:
            manifest.update(extra)
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))

    def _save_state(self):
        arrays = {**self.buffer.to_arrays(), **self.optimizer.to_arrays()}
        arrays["iteration"] = np.array(self.iteration)
        tmp = self.out / "trainer_state.tmp.npz"
        np.savez(tmp, **arrays)
        tmp.replace(self.out / "trainer_state.npz")

    def _load_state(self, path):
        with np.load(path) as data:
            arrays = {k: data[k] for k in data.files}
        self.iteration = int(arrays["iteration"])
        self.params = load_checkpoint(self.out / "latest.pvn")
        self.optimizer = Optimizer(self.cfg.hyper.optimizer, self.cfg.hyper.learning_rate)
        self.optimizer.load_arrays(arrays)
        self.buffer = ReplayBuffer.from_arrays(arrays)
        log.info("resumed %s at iteration %d", self.out, self.iteration)

    def play(self, iteration: int) -> list[tuple[list[TrainingExample], Outcome, int]]:
        cfg = self.cfg
        idx = _schedule(cfg, len(self.matrices), iteration)
        snapshot = self.params.copy()
        jobs = [
            (snapshot, self.matrices[m], cfg.search, cfg.game, _episode_seed(cfg.seed, iteration, k),
             (iteration - 1) * cfg.episodes_per_iteration + k)
            for k, m in enumerate(idx)
        ]
        if cfg.workers > 1:
            with ProcessPoolExecutor(cfg.workers) as pool:
                return list(pool.map(_play_job, jobs))
        evaluator = net_evaluator(snapshot)
        out = []
        for _, matrix, search, game, seed, eid in jobs:
            ex, oc, path = run_episode(matrix, evaluator, search, game, mode="train", seed=seed, episode_id=eid)
            out.append((ex, oc, path.steps))
        return out

    def step(self) -> TrainReport:
        """One generate-then-train iteration, checkpointed on completion."""
        t0 = time.perf_counter()
        it = self.iteration + 1
        results = self.play(it)
        for ex, _, _ in results:
            self.buffer.add_episode(ex)
        before = self.params
        rng = np.random.default_rng([self.cfg.seed, it, 3])
        self.params, rep = train_iteration(self.buffer, self.params, self.cfg.hyper, self.optimizer, rng)
        change = float(np.linalg.norm(self.params.flat() - before.flat()) / max(1e-300, before.norm()))
        self.iteration = it
        ckpt = self.out / f"ckpt_{it:04d}.pvn"
        meta = {
            "iteration": it,
            "seed": self.cfg.seed,
            "step_cost": self.cfg.game.step_cost,
            "tol": self.cfg.game.tol,
            "max_steps": self.cfg.game.max_steps,
            "train_label": self.label,
        }
        save_checkpoint(self.params, ckpt, meta=meta)
        save_checkpoint(self.params, self.out / "latest.pvn", meta=meta)
        self._save_state()
        report = replace(
            rep,
            iteration=it,
            episodes=len(results),
            mean_len=float(np.mean([r[2] for r in results])),
            win_rate=float(np.mean([r[1].z > 0 for r in results])),
            checkpoint=str(ckpt),
            wall_seconds=time.perf_counter() - t0,
            param_change=change,
        )
        with open(self.out / "train_log.csv", "a", newline="") as fh:
            csv.writer(fh).writerow(
                [it, report.episodes, f"{report.mean_len:.4f}", f"{report.mean_loss:.6f}",
                 f"{report.win_rate:.4f}", f"{report.wall_seconds:.2f}"]
            )
        log.info(
            "iteration %d: mean_len=%.2f win=%.2f loss=%.4f change=%.2e (%.1fs)",
            it, report.mean_len, report.win_rate, report.mean_loss, change, report.wall_seconds,
        )
        self.reports.append(report)
        return report

    def run(self) -> tuple[NetParams, list[TrainReport]]:
        while self.iteration < self.cfg.max_iterations:
            rep = self.step()
            if rep.param_change < self.cfg.min_param_change:
                log.info("parameter change below %.1e; stopping", self.cfg.min_param_change)
                break
        return self.params, self.reports


def training_loop(dataset, cfg: LoopConfig, out_dir, *, resume: bool = False):
    """Alternate self-play and training until ``max_iterations`` or parameters settle."""
    return Trainer(dataset, cfg, out_dir, resume=resume).run()
