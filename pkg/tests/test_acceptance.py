"""End-to-end acceptance criteria, one test per criterion.

Each test appends a ``criterion N: PASS|FAIL`` line that is printed in the
terminal summary. Criteria 5 to 7 train networks and take minutes.
"""

from pathlib import Path

import numpy as np
import pytest

from jacobizero.bench import read_records
from jacobizero.cli import main
from jacobizero.datagen import TrajectoryConfig, generate_trajectory, import_matrices, random_symmetric
from jacobizero.game import GameConfig, GameState
from jacobizero.linalg import apply_rotation, givens_coefficients, offdiag_sq_norm
from jacobizero.mcts import MCTSAgent, SearchConfig, net_evaluator, search
from jacobizero.net import Arch, TrainBatch, grad, init_params, loss
from jacobizero.selfplay import LoopConfig, Trainer, TrainHyper
from jacobizero.solvers import brute_force_shortest_path, closed_form_eigenvalues, reference_eigenvalues, solve

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
DESK = CONFIGS / "desk_scale.json"
STRUCTURE_SEED = 16


def record(log, k, ok, detail):
    log.append(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


def rand_sym(rng, n, scale=1.0):
    m = rng.standard_normal((n, n)) * scale
    return (m + m.T) / 2


def test_criterion_1_rotation_correctness(acceptance_log):
    rng = np.random.default_rng(101)
    worst = dict(sym=0.0, annihilate=0.0, transfer=0.0, frob=0.0, trace=0.0)
    rotations = 0
    for _ in range(1000):
        n = int(rng.integers(2, 7))
        a = rand_sym(rng, n, 10.0 ** rng.uniform(-3, 3))
        amax = float(np.max(np.abs(a)))
        off = offdiag_sq_norm(a)
        frob = float(np.linalg.norm(a))
        tr = float(np.trace(a))
        for i in range(n):
            for j in range(i + 1, n):
                b = apply_rotation(a, givens_coefficients(a, i, j))
                rotations += 1
                worst["sym"] = max(worst["sym"], float(np.max(np.abs(b - b.T))))
                worst["annihilate"] = max(worst["annihilate"], abs(b[i, j]) / amax)
                worst["transfer"] = max(worst["transfer"], abs(offdiag_sq_norm(b) - (off - 2 * a[i, j] ** 2)) / off)
                worst["frob"] = max(worst["frob"], abs(float(np.linalg.norm(b)) - frob) / frob)
                # trace can cancel to ~0, so it is measured against the matrix scale
                worst["trace"] = max(worst["trace"], abs(float(np.trace(b)) - tr) / max(abs(tr), frob))
    ok = (worst["sym"] == 0.0 and worst["annihilate"] <= 1e-14 and worst["transfer"] <= 1e-12
          and worst["frob"] <= 1e-12 and worst["trace"] <= 1e-12)
    record(acceptance_log, 1, ok, f"{rotations} rotations; worst " +
           ", ".join(f"{k}={v:.2e}" for k, v in worst.items()))
    assert ok, worst


def test_criterion_2_eigensolver_correctness(acceptance_log):
    rng = np.random.default_rng(202)
    orth = 0.0
    err_big = 0.0
    for _ in range(1000):
        a = rand_sym(rng, 5, 3.0)
        p = solve(a, "maxelement", tol=1e-5)
        u = p.result.vectors
        orth = max(orth, float(np.max(np.abs(u.T @ u - np.eye(5)))))
        err_big = max(err_big, float(np.max(np.abs(np.sort(p.result.eigenvalues) - reference_eigenvalues(a)))))
    err_small = 0.0
    misses = 0
    for n in (2, 3):
        for _ in range(1000):
            a = rand_sym(rng, n, 3.0)
            p = solve(a, "maxelement", tol=1e-5)
            u = p.result.vectors
            orth = max(orth, float(np.max(np.abs(u.T @ u - np.eye(n)))))
            e = float(np.max(np.abs(np.sort(p.result.eigenvalues) - closed_form_eigenvalues(a))))
            err_small = max(err_small, e)
            misses += e > 1e-10
    ok = orth <= 1e-10 and err_big <= 1e-6 and err_small <= 1e-10
    record(acceptance_log, 2, ok,
           f"max|U^T U - I|={orth:.2e}; 5x5 vs tol-1e-12 oracle {err_big:.2e} (<=1e-6); "
           f"n<=3 vs closed form {err_small:.2e} (<=1e-10, {misses}/2000 over)")
    assert ok


def test_criterion_3_gradient_check(acceptance_log):
    rng = np.random.default_rng(303)
    arch = Arch(4, (3, 4, 5), policy_channels=2, value_channels=2, value_hidden=6)
    worst = 0.0
    h = 1e-5
    for k in range(10):
        params = init_params(arch, k, head_scale=1.0)
        for name in params.weights:
            params.weights[name] = params.weights[name] + rng.normal(0, 0.3, params.weights[name].shape)
        masks = rng.random((3, arch.n_actions)) < 0.7
        masks[:, 0] = True
        pi = rng.random(masks.shape) * masks
        pi /= pi.sum(1, keepdims=True)
        batch = TrainBatch(rng.normal(size=(3, 1, 4, 4)), masks, pi, rng.choice([-1.0, 1.0], 3))
        g = grad(params, batch, 1e-2)
        for name, w in params.weights.items():
            for idx in np.ndindex(w.shape):
                old = w[idx]
                w[idx] = old + h
                lp = loss(params, batch, 1e-2)
                w[idx] = old - h
                lm = loss(params, batch, 1e-2)
                w[idx] = old
                fd = (lp - lm) / (2 * h)
                worst = max(worst, abs(fd - g[name][idx]) / max(abs(fd), abs(g[name][idx]), 1e-6))
    ok = worst < 1e-4
    record(acceptance_log, 3, ok, f"10 networks, all parameters; max relative error {worst:.2e}")
    assert ok


def test_criterion_4_mcts_sanity(acceptance_log):
    rng = np.random.default_rng(404)
    ev = net_evaluator(init_params(Arch(5, (4, 4, 4)), 0))
    conserved = True
    for k in range(20):
        s = GameState.initial(rand_sym(rng, 5))
        n_play = int(rng.integers(1, 300))
        counts = search(s, ev, SearchConfig(n_playouts=n_play, root_noise=(0.3, 0.25)), np.random.default_rng(k))
        conserved &= int(counts.sum()) == n_play

    # (0,1) wins at once: both remaining entries drop to 0.85e-5 < tol; (0,2) leaves A_01 = 1
    win = GameState(np.array([[1.0, 1.0, 1.2e-5], [1.0, 1.0, 0.0], [1.2e-5, 0.0, 3.0]]),
                    steps_taken=29, tol=1e-5, max_steps=30)
    strict = 0
    for seed in range(20):
        ev3 = net_evaluator(init_params(Arch(3, (4, 4, 4)), seed, head_scale=3.0))
        counts = search(win, ev3, SearchConfig(n_playouts=100, root_noise=(0.3, 0.25)), np.random.default_rng(seed))
        strict += counts[0] == counts.max() and int(np.sum(counts == counts.max())) == 1
    ok = conserved and strict == 20
    record(acceptance_log, 4, ok, f"visit conservation {'held' if conserved else 'BROKEN'}; "
           f"winning move strictly most visited in {strict}/20 seeds")
    assert ok


def test_criterion_5_small_scale_near_optimal(tmp_path, acceptance_log):
    rng = np.random.default_rng(505)
    train = [random_symmetric(3, rng) for _ in range(200)]
    test = [random_symmetric(3, rng) for _ in range(100)]
    best = [brute_force_shortest_path(a, 1e-5, depth_limit=12)[0] for a in test]
    assert None not in best

    step_cost = 0.05
    game = GameConfig(step_cost=step_cost)
    cfg = LoopConfig(n=3, channels=(8, 16, 16), value_hidden=16, seed=5, max_iterations=4,
                     episodes_per_iteration=50, min_param_change=0.0,
                     search=SearchConfig(n_playouts=200, temperature_moves=3, step_cost=step_cost),
                     game=game, hyper=TrainHyper(epochs=10))
    params, _ = Trainer(train, cfg, tmp_path).run()
    ev = net_evaluator(params)
    steps = []
    for k, a in enumerate(test):
        agent = MCTSAgent(ev, SearchConfig(n_playouts=200, step_cost=step_cost), mode="eval", game=game, seed=k)
        p = solve(a, agent, 1e-5)
        steps.append(p.steps if p.converged else 10**6)
    near = float(np.mean(np.array(steps) <= np.array(best) + 1))
    me = [solve(a, "maxelement").steps for a in test]
    ok = near >= 0.8
    record(acceptance_log, 5, ok, f"learned within min+1 on {near:.0%} of 100 (>=80%); "
           f"mean learned {np.mean(steps):.2f}, optimum {np.mean(best):.2f}, MaxElement {np.mean(me):.2f}")
    assert ok


def desk_run(root: Path) -> Path:
    """gen -> train -> bench through the CLI; returns the bench directory."""
    root.mkdir(parents=True, exist_ok=True)
    data = root / "trajectory.csv"
    assert main(["--seed", str(STRUCTURE_SEED), "gen", "--out", str(data), "--n", "5", "--count", "300",
                 "--eps", "0.05"]) == 0
    run = root / "run"
    assert main(["train", "--data", str(data), "--out", str(run), "--split", "0.8", "--config", str(DESK)]) == 0
    bench = root / "bench"
    assert main(["bench", "--data", str(run / "test.csv"), "--out", str(bench),
                 "--checkpoint", str(run / "latest.pvn"), "--config", str(DESK)]) == 0
    return bench


@pytest.fixture(scope="module")
def desk_bench(tmp_path_factory):
    return desk_run(tmp_path_factory.mktemp("desk_a"))


def test_criterion_6_desk_scale_improvement(desk_bench, acceptance_log):
    rows = read_records(desk_bench / "records.csv")
    me = np.array([r["steps_maxelem"] for r in rows], dtype=float)
    le = np.array([r["steps_learned"] for r in rows], dtype=float)
    sav = [r["savings_pct"] for r in rows if r["savings_pct"] is not None]
    n_train = len(import_matrices(desk_bench.parent / "run" / "train.csv"))
    converged = sum(r["converged_le"] == "1" for r in rows)
    mean_sav = float(np.mean(sav))
    ok = n_train >= 200 and len(rows) >= 50 and le.mean() < me.mean() and mean_sav >= 20.0
    record(acceptance_log, 6, ok, f"{n_train} train / {len(rows)} test; mean steps learned {le.mean():.2f} vs "
           f"MaxElement {me.mean():.2f}; mean savings {mean_sav:.1f}% (>=20%); learned converged {converged}/{len(rows)}")
    assert ok


def test_criterion_7_determinism(desk_bench, tmp_path, acceptance_log):
    again = desk_run(tmp_path / "desk_b")
    first = (desk_bench / "records.csv").read_bytes()
    second = (again / "records.csv").read_bytes()
    ckpt_same = (desk_bench.parent / "run" / "latest.pvn").read_bytes() == (again.parent / "run" / "latest.pvn").read_bytes()
    ok = first == second
    record(acceptance_log, 7, ok, f"bench CSV {'byte-identical' if ok else 'DIFFERS'} across two full runs "
           f"({len(first)} bytes); final checkpoints {'identical' if ckpt_same else 'differ'}")
    assert ok


def test_criterion_8_maxelement_distribution(acceptance_log):
    parts = []
    ok = True
    for eps in (0.05, 0.10, 0.15):
        ds = generate_trajectory(TrajectoryConfig(n=5, count=1000, eps=eps, seed=STRUCTURE_SEED))
        paths = [solve(a, "maxelement", tol=1e-5) for a in ds.matrices]
        steps = np.array([p.steps for p in paths])
        conv = all(p.converged for p in paths)
        within = float(np.mean(steps <= 20))
        band = float(np.mean((steps >= 10) & (steps <= 16)))
        ok &= conv and within >= 0.9
        parts.append(f"eps={eps:g}: converged {'all' if conv else 'NOT all'}, <=20 steps {within:.0%}, "
                     f"10-16 band {band:.0%}, mean {steps.mean():.2f}")
    record(acceptance_log, 8, ok, "; ".join(parts))
    assert ok
