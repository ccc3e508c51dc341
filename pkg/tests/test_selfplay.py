import csv
import json

import numpy as np
import pytest

from jacobizero.game import GameConfig
from jacobizero.mcts import SearchConfig, uniform_evaluator
from jacobizero.net import Arch, init_params, load_checkpoint
from jacobizero.selfplay import (
    LOG_COLUMNS,
    LoopConfig,
    ReplayBuffer,
    TrainHyper,
    Trainer,
    TrainingExample,
    run_episode,
    train_iteration,
)

ARCH = Arch(3, (2, 3, 4), policy_channels=1, value_channels=1, value_hidden=4)


def rand_sym(rng, n):
    m = rng.standard_normal((n, n))
    return (m + m.T) / 2


def sentinel(k, n=3):
    n_act = n * (n - 1) // 2
    pi = np.zeros(n_act)
    pi[k % n_act] = 1.0
    return TrainingExample(np.full((1, n, n), float(k)), np.ones(n_act, bool), pi, 1, 1.0, k, 0)


def tiny_loop(**kw):
    base = dict(
        n=3, channels=(2, 3, 4), value_hidden=4, seed=5, max_iterations=2, episodes_per_iteration=3,
        buffer_capacity=100, min_param_change=0.0,
        search=SearchConfig(n_playouts=8, temperature_moves=2),
        game=GameConfig(max_steps=10),
        hyper=TrainHyper(batch_size=4, epochs=2, learning_rate=1e-3),
    )
    base.update(kw)
    return LoopConfig(**base)


def tiny_data(count=5, seed=0):
    rng = np.random.default_rng(seed)
    return [rand_sym(rng, 3) for _ in range(count)]


def test_two_by_two_episode():
    ex, outcome, path = run_episode(np.array([[1.0, 2.0], [2.0, 3.0]]), uniform_evaluator,
                                    SearchConfig(n_playouts=5))
    assert len(ex) == 1 and outcome.z == 1 and path.steps == 1 and path.converged
    assert ex[0].z == 1 and ex[0].pi.tolist() == [1.0]


def test_terminal_start_rejected():
    with pytest.raises(ValueError):
        run_episode(np.eye(3), uniform_evaluator, SearchConfig(n_playouts=5))
    with pytest.raises(ValueError):
        run_episode(rand_sym(np.random.default_rng(0), 3), uniform_evaluator, SearchConfig(), mode="bogus")


def test_outcome_backfilled_and_policy_legal():
    rng = np.random.default_rng(1)
    for k, game in enumerate((GameConfig(), GameConfig(max_steps=2))):
        ex, outcome, path = run_episode(rand_sym(rng, 4), uniform_evaluator, SearchConfig(n_playouts=20),
                                        game, seed=k)
        assert len(ex) == path.steps
        assert all(e.z == outcome.z for e in ex)
        assert [e.step for e in ex] == list(range(len(ex)))
        for e in ex:
            assert e.pi.sum() == pytest.approx(1.0)
            assert np.all(e.pi[~e.mask] == 0)
        if game.max_steps == 2:
            assert outcome.z == -1


def test_step_cost_value_targets():
    ex, outcome, _ = run_episode(rand_sym(np.random.default_rng(2), 3), uniform_evaluator,
                                 SearchConfig(n_playouts=10), GameConfig(step_cost=0.1))
    assert outcome.z == 1
    assert [e.value for e in ex] == pytest.approx([1 - 0.1 * (len(ex) - t) for t in range(len(ex))])


def test_episode_reproducible_from_seed():
    a = rand_sym(np.random.default_rng(3), 4)
    runs = [run_episode(a, uniform_evaluator, SearchConfig(n_playouts=15), seed=11)[2].pivots for _ in range(2)]
    assert runs[0] == runs[1]


def test_buffer_bound_and_fifo():
    buf = ReplayBuffer(5)
    buf.add_episode([sentinel(k) for k in range(3)])
    buf.add_episode([sentinel(k) for k in range(3, 7)])
    assert len(buf) == 5
    assert [int(e.state[0, 0, 0]) for e in buf] == [2, 3, 4, 5, 6]
    back = ReplayBuffer.from_arrays(buf.to_arrays())
    assert back.capacity == 5 and [e.episode for e in back] == [2, 3, 4, 5, 6]
    with pytest.raises(ValueError):
        ReplayBuffer(0)


def test_zero_learning_rate_is_bit_exact():
    buf = ReplayBuffer()
    buf.add_episode([sentinel(k) for k in range(30)])
    params = init_params(ARCH, 0)
    out, _ = train_iteration(buf, params, TrainHyper(epochs=3, batch_size=7, learning_rate=0.0, optimizer="sgd"))
    assert all(np.array_equal(out.weights[k], params.weights[k]) for k in params.weights)


def test_singleton_buffer_overfits():
    buf = ReplayBuffer()
    buf.add_episode([sentinel(1)])
    params = init_params(ARCH, 0)
    start = train_iteration(buf, params, TrainHyper(epochs=0))[1].mean_loss
    trained, rep = train_iteration(buf, params, TrainHyper(epochs=300, batch_size=1, learning_rate=1e-2, c_reg=0.0))
    assert rep.mean_loss < 0.1 * start
    assert rep.epochs_run == 300


def test_empty_buffer_raises():
    with pytest.raises(ValueError):
        train_iteration(ReplayBuffer(), init_params(ARCH, 0), TrainHyper())


def test_one_iteration_writes_one_checkpoint(tmp_path):
    params, reports = Trainer(tiny_data(), tiny_loop(max_iterations=1), tmp_path).run()
    assert len(reports) == 1
    assert sorted(p.name for p in tmp_path.glob("ckpt_*.pvn")) == ["ckpt_0001.pvn"]
    rows = list(csv.reader(open(tmp_path / "train_log.csv")))
    assert rows[0] == LOG_COLUMNS and len(rows) == 2
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["seed"] == 5 and LoopConfig.from_dict(manifest["config"]) == tiny_loop(max_iterations=1)
    assert load_checkpoint(tmp_path / "ckpt_0001.pvn").arch == params.arch


def test_buffer_holds_only_training_examples(tmp_path):
    tr = Trainer(tiny_data(), tiny_loop(max_iterations=1), tmp_path)
    results = tr.play(1)
    tr2 = Trainer(tiny_data(), tiny_loop(max_iterations=1), tmp_path / "b")
    tr2.step()
    assert len(tr2.buffer) == sum(len(ex) for ex, _, _ in results)


def test_resume_matches_uninterrupted(tmp_path):
    data = tiny_data()
    full, _ = Trainer(data, tiny_loop(max_iterations=3), tmp_path / "full").run()
    Trainer(data, tiny_loop(max_iterations=1), tmp_path / "split").run()
    resumed, reports = Trainer(data, tiny_loop(max_iterations=3), tmp_path / "split", resume=True).run()
    assert [r.iteration for r in reports] == [2, 3]
    assert all(np.array_equal(full.weights[k], resumed.weights[k]) for k in full.weights)
    assert (tmp_path / "full" / "latest.pvn").read_bytes() == (tmp_path / "split" / "latest.pvn").read_bytes()


def test_loop_stops_when_parameters_settle(tmp_path):
    cfg = tiny_loop(max_iterations=5, min_param_change=1e9)
    _, reports = Trainer(tiny_data(), cfg, tmp_path).run()
    assert len(reports) == 1


def test_parallel_workers_match_serial(tmp_path):
    data = tiny_data()
    serial, _ = Trainer(data, tiny_loop(max_iterations=1), tmp_path / "s").run()
    par, _ = Trainer(data, tiny_loop(max_iterations=1, workers=2), tmp_path / "p").run()
    assert all(np.array_equal(serial.weights[k], par.weights[k]) for k in serial.weights)
