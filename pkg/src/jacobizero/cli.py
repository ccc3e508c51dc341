"""Command-line front end: ``jacobizero {gen,train,solve,bench,stats}``.

Exit codes: 0 success, 1 usage error, 2 data error (bad or missing input
files, corrupt checkpoints), 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .bench import BenchConfig, cross_stats, file_sha256, grid_csv, run_bench, write_bench
from .datagen import (
    DatasetError,
    MatrixDataset,
    TrajectoryConfig,
    export_matrices,
    generate_trajectory,
    import_matrices,
    split,
)
from .game import GameConfig
from .linalg import MatrixError, as_symmetric
from .mcts import MCTSAgent, SearchConfig, net_evaluator
from .net import CheckpointError, load_checkpoint, read_checkpoint_header
from .selfplay import LoopConfig, Trainer, dataset_label
from .solvers import default_max_steps, reference_eigenvalues, solve

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("jacobizero")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _channels(text: str) -> tuple[int, int, int]:
    parts = tuple(int(x) for x in text.split(","))
    if len(parts) != 3 or min(parts) < 1:
        raise argparse.ArgumentTypeError("expected three positive integers, e.g. 32,64,128")
    return parts


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommands accept the global flags too; SUPPRESS keeps their defaults
    # from overwriting values given before the subcommand name
    def d(value):
        return argparse.SUPPRESS if suppress else value

    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--seed", type=int, default=d(0))
    g.add_argument("--threads", type=int, default=d(1), help="worker processes")
    g.add_argument("--tol", type=float, default=d(1e-5))
    g.add_argument("--max-steps", type=int, default=d(None))
    g.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return g


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    p = _Parser(prog="jacobizero", description="Learned pivot selection for Jacobi eigensolvers.",
                parents=[_global_flags(suppress=False)])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic matrix trajectory")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, default=5)
    g.add_argument("--count", type=int, default=1000)
    g.add_argument("--eps", type=float, default=0.05)
    g.add_argument("--eps-mode", choices=["relative", "absolute"], default="relative")
    g.add_argument("--spectrum", type=float, nargs=2, default=(-10.0, 10.0), metavar=("LO", "HI"))
    g.add_argument("--structure-seed", type=int, default=None)
    g.add_argument("--mixing", choices=["givens", "haar"], default="givens")
    g.add_argument("--stride", type=int, default=1)

    t = sub.add_parser("train", parents=[common], help="self-play training")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--split", type=float, default=0.75)
    t.add_argument("--resume", action="store_true")
    t.add_argument("--config", help="JSON file with training settings (flags override it)")
    t.add_argument("--cpuct", type=float, default=None, help="default 4")
    t.add_argument("--playouts", type=int, default=None, help="default 560")
    t.add_argument("--epochs", type=int, default=None, help="default 50")
    t.add_argument("--iterations", type=int, default=None)
    t.add_argument("--episodes", type=int, default=None, help="episodes per iteration")
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--c-reg", type=float, default=None)
    t.add_argument("--channels", type=_channels, default=None)
    t.add_argument("--value-hidden", type=int, default=None)
    t.add_argument("--step-cost", type=float, default=None)
    t.add_argument("--temperature-moves", type=int, default=None)
    t.add_argument("--buffer", type=int, default=None, help="replay buffer capacity")
    t.add_argument("--root-noise", type=float, nargs=2, default=None, metavar=("ALPHA", "FRAC"))

    s = sub.add_parser("solve", parents=[common], help="diagonalize one matrix and print the path")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="dataset file; pick the record with --id or --index")
    src.add_argument("--values", help="row-major comma-separated entries of a square matrix")
    s.add_argument("--id")
    s.add_argument("--index", type=int, default=0)
    s.add_argument("--strategy", choices=["maxelem", "cyclic", "learned"], default="maxelem")
    s.add_argument("--checkpoint")
    s.add_argument("--playouts", type=int, default=13_000)
    s.add_argument("--cpuct", type=float, default=4.0)
    s.add_argument("--verify", action="store_true", help="check eigenvalues against a long Jacobi run")

    b = sub.add_parser("bench", parents=[common], help="compare strategies over a dataset")
    b.add_argument("--data", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--checkpoint", help="trained network; without it only classical strategies run")
    b.add_argument("--config", help="JSON run configuration; its \"bench\" section supplies defaults")
    b.add_argument("--playouts", type=int, default=None, help="default 13000")
    b.add_argument("--cpuct", type=float, default=None, help="default 4")
    b.add_argument("--time-cap-secs", type=float, default=None)
    b.add_argument("--inference-temperature", type=float, default=0.0)
    b.add_argument("--root-noise", type=float, nargs=2, default=None, metavar=("ALPHA", "FRAC"))
    b.add_argument("--step-cost", type=float, default=None, help="default: value stored in the checkpoint")
    b.add_argument("--limit", type=int, default=None, help="bench only the first N matrices")
    b.add_argument("--train-label")
    b.add_argument("--test-label")

    st = sub.add_parser("stats", parents=[common], help="cross-run savings grid and correlations")
    st.add_argument("runs", nargs="+", help="bench output directories")
    st.add_argument("--out", help="write the full comparison as JSON here")
    return p


def _load_dataset(path) -> MatrixDataset:
    if not Path(path).is_file():
        raise DatasetError(f"no such dataset file: {path}")
    return import_matrices(path)


def cmd_gen(args) -> int:
    cfg = TrajectoryConfig(
        n=args.n, count=args.count, spectrum_range=tuple(args.spectrum), eps=args.eps,
        eps_mode=args.eps_mode, seed=args.seed, structure_seed=args.structure_seed,
        mixing=args.mixing, stride=args.stride,
    )
    ds = generate_trajectory(cfg)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    export_matrices(ds, args.out)
    print(f"wrote {len(ds)} matrices to {args.out} (step length {ds.manifest['eps_absolute']:.6g})")
    return EXIT_OK


def _read_config(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise DatasetError(f"config {path} must hold a JSON object")
    return raw


def _loop_config(args, n: int) -> LoopConfig:
    cfg = LoopConfig(n=n, seed=args.seed)
    if args.config:
        raw = _read_config(args.config)
        for key in ("bench", "description"):
            raw.pop(key, None)
        base = cfg.to_dict()
        for key in ("search", "game", "hyper"):
            base[key].update(raw.pop(key, {}))
        raw.pop("n", None)
        base.update(raw)
        base["seed"] = args.seed
        try:
            cfg = LoopConfig.from_dict(base)
        except TypeError as exc:
            raise UsageError(f"bad config {args.config}: {exc}") from exc
    search, game, hyper = cfg.search, cfg.game, cfg.hyper
    pick = lambda v, d: d if v is None else v  # noqa: E731
    search = replace(
        search,
        c_puct=pick(args.cpuct, search.c_puct),
        n_playouts=pick(args.playouts, search.n_playouts),
        temperature_moves=pick(args.temperature_moves, search.temperature_moves),
        root_noise=tuple(args.root_noise) if args.root_noise else search.root_noise,
        step_cost=pick(args.step_cost, search.step_cost),
    )
    game = replace(game, tol=args.tol, max_steps=pick(args.max_steps, game.max_steps),
                   step_cost=search.step_cost)
    hyper = replace(
        hyper,
        epochs=pick(args.epochs, hyper.epochs),
        batch_size=pick(args.batch_size, hyper.batch_size),
        learning_rate=pick(args.lr, hyper.learning_rate),
        c_reg=pick(args.c_reg, hyper.c_reg),
    )
    return replace(
        cfg,
        channels=pick(args.channels, cfg.channels),
        value_hidden=pick(args.value_hidden, cfg.value_hidden),
        max_iterations=pick(args.iterations, cfg.max_iterations),
        episodes_per_iteration=pick(args.episodes, cfg.episodes_per_iteration),
        buffer_capacity=pick(args.buffer, cfg.buffer_capacity),
        workers=max(1, args.threads),
        search=search, game=game, hyper=hyper,
    )


def cmd_train(args) -> int:
    ds = _load_dataset(args.data)
    if not ds.matrices:
        raise DatasetError(f"{args.data} holds no matrices")
    n = ds.matrices[0].shape[0]
    if any(m.shape[0] != n for m in ds.matrices):
        raise DatasetError("training needs matrices of a single order")
    train, test = split(ds, args.split, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = _loop_config(args, n)
    if args.resume and not (out / "trainer_state.npz").exists():
        log.warning("nothing to resume in %s; starting fresh", out)
    export_matrices(train, out / "train.csv")
    export_matrices(test, out / "test.csv")
    trainer = Trainer(train, cfg, out, resume=args.resume,
                      manifest_extra={"source": str(args.data), "train_label": dataset_label(ds)})
    params, reports = trainer.run()
    last = reports[-1] if reports else None
    if last:
        print(f"trained {trainer.iteration} iterations; last mean_len={last.mean_len:.2f} "
              f"win_rate={last.win_rate:.2f}; checkpoint {out / 'latest.pvn'}")
    else:
        print(f"already at iteration {trainer.iteration}; nothing to do")
    return EXIT_OK


def _parse_values(text: str) -> np.ndarray:
    try:
        vals = np.array([float(x) for x in text.replace(";", ",").split(",") if x.strip()])
    except ValueError as exc:
        raise DatasetError(f"bad matrix values: {exc}") from exc
    n = int(round(len(vals) ** 0.5))
    if n * n != len(vals) or n < 1:
        raise DatasetError(f"{len(vals)} values do not form a square matrix")
    return vals.reshape(n, n)


def _learned_agent(args, ckpt, seed):
    params = load_checkpoint(ckpt)
    meta = read_checkpoint_header(ckpt).get("meta", {})
    step_cost = getattr(args, "step_cost", None)
    if step_cost is None:
        step_cost = float(meta.get("step_cost", 0.0))
    cfg = SearchConfig(
        c_puct=args.cpuct,
        n_playouts=args.playouts,
        temperature=getattr(args, "inference_temperature", 0.0),
        root_noise=tuple(args.root_noise) if getattr(args, "root_noise", None) else None,
        time_cap_secs=getattr(args, "time_cap_secs", None),
        step_cost=step_cost,
    )
    game = GameConfig(tol=args.tol, step_cost=step_cost)
    return params, cfg, meta, MCTSAgent(net_evaluator(params), cfg, mode="eval", game=game, seed=seed)


def cmd_solve(args) -> int:
    if args.data:
        ds = _load_dataset(args.data)
        if args.id is not None:
            if args.id not in ds.ids:
                raise DatasetError(f"id {args.id!r} not in {args.data}")
            k = ds.ids.index(args.id)
        else:
            k = args.index
            if not 0 <= k < len(ds):
                raise DatasetError(f"index {k} outside dataset of {len(ds)}")
        a, name = ds.matrices[k], ds.ids[k]
    else:
        a, name = _parse_values(args.values), "input"
    try:
        a = as_symmetric(a)
    except MatrixError as exc:
        raise DatasetError(str(exc)) from exc
    n = a.shape[0]
    if args.strategy == "learned":
        if not args.checkpoint:
            raise UsageError("--strategy learned needs --checkpoint")
        strategy = _learned_agent(args, args.checkpoint, args.seed)[3]
    else:
        strategy = {"maxelem": "maxelement", "cyclic": "cyclic"}[args.strategy]
    if n < 2:
        print(f"matrix {name}: order 1, 0 steps\neigenvalues: {a[0, 0]!r}")
        return EXIT_OK
    path = solve(a, strategy, args.tol, args.max_steps or default_max_steps(n))
    print(f"matrix {name} ({n}x{n}), strategy {args.strategy}")
    for k, ((i, j), m) in enumerate(zip(path.pivots, path.offdiag_trace), 1):
        print(f"  step {k:3d}: pivot ({i},{j})  max|offdiag| = {m:.3e}")
    lam = np.sort(path.result.eigenvalues)
    status = "converged" if path.converged else "NOT CONVERGED (step budget exhausted)"
    print(f"{path.steps} steps, {status}")
    print("eigenvalues: " + " ".join(f"{x:.12g}" for x in lam))
    if args.verify:
        ref = np.sort(reference_eigenvalues(a))
        err = float(np.max(np.abs(ref - lam)))
        print(f"verify: max |eigenvalue - reference| = {err:.3e} ({'ok' if err <= 1e-6 else 'MISMATCH'})")
        if err > 1e-6 and path.converged:
            return EXIT_RUNTIME
    return EXIT_OK


def cmd_bench(args) -> int:
    ds = _load_dataset(args.data)
    if args.limit is not None:
        ds = ds.subset(range(min(args.limit, len(ds))))
    section = _read_config(args.config).get("bench", {}) if args.config else {}
    if args.playouts is None:
        args.playouts = int(section.get("playouts", 13_000))
    if args.cpuct is None:
        args.cpuct = float(section.get("cpuct", 4.0))
    params, meta = None, {}
    search = SearchConfig(c_puct=args.cpuct, n_playouts=args.playouts)
    info = {"dataset": {"path": str(args.data), "digest": ds.digest(), "size": len(ds)}}
    if args.checkpoint:
        params, search, meta, _ = _learned_agent(args, args.checkpoint, args.seed)
        info["checkpoint"] = {"path": str(args.checkpoint), "sha256": file_sha256(args.checkpoint), "meta": meta}
    info["train_label"] = args.train_label or meta.get("train_label", "none")
    info["test_label"] = args.test_label or dataset_label(ds)
    info["search"] = {"c_puct": search.c_puct, "n_playouts": search.n_playouts,
                      "temperature": search.temperature, "time_cap_secs": search.time_cap_secs,
                      "step_cost": search.step_cost}
    cfg = BenchConfig(tol=args.tol, max_steps=args.max_steps, search=search, seed=args.seed,
                      workers=max(1, args.threads))
    records = run_bench(ds, params, cfg)
    summary = write_bench(args.out, records, info)
    for s, st in summary["strategies"].items():
        print(f"{s:8s} mean {st['mean']:.3f}  min {st['min']}  max {st['max']}  converged {st['converged']}/{st['count']}")
    if summary["mean_savings_pct"] is not None:
        print(f"mean savings vs maxelem: {summary['mean_savings_pct']:.2f}%")
    if summary["failures"]:
        print(f"{len(summary['failures'])} matrices had failures (see summary.json)")
    print(f"wrote {args.out}/records.csv, summary.json and histograms")
    return EXIT_OK


def cmd_stats(args) -> int:
    for d in args.runs:
        if not (Path(d) / "summary.json").is_file() or not (Path(d) / "records.csv").is_file():
            raise DatasetError(f"{d} is not a bench output directory")
    if len(args.runs) < 2:
        raise UsageError("stats needs at least two bench outputs")
    result = cross_stats(args.runs)
    sys.stdout.write(grid_csv(result))
    for row in result["runs"]:
        delta = row["delta_savings_pct"]
        print(f"{row['run']}: savings {row['mean_savings_pct']}  delta vs first "
              f"{'n/a' if delta is None else f'{delta:+.4f}'}")
    for name in result["order_mismatches"]:
        print(f"warning: {name} lists its matrices in a different order than an earlier run on the same test set")
    if args.out:
        Path(args.out).write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "solve": cmd_solve, "bench": cmd_bench, "stats": cmd_stats}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, --version and usage errors
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"jacobizero: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, CheckpointError, MatrixError, FileNotFoundError) as exc:
        print(f"jacobizero: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to an exit code
        log.debug("runtime failure", exc_info=True)
        print(f"jacobizero: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
