"""Benchmark learned pivoting against MaxElement and Cyclic Jacobi.

A bench run writes three kinds of files into one directory:

* ``records.csv``: one row per matrix, in dataset order.
* ``hist_<strategy>.csv``: ``steps,count`` rows binned by integer step count.
* ``summary.json``: per-strategy statistics, savings, correlations and the
  identifiers of the dataset and checkpoint that produced them.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats as sstats

from .game import GameConfig
from .mcts import MCTSAgent, SearchConfig, net_evaluator
from .net import NetParams
from .solvers import DEFAULT_TOL, SolvePath, solve

CSV_HEADER = [
    "id", "kappa", "steps_maxelem", "steps_cyclic", "steps_learned",
    "savings_pct", "converged_me", "converged_cy", "converged_le",
]
STRATEGIES = ("maxelem", "cyclic", "learned")
EIG_AGREE = 1e-6
KAPPA_FLOOR = 1e-300


@dataclass
class BenchRecord:
    id: str
    kappa: float | None = None
    steps: dict[str, int | None] = field(default_factory=dict)
    converged: dict[str, bool | None] = field(default_factory=dict)
    visits: dict[str, int] = field(default_factory=dict)
    eig_mismatch: float = 0.0
    errors: dict[str, str] = field(default_factory=dict)

    @property
    def savings_pct(self) -> float | None:
        return savings(self.steps.get("maxelem"), self.steps.get("learned"))

    def row(self) -> list[str]:
        def flag(s):
            if s in self.errors:
                return "error"
            c = self.converged.get(s)
            return "" if c is None else ("1" if c else "0")

        def num(x):
            return "" if x is None else repr(x)

        return [
            self.id,
            num(self.kappa),
            *(num(self.steps.get(s)) for s in STRATEGIES),
            num(self.savings_pct),
            *(flag(s) for s in STRATEGIES),
        ]


def savings(steps_me: int | None, steps_le: int | None) -> float | None:
    """Percent of MaxElement steps saved; undefined when MaxElement took none."""
    if steps_me is None or steps_le is None or steps_me == 0:
        return None
    return 100.0 * (steps_me - steps_le) / steps_me


def condition_number(eigenvalues) -> float | None:
    lam = np.abs(np.asarray(eigenvalues, dtype=np.float64))
    lo = float(lam.min())
    if lo < KAPPA_FLOOR:
        return None
    return float(lam.max()) / lo


@dataclass(frozen=True)
class BenchConfig:
    tol: float = DEFAULT_TOL
    max_steps: int | None = None
    search: SearchConfig = field(default_factory=lambda: SearchConfig(n_playouts=13_000))
    seed: int = 0
    workers: int = 1


def _agent_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index, 11]).generate_state(1)[0])


def bench_matrix(mid: str, a, params: NetParams | None, cfg: BenchConfig, index: int = 0) -> BenchRecord:
    """Run every strategy on one matrix; failures land in ``errors``."""
    rec = BenchRecord(mid)
    paths: dict[str, SolvePath] = {}
    for s in STRATEGIES:
        if s == "learned":
            if params is None:
                continue
            game = GameConfig(tol=cfg.tol, step_cost=cfg.search.step_cost)
            strategy = MCTSAgent(net_evaluator(params), cfg.search, mode="eval", game=game,
                                 seed=_agent_seed(cfg.seed, index))
        else:
            strategy = {"maxelem": "maxelement", "cyclic": "cyclic"}[s]
        try:
            p = solve(a, strategy, cfg.tol, cfg.max_steps)
        except Exception as exc:  # recorded per matrix, never fatal for the run
            rec.errors[s] = f"{type(exc).__name__}: {exc}"
            rec.steps[s] = None
            continue
        paths[s] = p
        rec.steps[s] = p.steps
        rec.converged[s] = p.converged
        rec.visits[s] = p.visits

    ref = paths.get("maxelem")
    if ref is not None and ref.converged:
        rec.kappa = condition_number(ref.result.eigenvalues)
        want = np.sort(ref.result.eigenvalues)
        for s, p in paths.items():
            if p.converged:
                diff = float(np.max(np.abs(np.sort(p.result.eigenvalues) - want)))
                rec.eig_mismatch = max(rec.eig_mismatch, diff)
    return rec


def _bench_job(job):
    return bench_matrix(*job)


def run_bench(dataset, params: NetParams | None, cfg: BenchConfig) -> list[BenchRecord]:
    """Bench every matrix; records come back in dataset order."""
    jobs = [(mid, a, params, cfg, k) for k, (mid, a) in enumerate(zip(dataset.ids, dataset.matrices))]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            return list(pool.map(_bench_job, jobs, chunksize=max(1, len(jobs) // (4 * cfg.workers))))
    return [bench_matrix(*job) for job in jobs]


def records_csv(records: list[BenchRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow(r.row())
    return buf.getvalue()


def read_records(path) -> list[dict]:
    """Parse a records CSV back into dicts of typed values (None for missing)."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            d = {"id": row["id"]}
            d["kappa"] = float(row["kappa"]) if row["kappa"] else None
            for s in STRATEGIES:
                v = row[f"steps_{s}"]
                d[f"steps_{s}"] = int(v) if v else None
            d["savings_pct"] = float(row["savings_pct"]) if row["savings_pct"] else None
            for k in ("converged_me", "converged_cy", "converged_le"):
                d[k] = row[k]
            out.append(d)
    return out


def histogram(steps) -> dict[int, int]:
    vals = [s for s in steps if s is not None]
    if not vals:
        return {}
    counts = np.bincount(np.asarray(vals, dtype=np.int64))
    return {int(k): int(c) for k, c in enumerate(counts)}


def _strategy_stats(records, s):
    steps = [r.steps.get(s) for r in records if r.steps.get(s) is not None]
    if not steps:
        return None
    conv = [r.converged.get(s) for r in records if r.converged.get(s) is not None]
    visits = [r.visits[s] for r in records if s in r.visits]
    return {
        "count": len(steps),
        "mean": float(np.mean(steps)),
        "min": int(min(steps)),
        "max": int(max(steps)),
        "converged": int(sum(conv)),
        "failures": sum(1 for r in records if s in r.errors),
        "mean_visits": float(np.mean(visits)) if visits else None,
        "histogram": {str(k): v for k, v in histogram(steps).items()},
    }


def correlations(kappas, steps) -> dict[str, float | None]:
    """Pearson and Spearman coefficients between log10(kappa) and step count."""
    pairs = [(math.log10(k), s) for k, s in zip(kappas, steps) if k is not None and s is not None]
    if len(pairs) < 3:
        return {"pearson": None, "spearman": None, "n": len(pairs)}
    x, y = np.array(pairs).T
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return {"pearson": None, "spearman": None, "n": len(pairs)}
    return {
        "pearson": float(sstats.pearsonr(x, y)[0]),
        "spearman": float(sstats.spearmanr(x, y)[0]),
        "n": len(pairs),
    }


def summarize(records: list[BenchRecord], info: dict | None = None) -> dict:
    sv = [r.savings_pct for r in records if r.savings_pct is not None]
    out = {
        "records": len(records),
        "strategies": {s: st for s in STRATEGIES if (st := _strategy_stats(records, s)) is not None},
        "mean_savings_pct": float(np.mean(sv)) if sv else None,
        "savings_defined": len(sv),
        "max_eig_mismatch": max((r.eig_mismatch for r in records), default=0.0),
        "eig_disagreements": [r.id for r in records if r.eig_mismatch > EIG_AGREE],
        "failures": {r.id: r.errors for r in records if r.errors},
        "kappa_correlation": {
            s: correlations([r.kappa for r in records], [r.steps.get(s) for r in records])
            for s in STRATEGIES
        },
    }
    if info:
        out.update(info)
    return out


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_bench(out_dir, records: list[BenchRecord], info: dict | None = None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "records.csv").write_text(records_csv(records))
    for s in STRATEGIES:
        h = histogram(r.steps.get(s) for r in records)
        if not h:
            continue
        lines = ["steps,count"] + [f"{k},{v}" for k, v in h.items()]
        (out / f"hist_{s}.csv").write_text("\n".join(lines) + "\n")
    summary = summarize(records, info)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _load_run(path):
    p = Path(path)
    summary = json.loads((p / "summary.json").read_text())
    return summary, read_records(p / "records.csv")


def cross_stats(run_dirs) -> dict:
    """Compare bench runs: a (train label x test label) savings grid and per-run deltas.

    Runs on the same test label must list the same ids in the same order;
    mismatches are reported under ``order_mismatches``.
    """
    if len(run_dirs) < 2:
        raise ValueError("stats needs at least two bench outputs")
    runs = [(str(d), *_load_run(d)) for d in run_dirs]
    base_name, base_summary, _ = runs[0]
    base_sav = base_summary.get("mean_savings_pct")
    by_test: dict[str, list[str]] = {}
    mismatches = []
    grid: dict[str, dict[str, float | None]] = {}
    rows = []
    for name, summary, recs in runs:
        tr = str(summary.get("train_label", "?"))
        te = str(summary.get("test_label", name))
        ids = [r["id"] for r in recs]
        if te in by_test and by_test[te] != ids:
            mismatches.append(name)
        by_test.setdefault(te, ids)
        sav = summary.get("mean_savings_pct")
        grid.setdefault(tr, {})[te] = sav
        kap = [r["kappa"] for r in recs]
        rows.append({
            "run": name,
            "train_label": tr,
            "test_label": te,
            "mean_savings_pct": sav,
            "delta_savings_pct": None if sav is None or base_sav is None else sav - base_sav,
            "mean_steps": {s: st["mean"] for s, st in summary.get("strategies", {}).items()},
            "kappa_correlation": {s: correlations(kap, [r[f"steps_{s}"] for r in recs]) for s in STRATEGIES},
        })
    cells = [v for row in grid.values() for v in row.values() if v is not None]
    return {
        "grid": grid,
        "runs": rows,
        "order_mismatches": mismatches,
        "savings_spread": float(np.ptp(cells)) if cells else None,
        "savings_mean": float(np.mean(cells)) if cells else None,
    }


def grid_csv(result: dict) -> str:
    grid = result["grid"]
    tests = sorted({t for row in grid.values() for t in row})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["train\\test", *tests])
    for tr in sorted(grid):
        w.writerow([tr, *("" if grid[tr].get(t) is None else f"{grid[tr][t]:.4f}" for t in tests)])
    return buf.getvalue()
