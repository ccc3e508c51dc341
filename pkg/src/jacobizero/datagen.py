"""Synthetic Hamiltonian-like matrix trajectories and the dataset file format.

Dataset files are UTF-8 text::

    # jacobizero-dataset v1
    #manifest {"config": {...}, "split": {...}, ...}      (one JSON object)
    id,n,v00,v01,...,v(n-1)(n-1)                          (one record per line)

Values are row-major over the full matrix and written with ``repr`` so a
round trip is bit-exact. Other ``#`` lines are comments. Blank lines are
ignored.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .linalg import MatrixError

FILE_TAG = "# jacobizero-dataset v1"
SYM_ACCEPT = 1e-6


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class TrajectoryConfig:
    """Parameters of one synthetic trajectory.

    ``eps`` is the Frobenius length of every step. With ``eps_mode ==
    "relative"`` it is read as a multiple of ``||A_0||_F / sqrt(count)``.
    ``structure_seed`` fixes the eigenvector structure (the "molecule");
    ``seed`` drives the eigenvalues and the random walk.
    """

    n: int = 5
    count: int = 1000
    spectrum_range: tuple[float, float] = (-10.0, 10.0)
    eps: float = 0.05
    eps_mode: str = "relative"
    seed: int = 0
    structure_seed: int | None = None
    mixing: str = "givens"  # "givens" or "haar"
    mixing_rotations: int = 6
    max_angle: float = 0.3
    stride: int = 1

    def validate(self) -> None:
        if self.n < 2:
            raise DatasetError("n must be >= 2")
        if self.count < 1:
            raise DatasetError("count must be >= 1")
        lo, hi = self.spectrum_range
        if not lo < hi:
            raise DatasetError("spectrum_range must satisfy lo < hi")
        if not self.eps > 0:
            raise DatasetError("eps must be positive")
        if self.eps_mode not in ("relative", "absolute"):
            raise DatasetError(f"unknown eps_mode {self.eps_mode!r}")
        if self.mixing not in ("givens", "haar"):
            raise DatasetError(f"unknown mixing {self.mixing!r}")
        if self.stride < 1:
            raise DatasetError("stride must be >= 1")


@dataclass
class MatrixDataset:
    matrices: list[np.ndarray]
    ids: list[str]
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.matrices) != len(self.ids):
            raise DatasetError("matrices and ids differ in length")
        if len(set(self.ids)) != len(self.ids):
            raise DatasetError("dataset ids are not unique")

    def __len__(self) -> int:
        return len(self.matrices)

    def subset(self, idx, role: str | None = None) -> "MatrixDataset":
        manifest = dict(self.manifest)
        if role:
            manifest["role"] = role
        return MatrixDataset([self.matrices[i] for i in idx], [self.ids[i] for i in idx], manifest)

    def digest(self) -> str:
        h = hashlib.sha256()
        for i, m in zip(self.ids, self.matrices):
            h.update(i.encode())
            h.update(np.ascontiguousarray(m, dtype="<f8").tobytes())
        return h.hexdigest()


def haar_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix (QR of a Gaussian, sign-corrected)."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def random_symmetric(n: int, rng: np.random.Generator, spectrum_range=(-10.0, 10.0)) -> np.ndarray:
    """Dense symmetric matrix with uniform spectrum and Haar eigenvectors."""
    lam = rng.uniform(*spectrum_range, size=n)
    q = haar_orthogonal(n, rng)
    a = q.T @ np.diag(lam) @ q
    return 0.5 * (a + a.T)


class _Structure:
    """A(angles, lam) = Q^T diag(lam) Q with Q a product of plane rotations."""

    def __init__(self, n, planes, base=None):
        self.n = n
        self.planes = planes
        self.base = base if base is not None else np.eye(n)

    def q(self, angles):
        q = self.base.copy()
        for (i, j), th in zip(self.planes, angles):
            c, s = math.cos(th), math.sin(th)
            qi, qj = q[:, i].copy(), q[:, j].copy()
            q[:, i] = c * qi - s * qj
            q[:, j] = s * qi + c * qj
        return q

    def matrix(self, angles, lam):
        q = self.q(angles)
        a = q @ np.diag(lam) @ q.T
        return 0.5 * (a + a.T)


def _structure(cfg: TrajectoryConfig):
    srng = np.random.default_rng(cfg.seed if cfg.structure_seed is None else cfg.structure_seed)
    n = cfg.n
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    if cfg.mixing == "haar":
        return _Structure(n, [], haar_orthogonal(n, srng)), np.zeros(0)
    picks = srng.integers(0, len(pairs), size=cfg.mixing_rotations)
    angles = srng.uniform(-cfg.max_angle, cfg.max_angle, size=cfg.mixing_rotations)
    return _Structure(n, [pairs[k] for k in picks]), angles


def generate_trajectory(cfg: TrajectoryConfig) -> MatrixDataset:
    """Smooth sequence of similar symmetric matrices.

    ``A_0 = Q^T diag(lam) Q``; every later matrix is ``A_{t+1} = A_t + eps S_t``
    where ``S_t`` is a unit-Frobenius symmetric step taken along a random
    direction in (rotation angle, eigenvalue) space, so the whole sequence
    shares the eigenvector structure of ``A_0``.
    """
    cfg.validate()
    struct, angles = _structure(cfg)
    rng = np.random.default_rng(cfg.seed)
    lam = np.sort(rng.uniform(*cfg.spectrum_range, size=cfg.n))
    a = struct.matrix(angles, lam)
    eps = cfg.eps
    if cfg.eps_mode == "relative":
        eps = cfg.eps * float(np.linalg.norm(a)) / math.sqrt(cfg.count)

    mats = [a.copy()]
    cur_ref = a  # A(angles, lam) at the current parameters
    total = (cfg.count - 1) * cfg.stride
    for t in range(1, total + 1):
        d_ang = rng.standard_normal(len(angles))
        d_lam = rng.standard_normal(cfg.n)

        def gap(h, ref=cur_ref, da=d_ang, dl=d_lam):
            return float(np.linalg.norm(struct.matrix(angles + h * da, lam + h * dl) - ref)) - eps

        hi = eps / max(1e-300, float(np.linalg.norm(d_lam)))
        while gap(hi) < 0:
            hi *= 2.0
        h = brentq(gap, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=200)
        angles = angles + h * d_ang
        lam = lam + h * d_lam
        new_ref = struct.matrix(angles, lam)
        delta = new_ref - cur_ref
        dn = float(np.linalg.norm(delta))
        if not dn > 0:
            # step below rounding of the parametrization: any unit symmetric direction will do
            delta = rng.standard_normal((cfg.n, cfg.n))
            delta = delta + delta.T
            dn = float(np.linalg.norm(delta))
        s = delta / dn
        a = a + eps * s
        cur_ref = new_ref
        if t % cfg.stride == 0:
            mats.append(a.copy())

    ids = [f"m{k:05d}" for k in range(len(mats))]
    manifest = {
        "generator": "trajectory",
        "config": {**asdict(cfg), "spectrum_range": list(cfg.spectrum_range)},
        "eps_absolute": eps,
        "seed": cfg.seed,
    }
    return MatrixDataset(mats, ids, manifest)


def split(dataset: MatrixDataset, train_fraction: float, seed: int) -> tuple[MatrixDataset, MatrixDataset]:
    """Seeded shuffle split; each side keeps the original relative order."""
    if not 0 < train_fraction < 1:
        raise DatasetError("train_fraction must lie strictly between 0 and 1")
    m = len(dataset)
    n_train = int(round(train_fraction * m))
    if n_train == 0 or n_train == m:
        raise DatasetError(f"split of {m} matrices at {train_fraction} leaves an empty side")
    perm = np.random.default_rng(seed).permutation(m)
    train_idx = sorted(int(k) for k in perm[:n_train])
    test_idx = sorted(int(k) for k in perm[n_train:])
    membership = {
        "seed": seed,
        "train_fraction": train_fraction,
        "train": [dataset.ids[k] for k in train_idx],
        "test": [dataset.ids[k] for k in test_idx],
    }
    train = dataset.subset(train_idx, "train")
    test = dataset.subset(test_idx, "test")
    for part in (train, test):
        part.manifest["split"] = membership
    return train, test


def export_matrices(dataset: MatrixDataset, path) -> None:
    lines = [FILE_TAG, "#manifest " + json.dumps(dataset.manifest, sort_keys=True)]
    for i, m in zip(dataset.ids, dataset.matrices):
        if "," in i or i.startswith("#"):
            raise DatasetError(f"id {i!r} cannot be written")
        vals = ",".join(repr(float(x)) for x in np.asarray(m).ravel())
        lines.append(f"{i},{m.shape[0]},{vals}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def import_matrices(path) -> MatrixDataset:
    """Read a dataset file, validating every record.

    Asymmetric records within 1e-6 are symmetrized as (A + A^T)/2 and listed
    under ``manifest["symmetrized"]``; larger asymmetry is rejected.
    """
    manifest: dict = {}
    mats, ids, fixed = [], [], []
    record = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#manifest "):
                try:
                    manifest = json.loads(line[len("#manifest "):])
                except json.JSONDecodeError as exc:
                    raise DatasetError(f"line {lineno}: bad manifest: {exc}") from exc
                continue
            if line.startswith("#"):
                continue
            parts = line.split(",")
            try:
                n = int(parts[1])
            except (IndexError, ValueError):
                raise DatasetError(f"record {record} (line {lineno}): missing or bad order field")
            if n < 1 or len(parts) != 2 + n * n:
                raise DatasetError(
                    f"record {record} (line {lineno}): expected {n * n} values, got {len(parts) - 2}"
                )
            try:
                vals = np.array([float(x) for x in parts[2:]])
            except ValueError as exc:
                raise DatasetError(f"record {record} (line {lineno}): {exc}") from exc
            if not np.all(np.isfinite(vals)):
                raise DatasetError(f"record {record} (line {lineno}): non-finite value")
            a = vals.reshape(n, n)
            asym = float(np.max(np.abs(a - a.T)))
            if asym > SYM_ACCEPT:
                raise DatasetError(f"record {record} (line {lineno}): asymmetry {asym:.3g} exceeds {SYM_ACCEPT}")
            if asym > 0:
                a = 0.5 * (a + a.T)
                fixed.append(parts[0])
            mats.append(a)
            ids.append(parts[0])
            record += 1
    if fixed:
        manifest = {**manifest, "symmetrized": fixed}
    try:
        return MatrixDataset(mats, ids, manifest)
    except DatasetError as exc:
        raise DatasetError(f"{path}: {exc}") from exc


def check_matrix(a) -> None:
    a = np.asarray(a)
    if not np.all(np.isfinite(a)) or not np.array_equal(a, a.T):
        raise MatrixError("matrix must be finite and exactly symmetric")
