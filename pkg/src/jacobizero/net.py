"""Policy-value network in plain numpy (float64) with hand-written backprop.

Layout::

    input 1 x n x n
    conv1 3x3 -> conv2 3x3 -> conv3 3x3          (shared trunk, ReLU)
    policy: conv4 1x1 (ReLU) -> fc0 -> N logits -> masked softmax
    value:  conv5 1x1 (ReLU) -> fc1 (ReLU) -> fc2 -> tanh

N = n(n-1)/2: only upper-triangle pivots get a logit. Activations are kept
channels-last as (B, n*n, C) so every layer is a single matmul.
"""

from __future__ import annotations

import functools
import hashlib
import io
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = "jz-pvn/1"
MAGIC = b"JZPVNET\x00"
PROB_FLOOR = 1e-12


class CheckpointError(RuntimeError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


@dataclass(frozen=True)
class Arch:
    n: int
    channels: tuple[int, int, int] = (32, 64, 128)
    policy_channels: int = 4
    value_channels: int = 2
    value_hidden: int = 64

    @property
    def n_actions(self) -> int:
        return self.n * (self.n - 1) // 2

    def shapes(self) -> dict[str, tuple[int, ...]]:
        n2 = self.n * self.n
        c1, c2, c3 = self.channels
        pc, vc, h = self.policy_channels, self.value_channels, self.value_hidden
        return {
            "conv1.w": (c1, 1, 3, 3), "conv1.b": (c1,),
            "conv2.w": (c2, c1, 3, 3), "conv2.b": (c2,),
            "conv3.w": (c3, c2, 3, 3), "conv3.b": (c3,),
            "conv4.w": (pc, c3, 1, 1), "conv4.b": (pc,),
            "fc0.w": (pc * n2, self.n_actions), "fc0.b": (self.n_actions,),
            "conv5.w": (vc, c3, 1, 1), "conv5.b": (vc,),
            "fc1.w": (vc * n2, h), "fc1.b": (h,),
            "fc2.w": (h, 1), "fc2.b": (1,),
        }

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Arch":
        d = dict(d)
        d["channels"] = tuple(d["channels"])
        return cls(**d)


@dataclass
class NetParams:
    arch: Arch
    weights: dict[str, np.ndarray]
    version: str = FORMAT_VERSION

    def copy(self) -> "NetParams":
        return NetParams(self.arch, {k: v.copy() for k, v in self.weights.items()}, self.version)

    def validate(self) -> None:
        expected = self.arch.shapes()
        if list(self.weights) != list(expected):
            raise CheckpointShapeError(
                f"layer manifest {list(self.weights)} does not match architecture"
            )
        for name, shape in expected.items():
            w = self.weights[name]
            if w.shape != shape:
                raise CheckpointShapeError(f"{name}: shape {w.shape}, expected {shape}")
            if not np.all(np.isfinite(w)):
                raise CheckpointError(f"{name}: non-finite values")

    def flat(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.weights.values()])

    def norm(self) -> float:
        return float(np.linalg.norm(self.flat()))


def is_weight(name: str) -> bool:
    """Regularized tensors: kernels and matrices, not biases."""
    return name.endswith(".w")


def init_params(arch: Arch, seed: int = 0, head_scale: float = 0.1) -> NetParams:
    """Glorot-uniform weights, zero biases.

    The two output layers (fc0, fc2) are shrunk by ``head_scale`` so that a
    fresh network starts close to a uniform policy and a zero value.
    """
    rng = np.random.default_rng(seed)
    weights = {}
    for name, shape in arch.shapes().items():
        if not is_weight(name):
            weights[name] = np.zeros(shape)
            continue
        if len(shape) == 4:
            rf = shape[2] * shape[3]
            fan_out, fan_in = shape[0] * rf, shape[1] * rf
        else:
            fan_in, fan_out = shape
        k = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-k, k, size=shape)
        if name in ("fc0.w", "fc2.w"):
            w *= head_scale
        weights[name] = w
    return NetParams(arch, weights)


# -- layers --------------------------------------------------------------------


@functools.lru_cache(maxsize=None)
def _shift_matrix(n: int) -> np.ndarray:
    """(9 n^2, n^2) 0/1 matrix gathering zero-padded 3x3 neighbourhoods.

    Row ``9 p + k`` picks the k-th neighbour (row-major over the 3x3 window)
    of grid position ``p``.
    """
    s = np.zeros((9 * n * n, n * n))
    for r in range(n):
        for c in range(n):
            p = r * n + c
            for k in range(9):
                rr, cc = r + k // 3 - 1, c + k % 3 - 1
                if 0 <= rr < n and 0 <= cc < n:
                    s[9 * p + k, rr * n + cc] = 1.0
    s.setflags(write=False)
    return s


def _im2col3(h: np.ndarray) -> np.ndarray:
    """(B, n^2, C) -> (B, n^2, 9C) patches for a 3x3 same-padded conv."""
    b, nn, c = h.shape
    n = int(round(nn ** 0.5))
    return (_shift_matrix(n) @ h).reshape(b, nn, 9 * c)


def _col2im3(dcols: np.ndarray, c: int) -> np.ndarray:
    b, nn, _ = dcols.shape
    n = int(round(nn ** 0.5))
    return _shift_matrix(n).T @ dcols.reshape(b, 9 * nn, c)


def _kmat(w: np.ndarray) -> np.ndarray:
    """(Cout, Cin, kh, kw) kernel -> (kh*kw*Cin, Cout) matrix matching im2col order."""
    cout = w.shape[0]
    return w.transpose(2, 3, 1, 0).reshape(-1, cout)


def _kmat_grad(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    cout, cin, kh, kw = shape
    return g.reshape(kh, kw, cin, cout).transpose(3, 2, 0, 1)


def _masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    z = np.where(mask, logits, -np.inf)
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    return e / np.sum(e, axis=-1, keepdims=True)


def _forward(params: NetParams, x: np.ndarray, mask: np.ndarray, keep: bool):
    """Batched forward. ``x`` is (B, 1, n, n); returns p, v and a cache."""
    w = params.weights
    b, _, n, _ = x.shape
    h = x.reshape(b, n * n, 1)
    cache = {}
    for layer in ("conv1", "conv2", "conv3"):
        cols = _im2col3(h)
        pre = cols @ _kmat(w[layer + ".w"]) + w[layer + ".b"]
        if keep:
            cache[layer] = (cols, pre, h.shape[-1])
        h = np.maximum(pre, 0.0)
    trunk = h
    # policy head
    pre4 = trunk @ _kmat(w["conv4.w"]) + w["conv4.b"]
    a4 = np.maximum(pre4, 0.0).reshape(b, -1)
    logits = a4 @ w["fc0.w"] + w["fc0.b"]
    p = _masked_softmax(logits, mask)
    # value head
    pre5 = trunk @ _kmat(w["conv5.w"]) + w["conv5.b"]
    a5 = np.maximum(pre5, 0.0).reshape(b, -1)
    pre1 = a5 @ w["fc1.w"] + w["fc1.b"]
    a1 = np.maximum(pre1, 0.0)
    v = np.tanh(a1 @ w["fc2.w"] + w["fc2.b"])[:, 0]
    if keep:
        cache.update(trunk=trunk, pre4=pre4, a4=a4, pre5=pre5, a5=a5, pre1=pre1, a1=a1)
    return p, v, cache


class CompiledNet:
    """Inference-only view of a frozen parameter snapshot.

    Kernel matrices are laid out once, which makes single-state evaluation
    inside tree search several times cheaper than :func:`forward`. The
    snapshot is copied, so later edits to ``params`` are not seen.
    """

    def __init__(self, params: NetParams):
        params.validate()
        self.arch = params.arch
        w = params.weights
        self._conv = [(_kmat(w[f"{l}.w"]).copy(), w[f"{l}.b"].copy()) for l in ("conv1", "conv2", "conv3")]
        self._k4, self._b4 = _kmat(w["conv4.w"]).copy(), w["conv4.b"].copy()
        self._k5, self._b5 = _kmat(w["conv5.w"]).copy(), w["conv5.b"].copy()
        self._fc = {k: w[k].copy() for k in ("fc0.w", "fc0.b", "fc1.w", "fc1.b", "fc2.w", "fc2.b")}
        n = self.arch.n
        self._shift = _shift_matrix(n)
        self._nn = n * n

    def evaluate(self, state: np.ndarray, legal_mask: np.ndarray) -> tuple[np.ndarray, float]:
        """Same result as :func:`forward` for one (1, n, n) state."""
        nn = self._nn
        h = np.asarray(state, dtype=np.float64).reshape(nn, 1)
        for k, b in self._conv:
            h = np.maximum((self._shift @ h).reshape(nn, -1) @ k + b, 0.0)
        fc = self._fc
        logits = np.maximum(h @ self._k4 + self._b4, 0.0).reshape(-1) @ fc["fc0.w"] + fc["fc0.b"]
        a1 = np.maximum(np.maximum(h @ self._k5 + self._b5, 0.0).reshape(-1) @ fc["fc1.w"] + fc["fc1.b"], 0.0)
        v = float(np.tanh(a1 @ fc["fc2.w"] + fc["fc2.b"])[0])
        mask = np.asarray(legal_mask, dtype=bool)
        if not mask.any():
            raise ValueError("legal mask has no legal action")
        z = np.where(mask, logits, -np.inf)
        e = np.where(mask, np.exp(z - z.max()), 0.0)
        return e / e.sum(), v


def _check_inputs(params: NetParams, x: np.ndarray, mask: np.ndarray):
    n = params.arch.n
    x = np.asarray(x, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if x.ndim == 2:
        x = x[None]
    if x.ndim == 3:
        x = x[None]
    if mask.ndim == 1:
        mask = mask[None]
    if x.shape[1:] != (1, n, n):
        raise ValueError(f"state shape {x.shape[1:]} does not match order {n}")
    if mask.shape != (x.shape[0], params.arch.n_actions):
        raise ValueError(f"mask shape {mask.shape} does not match {params.arch.n_actions} actions")
    if not np.all(mask.any(axis=1)):
        raise ValueError("legal mask has no legal action")
    return x, mask


def forward(params: NetParams, state: np.ndarray, legal_mask: np.ndarray) -> tuple[np.ndarray, float]:
    """Policy over flat actions (zero off-mask) and value in [-1, 1] for one state."""
    x, mask = _check_inputs(params, state, legal_mask)
    if x.shape[0] != 1:
        raise ValueError("forward takes a single state; use forward_batch")
    p, v, _ = _forward(params, x, mask, keep=False)
    return p[0], float(v[0])


def forward_batch(params: NetParams, states: np.ndarray, masks: np.ndarray):
    x, mask = _check_inputs(params, states, masks)
    p, v, _ = _forward(params, x, mask, keep=False)
    return p, v


# -- loss and gradient -----------------------------------------------------------


@dataclass
class TrainBatch:
    states: np.ndarray  # (B, 1, n, n)
    masks: np.ndarray  # (B, N) bool
    target_policies: np.ndarray  # (B, N)
    target_values: np.ndarray  # (B,)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.masks = np.asarray(self.masks, dtype=bool)
        self.target_policies = np.asarray(self.target_policies, dtype=np.float64)
        self.target_values = np.asarray(self.target_values, dtype=np.float64)
        b = len(self.states)
        if not (len(self.masks) == len(self.target_policies) == len(self.target_values) == b):
            raise ValueError("batch components have different lengths")
        if b == 0:
            raise ValueError("empty batch")

    def __len__(self) -> int:
        return len(self.states)


def _loss_terms(params, batch, c_reg, keep):
    x, mask = _check_inputs(params, batch.states, batch.masks)
    p, v, cache = _forward(params, x, mask, keep)
    pi, z = batch.target_policies, batch.target_values
    floored = np.where(p >= PROB_FLOOR, p, PROB_FLOOR)
    value_loss = float(np.mean((z - v) ** 2))
    policy_loss = float(np.mean(-np.sum(pi * np.log(floored), axis=1)))
    reg = c_reg * sum(float(np.sum(w * w)) for k, w in params.weights.items() if is_weight(k))
    return value_loss, policy_loss, reg, p, v, cache, x, mask


def loss(params: NetParams, batch: TrainBatch, c_reg: float = 1e-4) -> float:
    """mean[(z - v)^2 - pi . log p] + c_reg * sum of squared weights."""
    if c_reg < 0:
        raise ValueError("c_reg must be non-negative")
    vl, pl, reg, *_ = _loss_terms(params, batch, c_reg, keep=False)
    return vl + pl + reg


def loss_parts(params: NetParams, batch: TrainBatch, c_reg: float = 1e-4) -> dict[str, float]:
    vl, pl, reg, *_ = _loss_terms(params, batch, c_reg, keep=False)
    return {"value": vl, "policy": pl, "reg": reg, "total": vl + pl + reg}


def grad(params: NetParams, batch: TrainBatch, c_reg: float = 1e-4) -> dict[str, np.ndarray]:
    """Analytic gradient of :func:`loss` with respect to every tensor."""
    if c_reg < 0:
        raise ValueError("c_reg must be non-negative")
    _, _, _, p, v, cache, x, mask = _loss_terms(params, batch, c_reg, keep=True)
    w = params.weights
    b = x.shape[0]
    pi, z = batch.target_policies, batch.target_values
    g = {}

    # policy: d/dlogits of -sum pi log max(p, eps), through the masked softmax
    dp = np.where(p >= PROB_FLOOR, -pi / np.where(p > 0, p, 1.0), 0.0) / b
    dlogits = p * (dp - np.sum(p * dp, axis=1, keepdims=True))
    g["fc0.w"] = cache["a4"].T @ dlogits
    g["fc0.b"] = dlogits.sum(0)
    da4 = (dlogits @ w["fc0.w"].T).reshape(cache["pre4"].shape) * (cache["pre4"] > 0)
    trunk = cache["trunk"]
    flat_trunk = trunk.reshape(-1, trunk.shape[-1])
    g["conv4.w"] = _kmat_grad(flat_trunk.T @ da4.reshape(-1, da4.shape[-1]), w["conv4.w"].shape)
    g["conv4.b"] = da4.sum((0, 1))
    dtrunk = da4 @ _kmat(w["conv4.w"]).T

    # value
    dpre2 = (2.0 * (v - z) / b * (1.0 - v * v))[:, None]
    g["fc2.w"] = cache["a1"].T @ dpre2
    g["fc2.b"] = dpre2.sum(0)
    dpre1 = (dpre2 @ w["fc2.w"].T) * (cache["pre1"] > 0)
    g["fc1.w"] = cache["a5"].T @ dpre1
    g["fc1.b"] = dpre1.sum(0)
    da5 = (dpre1 @ w["fc1.w"].T).reshape(cache["pre5"].shape) * (cache["pre5"] > 0)
    g["conv5.w"] = _kmat_grad(flat_trunk.T @ da5.reshape(-1, da5.shape[-1]), w["conv5.w"].shape)
    g["conv5.b"] = da5.sum((0, 1))
    dtrunk = dtrunk + da5 @ _kmat(w["conv5.w"]).T

    dh = dtrunk
    for layer in ("conv3", "conv2", "conv1"):
        cols, pre, cin = cache[layer]
        dpre = dh * (pre > 0)
        cout = dpre.shape[-1]
        g[layer + ".w"] = _kmat_grad(
            cols.reshape(-1, cols.shape[-1]).T @ dpre.reshape(-1, cout), w[layer + ".w"].shape
        )
        g[layer + ".b"] = dpre.sum((0, 1))
        if layer != "conv1":
            dh = _col2im3(dpre @ _kmat(w[layer + ".w"]).T, cin)

    out = {}
    for name in w:
        gi = g[name]
        if is_weight(name) and c_reg:
            gi = gi + 2.0 * c_reg * w[name]
        out[name] = gi
    return out


# -- optimizers ----------------------------------------------------------------


def sgd_step(params: NetParams, grads: dict[str, np.ndarray], learning_rate: float) -> NetParams:
    """theta' = theta - lr * g, as a new parameter set."""
    if not learning_rate >= 0:
        raise ValueError("learning rate must be non-negative")
    new = {}
    for name, w in params.weights.items():
        gi = grads[name]
        if gi.shape != w.shape:
            raise ValueError(f"{name}: gradient shape {gi.shape} != {w.shape}")
        new[name] = w - learning_rate * gi
    return NetParams(params.arch, new, params.version)


@dataclass
class Optimizer:
    """Stateful wrapper: ``sgd``, ``momentum`` or ``adam``."""

    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    state: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: NetParams, grads: dict[str, np.ndarray]) -> NetParams:
        lr = self.learning_rate
        if self.kind == "sgd" or lr == 0.0:
            return sgd_step(params, grads, lr)
        self.t += 1
        new = {}
        for name, w in params.weights.items():
            gi = grads[name]
            if self.kind == "momentum":
                m = self.state.get("m." + name, np.zeros_like(w))
                m = self.beta1 * m + gi
                self.state["m." + name] = m
                new[name] = w - lr * m
            elif self.kind == "adam":
                m = self.state.get("m." + name, np.zeros_like(w))
                s = self.state.get("s." + name, np.zeros_like(w))
                m = self.beta1 * m + (1 - self.beta1) * gi
                s = self.beta2 * s + (1 - self.beta2) * gi * gi
                self.state["m." + name], self.state["s." + name] = m, s
                mh = m / (1 - self.beta1 ** self.t)
                sh = s / (1 - self.beta2 ** self.t)
                new[name] = w - lr * mh / (np.sqrt(sh) + self.eps)
            else:
                raise ValueError(f"unknown optimizer {self.kind!r}")
        return NetParams(params.arch, new, params.version)

    def to_arrays(self) -> dict[str, np.ndarray]:
        out = {"opt." + k: v for k, v in self.state.items()}
        out["opt_t"] = np.array(self.t)
        return out

    def load_arrays(self, arrays) -> None:
        self.t = int(arrays["opt_t"])
        self.state = {k[4:]: np.array(arrays[k]) for k in arrays if k.startswith("opt.")}


# -- checkpoints -----------------------------------------------------------------
#
# Byte layout (all integers little-endian):
#   8 bytes   magic  b"JZPVNET\0"
#   4 bytes   uint32 header length H
#   H bytes   UTF-8 JSON header {version, arch, layers: [{name, shape}], meta}
#   payload   each layer in manifest order, float64 little-endian, C order
#   32 bytes  SHA-256 of everything above


def save_checkpoint(params: NetParams, path, meta: dict | None = None) -> None:
    params.validate()
    header = {
        "version": params.version,
        "arch": params.arch.to_dict(),
        "layers": [{"name": k, "shape": list(v.shape)} for k, v in params.weights.items()],
        "meta": meta or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(hbytes)))
    buf.write(hbytes)
    for w in params.weights.values():
        buf.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
    body = buf.getvalue()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(body)
        fh.write(hashlib.sha256(body).digest())
    tmp.replace(path)


def read_checkpoint_header(path) -> dict:
    data = Path(path).read_bytes()
    return _parse_header(data)[0]


def _parse_header(data: bytes):
    if data[:8] != MAGIC:
        raise CheckpointError("not a policy-value checkpoint (bad magic)")
    if len(data) < 12:
        raise CheckpointShapeError("truncated checkpoint header")
    (hlen,) = struct.unpack("<I", data[8:12])
    if len(data) < 12 + hlen:
        raise CheckpointShapeError("truncated checkpoint header")
    try:
        header = json.loads(data[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from exc
    return header, 12 + hlen


def load_checkpoint(path) -> NetParams:
    data = Path(path).read_bytes()
    header, off = _parse_header(data)
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {header.get('version')!r}, expected {FORMAT_VERSION!r}"
        )
    arch = Arch.from_dict(header["arch"])
    expected = arch.shapes()
    layers = header["layers"]
    if [l["name"] for l in layers] != list(expected) or any(
        tuple(l["shape"]) != expected[l["name"]] for l in layers
    ):
        raise CheckpointShapeError("layer manifest inconsistent with architecture")
    payload = sum(int(np.prod(s)) for s in expected.values()) * 8
    if len(data) != off + payload + 32:
        raise CheckpointShapeError(
            f"checkpoint holds {len(data) - off - 32} payload bytes, expected {payload}"
        )
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointChecksumError("checkpoint checksum mismatch")
    weights = {}
    for name, shape in expected.items():
        size = int(np.prod(shape)) * 8
        weights[name] = np.frombuffer(data, dtype="<f8", count=size // 8, offset=off).reshape(shape).astype(np.float64)
        off += size
    params = NetParams(arch, weights, header["version"])
    params.validate()
    return params
