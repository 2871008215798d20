"""Dense networks with hand-written backprop, Adam, and a squashed Gaussian head.

Parameters of an :class:`Mlp` live in one flat float64 vector; per-layer
weight and bias arrays are views into it, so optimizers and Polyak averaging
act on ``net.params`` directly.

The policy squashes a Gaussian sample ``u`` into (0, 1) with
``a = (tanh(u) + 1) / 2``. Its log-Jacobian is
``log(da/du) = log(1 - tanh(u)**2) - log 2 = log 2 - 2u - 2*softplus(-2u)``,
which stays finite for any finite ``u``.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
_LOG2 = float(np.log(2.0))
_LOG_SQRT_2PI = 0.5 * float(np.log(2.0 * np.pi))


class ShapeError(ValueError):
    pass


class StateError(RuntimeError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class CheckpointError(ValueError):
    pass


_ACTIVATIONS = ("relu", "tanh")


class Mlp:
    """Fully connected network: hidden activation on every layer but the last."""

    def __init__(self, sizes, rng: np.random.Generator | None = None,
                 activation: str = "relu", out_scale: float = 1.0, dtype=np.float64):
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ShapeError(f"invalid layer sizes {sizes}")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {_ACTIVATIONS}")
        self.sizes = sizes
        self.activation = activation
        self.params = np.zeros(self.n_params_for(sizes), dtype=np.dtype(dtype))
        self._layers = []
        offset = 0
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w = self.params[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            b = self.params[offset:offset + fan_out]
            offset += fan_out
            self._layers.append((w, b))
        self._cache = None
        if rng is not None:
            self.init(rng, out_scale)

    @staticmethod
    def n_params_for(sizes) -> int:
        return sum((i + 1) * o for i, o in zip(sizes[:-1], sizes[1:]))

    @property
    def n_params(self) -> int:
        return self.params.size

    @property
    def layers(self):
        return self._layers

    def init(self, rng: np.random.Generator, out_scale: float = 1.0) -> None:
        # He-uniform limit sqrt(6 / fan_in); biases start at zero.
        for k, (w, b) in enumerate(self._layers):
            limit = np.sqrt(6.0 / w.shape[0])
            if k == len(self._layers) - 1:
                limit *= out_scale
            w[...] = rng.uniform(-limit, limit, size=w.shape)
            b[...] = 0.0

    def copy(self) -> "Mlp":
        other = Mlp(self.sizes, activation=self.activation, dtype=self.params.dtype)
        other.params[:] = self.params
        return other

    def _act(self, z):
        return np.maximum(z, 0.0) if self.activation == "relu" else np.tanh(z)

    def _act_grad(self, z, h):
        return (z > 0.0).astype(z.dtype) if self.activation == "relu" else 1.0 - h * h

    def forward(self, x, keep_cache: bool = True):
        x = np.asarray(x, dtype=self.params.dtype)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise ShapeError(f"expected input width {self.sizes[0]}, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ShapeError("input contains NaN or Inf")
        inputs, pre = [], []
        h = x
        last = len(self._layers) - 1
        for k, (w, b) in enumerate(self._layers):
            inputs.append(h)
            z = h @ w + b
            if k < last:
                pre.append(z)
                h = self._act(z)
            else:
                h = z
        if keep_cache:
            self._cache = (inputs, pre, single)
        return h[0] if single else h

    def backward(self, grad_out):
        """Gradients of ``sum(grad_out * output)`` w.r.t. parameters and input."""
        if self._cache is None:
            raise StateError("backward called without a cached forward pass")
        inputs, pre, single = self._cache
        g = np.asarray(grad_out, dtype=self.params.dtype)
        if single:
            g = g[None, :]
        if g.shape != (inputs[0].shape[0], self.sizes[-1]):
            raise ShapeError(f"loss gradient shape {g.shape} does not match the output")
        grad = np.empty_like(self.params)
        offset_end = grad.size
        for k in range(len(self._layers) - 1, -1, -1):
            w, _ = self._layers[k]
            fan_in, fan_out = w.shape
            gb = g.sum(axis=0)
            gw = inputs[k].T @ g
            grad[offset_end - fan_out:offset_end] = gb
            offset_end -= fan_out
            grad[offset_end - fan_in * fan_out:offset_end] = gw.ravel()
            offset_end -= fan_in * fan_out
            g = g @ w.T
            if k > 0:
                g = g * self._act_grad(pre[k - 1], inputs[k])
        return grad, (g[0] if single else g)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(params), np.zeros_like(params))


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float) -> None:
    """In-place bias-corrected Adam update. Rejects non-finite gradients untouched."""
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ShapeError("parameter, gradient and moment lengths differ")
    if not np.all(np.isfinite(grads)):
        raise NonFiniteError("non-finite gradient; update rejected")
    state.t += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grads
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    params -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ----------------------------------------------------------------------------- policy head

@dataclass
class GaussianPolicyOutput:
    mean: np.ndarray
    log_std: np.ndarray
    noise: np.ndarray
    pre_squash: np.ndarray
    sampled_action: np.ndarray
    log_prob: np.ndarray


def squash(u):
    return 0.5 * (np.tanh(u) + 1.0)


def log_squash_jacobian(u):
    u = np.asarray(u, dtype=float)
    return _LOG2 - 2.0 * u - 2.0 * np.logaddexp(0.0, -2.0 * u)


_A_LO = np.finfo(float).tiny
_A_HI = 1.0 - np.finfo(float).epsneg


def sample_squashed_gaussian(mean, log_std, rng: np.random.Generator | None = None,
                             deterministic: bool = False) -> GaussianPolicyOutput:
    mean = np.asarray(mean, dtype=float)
    log_std = np.clip(np.asarray(log_std, dtype=float), LOG_STD_MIN, LOG_STD_MAX)
    if deterministic:
        noise = np.zeros_like(mean)
    else:
        if rng is None:
            raise ValueError("stochastic sampling needs an rng")
        noise = rng.standard_normal(mean.shape)
    u = mean + np.exp(log_std) * noise
    log_prob = -0.5 * noise ** 2 - log_std - _LOG_SQRT_2PI - log_squash_jacobian(u)
    action = np.clip(squash(u), _A_LO, _A_HI)
    return GaussianPolicyOutput(mean, log_std, noise, u, action, log_prob)


def squashed_log_density(action, mean, log_std):
    """Log density on (0, 1) of the squashed Gaussian evaluated at ``action``."""
    a = np.asarray(action, dtype=float)
    log_std = np.clip(np.asarray(log_std, dtype=float), LOG_STD_MIN, LOG_STD_MAX)
    u = np.arctanh(2.0 * a - 1.0)
    z = (u - mean) / np.exp(log_std)
    return -0.5 * z ** 2 - log_std - _LOG_SQRT_2PI - log_squash_jacobian(u)


# ----------------------------------------------------------------------------- checkpoints
#
# Layout (all integers little-endian):
#   8 bytes   magic  b"FLEXSAC\x00"
#   u32       format version
#   u32       header length H
#   H bytes   UTF-8 JSON header; "arrays" lists [name, element count] in payload order
#   payload   float64 little-endian arrays, concatenated in header order
#             (float32 networks are widened exactly and narrowed back on load)
#   u32       CRC-32 of every preceding byte

MAGIC = b"FLEXSAC\x00"
FORMAT_VERSION = 1


def write_container(path: str | Path, header: dict, arrays: list[tuple[str, np.ndarray]]) -> None:
    header = dict(header, arrays=[[name, int(arr.size)] for name, arr in arrays])
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = bytearray(MAGIC)
    blob += struct.pack("<II", FORMAT_VERSION, len(head))
    blob += head
    for _, arr in arrays:
        blob += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    blob += struct.pack("<I", zlib.crc32(blob))
    Path(path).write_bytes(bytes(blob))


def read_container(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < len(MAGIC) + 12 or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) != crc:
        raise CheckpointError(f"{path}: checksum mismatch (truncated or corrupted)")
    version, head_len = struct.unpack("<II", blob[len(MAGIC):len(MAGIC) + 8])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    pos = len(MAGIC) + 8
    header = json.loads(blob[pos:pos + head_len].decode("utf-8"))
    pos += head_len
    arrays = {}
    for name, count in header["arrays"]:
        nbytes = 8 * count
        if pos + nbytes > len(blob) - 4:
            raise CheckpointError(f"{path}: payload shorter than header declares")
        arrays[name] = np.frombuffer(blob[pos:pos + nbytes], dtype="<f8").astype(float)
        pos += nbytes
    if pos != len(blob) - 4:
        raise CheckpointError(f"{path}: trailing bytes after payload")
    return header, arrays


def save_mlp(net: Mlp, path: str | Path) -> None:
    write_container(path, {"kind": "mlp", "sizes": list(net.sizes), "activation": net.activation,
                           "dtype": net.params.dtype.name}, [("params", net.params)])


def load_mlp(path: str | Path) -> Mlp:
    header, arrays = read_container(path)
    if header.get("kind") != "mlp":
        raise CheckpointError(f"{path}: not an MLP checkpoint")
    net = Mlp(header["sizes"], activation=header["activation"],
              dtype=header.get("dtype", "float64"))
    if arrays["params"].size != net.n_params:
        raise CheckpointError(f"{path}: parameter count does not match layer sizes")
    net.params[:] = arrays["params"]
    return net
