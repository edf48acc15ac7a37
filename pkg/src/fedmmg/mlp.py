"""Small tanh multilayer perceptrons with hand-written backprop and Adam.

Parameters live in one flat float64 array per network; ``unpack`` returns
per-layer ``(W, b)`` views into it, with ``W`` of shape ``(n_in, n_out)``.
An actor-critic pair is exchanged as a single :class:`ParamVector` tagged
with a hash of both topologies.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np


class IntegrityError(ValueError):
    """A parameter vector does not belong to the expected topology."""


class NonFiniteError(ArithmeticError):
    pass


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths from input to output; tanh on hidden layers, identity output."""

    layer_sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"bad layer sizes {self.layer_sizes}")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def shapes(self) -> list[tuple[int, int]]:
        s = self.layer_sizes
        return list(zip(s[:-1], s[1:]))

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.shapes)

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]


def unpack(spec: MlpSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    if params.shape != (spec.n_params,):
        raise ValueError(f"expected {spec.n_params} parameters, got {params.shape}")
    layers, k = [], 0
    for n_in, n_out in spec.shapes:
        W = params[k : k + n_in * n_out].reshape(n_in, n_out)
        k += n_in * n_out
        b = params[k : k + n_out]
        k += n_out
        layers.append((W, b))
    return layers


def init_params(spec: MlpSpec, rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform weights, zero biases."""
    parts = []
    for n_in, n_out in spec.shapes:
        lim = np.sqrt(6.0 / (n_in + n_out))
        parts.append(rng.uniform(-lim, lim, size=n_in * n_out))
        parts.append(np.zeros(n_out))
    return np.concatenate(parts)


def _as_batch(spec: MlpSpec, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != spec.n_in:
        raise ValueError(f"input width {x.shape[1]} != {spec.n_in}")
    return x, single


def forward_cached(spec: MlpSpec, params: np.ndarray, x) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward pass returning the output and every layer's input activation."""
    h, _ = _as_batch(spec, x)
    acts = [h]
    layers = unpack(spec, params)
    for i, (W, b) in enumerate(layers):
        z = h @ W + b
        h = z if i == len(layers) - 1 else np.tanh(z)
        acts.append(h)
    return h, acts


def forward(spec: MlpSpec, params: np.ndarray, x) -> np.ndarray:
    out, _ = forward_cached(spec, params, x)
    return out[0] if np.asarray(x).ndim == 1 else out


def backward(spec: MlpSpec, params: np.ndarray, x, output_grad, acts=None) -> tuple[np.ndarray, np.ndarray]:
    """Vector-Jacobian product of the forward map.

    ``output_grad`` has the output's shape; for a batch the parameter
    gradient is summed over rows. Returns ``(param_grad, input_grad)``.
    """
    xb, single = _as_batch(spec, x)
    g = np.atleast_2d(np.asarray(output_grad, dtype=float))
    if g.shape != (xb.shape[0], spec.n_out):
        raise ValueError(f"output_grad shape {g.shape} != {(xb.shape[0], spec.n_out)}")
    if acts is None:
        _, acts = forward_cached(spec, params, xb)
    layers = unpack(spec, params)
    grad = np.empty_like(params)
    gl = unpack(spec, grad)
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        if i < len(layers) - 1:
            g = g * (1.0 - acts[i + 1] ** 2)
        gl[i][0][...] = acts[i].T @ g
        gl[i][1][...] = g.sum(axis=0)
        g = g @ W.T
    return grad, (g[0] if single else g)


@dataclass
class AdamState:
    lr: float
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, lr: float) -> "AdamState":
        return cls(lr=lr, m=np.zeros(n), v=np.zeros(n))

    def reset(self) -> None:
        self.m = np.zeros_like(self.m)
        self.v = np.zeros_like(self.v)
        self.step = 0


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam descent step. Pure: inputs are not modified."""
    if grads.shape != params.shape or state.m.shape != params.shape:
        raise ValueError("shape mismatch between params, grads and Adam moments")
    if not np.all(np.isfinite(grads)):
        raise NonFiniteError("non-finite gradient passed to Adam")
    t = state.step + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grads
    v = state.beta2 * state.v + (1 - state.beta2) * grads * grads
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    new = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, replace(state, m=m, v=v, step=t)


@dataclass(frozen=True)
class AgentSpec:
    """Actor and critic topologies; the actor also owns ``n_log_std`` free parameters."""

    actor: MlpSpec
    critic: MlpSpec
    n_log_std: int

    @classmethod
    def build(cls, n_obs: int, n_act: int, hidden=(64, 64)) -> "AgentSpec":
        return cls(MlpSpec((n_obs, *hidden, n_act)), MlpSpec((n_obs, *hidden, 1)), n_act)

    @property
    def n_actor(self) -> int:
        return self.actor.n_params + self.n_log_std

    @property
    def n_params(self) -> int:
        return self.n_actor + self.critic.n_params

    @property
    def spec_hash(self) -> str:
        desc = f"actor={self.actor.layer_sizes};critic={self.critic.layer_sizes};log_std={self.n_log_std}"
        return hashlib.sha256(desc.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class ParamVector:
    values: np.ndarray
    spec_hash: str

    def __post_init__(self):
        vals = np.array(self.values, dtype="<f8")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if not np.all(np.isfinite(vals)):
            raise NonFiniteError("parameter vector has non-finite entries")

    def __len__(self) -> int:
        return self.values.size


def flatten(actor: np.ndarray, critic: np.ndarray, spec: AgentSpec) -> ParamVector:
    if actor.shape != (spec.n_actor,) or critic.shape != (spec.critic.n_params,):
        raise IntegrityError("actor/critic arrays do not match the agent topology")
    return ParamVector(np.concatenate([actor, critic]), spec.spec_hash)


def unflatten(vec: ParamVector, spec: AgentSpec) -> tuple[np.ndarray, np.ndarray]:
    if vec.spec_hash != spec.spec_hash:
        raise IntegrityError(f"spec hash {vec.spec_hash} != expected {spec.spec_hash}")
    if len(vec) != spec.n_params:
        raise IntegrityError(f"vector length {len(vec)} != expected {spec.n_params}")
    v = vec.values
    return v[: spec.n_actor].copy(), v[spec.n_actor :].copy()


_MAGIC = b"FMMGCKPT"
_VERSION = 1


def save_checkpoint(path, vec: ParamVector, spec: AgentSpec, step: int = 0) -> None:
    """Binary checkpoint: magic, version, both layer-size lists, hash, step, float64 LE values."""
    a, c = spec.actor.layer_sizes, spec.critic.layer_sizes
    head = _MAGIC + struct.pack("<B", _VERSION)
    head += struct.pack(f"<I{len(a)}I", len(a), *a)
    head += struct.pack(f"<I{len(c)}I", len(c), *c)
    head += struct.pack("<I", spec.n_log_std)
    head += vec.spec_hash.encode("ascii").ljust(16, b"\0")
    head += struct.pack("<QQ", step, len(vec))
    Path(path).write_bytes(head + vec.values.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[ParamVector, AgentSpec, int]:
    buf = Path(path).read_bytes()
    if not buf.startswith(_MAGIC):
        raise IntegrityError(f"{path} is not a checkpoint file")
    k = len(_MAGIC)
    (version,) = struct.unpack_from("<B", buf, k)
    if version != _VERSION:
        raise IntegrityError(f"unsupported checkpoint version {version}")
    k += 1
    sizes = []
    for _ in range(2):
        (n,) = struct.unpack_from("<I", buf, k)
        k += 4
        sizes.append(struct.unpack_from(f"<{n}I", buf, k))
        k += 4 * n
    (n_log_std,) = struct.unpack_from("<I", buf, k)
    k += 4
    spec_hash = buf[k : k + 16].rstrip(b"\0").decode("ascii")
    k += 16
    step, n = struct.unpack_from("<QQ", buf, k)
    k += 16
    spec = AgentSpec(MlpSpec(sizes[0]), MlpSpec(sizes[1]), n_log_std)
    if spec.spec_hash != spec_hash:
        raise IntegrityError("checkpoint hash does not match its recorded topology")
    values = np.frombuffer(buf, dtype="<f8", count=n, offset=k)
    return ParamVector(values, spec_hash), spec, step
