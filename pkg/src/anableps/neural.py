"""Minimal single-sample neural substrate: dense, conv1d, GRU, softmax.

Everything runs in float64 on numpy.  Layers are stateless in forward
(they return an explicit cache) and accumulate parameter gradients into
``layer.grads`` during backward.  A :class:`Network` wires layers into a
small DAG with named inputs, concat nodes, and named outputs; parameters
are exposed as one flat vector for the Adam optimizer and for checkpoints.

Shapes: dense layers take 1-D vectors; conv1d and GRU take ``(channels,
length)`` arrays, where the GRU reads the array as ``length`` successive
``channels``-dimensional inputs and returns its final hidden state.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


def _he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    limit = math.sqrt(6.0 / max(fan_in, 1))
    return rng.uniform(-limit, limit, size=shape)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0.0)


_ACTIVATIONS = ("linear", "relu", "sigmoid", "tanh", "softplus")


def _apply_activation(name: str, z: np.ndarray) -> np.ndarray:
    if name == "linear":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return _sigmoid(z)
    if name == "tanh":
        return np.tanh(z)
    if name == "softplus":
        return _softplus(z)
    raise ValueError(f"unknown activation {name!r}")


def _activation_grad(name: str, z: np.ndarray, y: np.ndarray) -> np.ndarray:
    if name == "linear":
        return np.ones_like(z)
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    if name == "sigmoid":
        return y * (1.0 - y)
    if name == "tanh":
        return 1.0 - y * y
    if name == "softplus":
        return _sigmoid(z)
    raise ValueError(f"unknown activation {name!r}")


class Layer:
    """Base class: parameterized op with explicit forward cache."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def _register(self, name: str, value: np.ndarray) -> None:
        self.params[name] = value.astype(np.float64)
        self.grads[name] = np.zeros_like(self.params[name])

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def forward(self, x: np.ndarray):
        raise NotImplementedError

    def backward(self, dy: np.ndarray, cache) -> np.ndarray:
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, activation: str = "linear", rng=None):
        super().__init__()
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.n_in, self.n_out, self.activation = n_in, n_out, activation
        rng = rng if rng is not None else np.random.default_rng(0)
        self._register("W", _he_uniform(rng, (n_out, n_in), n_in))
        self._register("b", np.zeros(n_out))

    def forward(self, x: np.ndarray):
        if x.shape != (self.n_in,):
            raise ValueError(f"dense expected shape ({self.n_in},), got {x.shape}")
        z = self.params["W"] @ x + self.params["b"]
        y = _apply_activation(self.activation, z)
        return y, (x, z, y)

    def backward(self, dy: np.ndarray, cache) -> np.ndarray:
        x, z, y = cache
        dz = dy * _activation_grad(self.activation, z, y)
        self.grads["W"] += np.outer(dz, x)
        self.grads["b"] += dz
        return self.params["W"].T @ dz


class Activation(Layer):
    """Standalone parameter-free activation (relu by default)."""

    def __init__(self, activation: str = "relu"):
        super().__init__()
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation

    def forward(self, x: np.ndarray):
        y = _apply_activation(self.activation, x)
        return y, (x, y)

    def backward(self, dy: np.ndarray, cache) -> np.ndarray:
        x, y = cache
        return dy * _activation_grad(self.activation, x, y)


class Conv1d(Layer):
    """1-D convolution over the trailing (time) axis of a (C, L) input."""

    def __init__(
        self,
        in_channels: int,
        filters: int,
        kernel: int,
        stride: int = 1,
        padding: str = "valid",
        activation: str = "relu",
        rng=None,
    ):
        super().__init__()
        if stride < 1 or kernel < 1:
            raise ValueError("kernel and stride must be >= 1")
        if padding not in ("valid", "same"):
            raise ValueError(f"unknown padding {padding!r}")
        self.in_channels, self.filters = in_channels, filters
        self.kernel, self.stride, self.padding = kernel, stride, padding
        self.activation = activation
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * kernel
        self._register("W", _he_uniform(rng, (filters, in_channels, kernel), fan_in))
        self._register("b", np.zeros(filters))

    def _pad(self, x: np.ndarray) -> tuple[np.ndarray, int]:
        if self.padding == "valid":
            return x, 0
        left = (self.kernel - 1) // 2
        right = self.kernel - 1 - left
        return np.pad(x, ((0, 0), (left, right))), left

    def forward(self, x: np.ndarray):
        if x.ndim != 2 or x.shape[0] != self.in_channels:
            raise ValueError(
                f"conv1d expected ({self.in_channels}, L), got {x.shape}"
            )
        xp, left = self._pad(x)
        if xp.shape[1] < self.kernel:
            raise ValueError("input shorter than kernel under valid padding")
        windows = np.lib.stride_tricks.sliding_window_view(xp, self.kernel, axis=1)
        windows = windows[:, :: self.stride, :]  # (C, L_out, K)
        z = np.einsum("fck,clk->fl", self.params["W"], windows) + self.params["b"][:, None]
        y = _apply_activation(self.activation, z)
        return y, (x.shape, xp, windows, z, y, left)

    def backward(self, dy: np.ndarray, cache) -> np.ndarray:
        x_shape, xp, windows, z, y, left = cache
        dz = dy * _activation_grad(self.activation, z, y)
        self.grads["W"] += np.einsum("fl,clk->fck", dz, windows)
        self.grads["b"] += dz.sum(axis=1)
        dxp = np.zeros_like(xp)
        l_out = dz.shape[1]
        w = self.params["W"]
        for k in range(self.kernel):
            # positions o*stride + k receive W[:, :, k]^T dz[:, o]
            dxp[:, k : k + l_out * self.stride : self.stride] += np.einsum(
                "fl,fc->cl", dz, w[:, :, k]
            )
        if left or dxp.shape[1] != x_shape[1]:
            dxp = dxp[:, left : left + x_shape[1]]
        return dxp


class GRU(Layer):
    """Gated recurrent unit over a (C, L) sequence; outputs the final state."""

    def __init__(self, input_size: int, hidden: int, rng=None):
        super().__init__()
        self.input_size, self.hidden = input_size, hidden
        rng = rng if rng is not None else np.random.default_rng(0)
        for gate in ("z", "r", "c"):
            self._register(f"W{gate}", _he_uniform(rng, (hidden, input_size), input_size))
            self._register(f"U{gate}", _he_uniform(rng, (hidden, hidden), hidden))
            self._register(f"b{gate}", np.zeros(hidden))

    def forward(self, x: np.ndarray, h0: np.ndarray | None = None):
        if x.ndim != 2 or x.shape[0] != self.input_size:
            raise ValueError(f"gru expected ({self.input_size}, L), got {x.shape}")
        p = self.params
        h = np.zeros(self.hidden) if h0 is None else np.asarray(h0, dtype=np.float64)
        steps = []
        for t in range(x.shape[1]):
            xt = x[:, t]
            z = _sigmoid(p["Wz"] @ xt + p["Uz"] @ h + p["bz"])
            r = _sigmoid(p["Wr"] @ xt + p["Ur"] @ h + p["br"])
            c = np.tanh(p["Wc"] @ xt + p["Uc"] @ (r * h) + p["bc"])
            h_new = (1.0 - z) * h + z * c
            steps.append((xt, h, z, r, c))
            h = h_new
        return h, (x.shape, steps)

    def backward(self, dy: np.ndarray, cache) -> np.ndarray:
        x_shape, steps = cache
        p, g = self.params, self.grads
        dx = np.zeros(x_shape)
        dh = dy.copy()
        for t in range(len(steps) - 1, -1, -1):
            xt, h_prev, z, r, c = steps[t]
            dz = dh * (c - h_prev)
            dc = dh * z
            dz_raw = dz * z * (1.0 - z)
            dc_raw = dc * (1.0 - c * c)
            uc_t_dc = p["Uc"].T @ dc_raw
            dr = uc_t_dc * h_prev
            dr_raw = dr * r * (1.0 - r)
            g["Wz"] += np.outer(dz_raw, xt)
            g["Wr"] += np.outer(dr_raw, xt)
            g["Wc"] += np.outer(dc_raw, xt)
            g["Uz"] += np.outer(dz_raw, h_prev)
            g["Ur"] += np.outer(dr_raw, h_prev)
            g["Uc"] += np.outer(dc_raw, r * h_prev)
            g["bz"] += dz_raw
            g["br"] += dr_raw
            g["bc"] += dc_raw
            dx[:, t] = p["Wz"].T @ dz_raw + p["Wr"].T @ dr_raw + p["Wc"].T @ dc_raw
            dh = (
                dh * (1.0 - z)
                + uc_t_dc * r
                + p["Uz"].T @ dz_raw
                + p["Ur"].T @ dr_raw
            )
        return dx


class Softmax(Layer):
    def forward(self, x: np.ndarray):
        shifted = x - np.max(x)
        e = np.exp(shifted)
        y = e / e.sum()
        return y, (y,)

    def backward(self, dy: np.ndarray, cache) -> np.ndarray:
        (y,) = cache
        return y * (dy - float(dy @ y))


class Flatten(Layer):
    def forward(self, x: np.ndarray):
        return x.reshape(-1), (x.shape,)

    def backward(self, dy: np.ndarray, cache) -> np.ndarray:
        (shape,) = cache
        return dy.reshape(shape)


# ---------------------------------------------------------------------------
# Network graph
# ---------------------------------------------------------------------------


@dataclass
class _Node:
    name: str
    kind: str  # "input" | "layer" | "concat"
    layer: Layer | None
    inputs: tuple[str, ...]


class Network:
    """Small acyclic graph of layers with named inputs and outputs.

    Nodes must be added in topological order (every input name must already
    exist).  ``forward`` computes only the ancestors of the requested
    outputs, which lets a two-headed model skip an unused branch.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._by_name: dict[str, _Node] = {}
        self._outputs: tuple[str, ...] = ()

    def add_input(self, name: str) -> None:
        self._add(_Node(name, "input", None, ()))

    def add(self, name: str, layer: Layer, inputs: str | Sequence[str]) -> None:
        names = (inputs,) if isinstance(inputs, str) else tuple(inputs)
        self._add(_Node(name, "layer", layer, names))

    def add_concat(self, name: str, inputs: Sequence[str]) -> None:
        self._add(_Node(name, "concat", None, tuple(inputs)))

    def _add(self, node: _Node) -> None:
        if node.name in self._by_name:
            raise ValueError(f"duplicate node {node.name!r}")
        for dep in node.inputs:
            if dep not in self._by_name:
                raise ValueError(f"node {node.name!r} references unknown {dep!r}")
        self._nodes.append(node)
        self._by_name[node.name] = node

    def set_outputs(self, names: Sequence[str]) -> None:
        for n in names:
            if n not in self._by_name:
                raise ValueError(f"unknown output {n!r}")
        self._outputs = tuple(names)

    @property
    def output_names(self) -> tuple[str, ...]:
        return self._outputs

    def _needed(self, wanted: Sequence[str]) -> set[str]:
        needed: set[str] = set()
        stack = list(wanted)
        while stack:
            name = stack.pop()
            if name in needed:
                continue
            needed.add(name)
            stack.extend(self._by_name[name].inputs)
        return needed

    def forward(
        self, inputs: dict[str, np.ndarray], wanted: Sequence[str] | None = None
    ) -> tuple[dict[str, np.ndarray], dict]:
        wanted = tuple(wanted) if wanted is not None else self._outputs
        if not wanted:
            raise ValueError("network has no outputs configured")
        needed = self._needed(wanted)
        values: dict[str, np.ndarray] = {}
        caches: dict[str, object] = {}
        for node in self._nodes:
            if node.name not in needed:
                continue
            if node.kind == "input":
                if node.name not in inputs:
                    raise ValueError(f"missing input {node.name!r}")
                values[node.name] = np.asarray(inputs[node.name], dtype=np.float64)
            elif node.kind == "concat":
                parts = [np.ravel(values[i]) for i in node.inputs]
                values[node.name] = np.concatenate(parts)
                caches[node.name] = [np.shape(values[i]) for i in node.inputs]
            else:
                y, cache = node.layer.forward(values[node.inputs[0]])
                values[node.name] = y
                caches[node.name] = cache
        out = {name: values[name] for name in wanted}
        return out, {"values": values, "caches": caches, "wanted": wanted}

    def backward(
        self, cache: dict, out_grads: dict[str, np.ndarray]
    ) -> dict[str, np.ndarray]:
        """Accumulate parameter grads; returns gradients w.r.t. the inputs."""
        values, caches = cache["values"], cache["caches"]
        grads: dict[str, np.ndarray] = {}
        for name, g in out_grads.items():
            grads[name] = np.asarray(g, dtype=np.float64).copy()
        input_grads: dict[str, np.ndarray] = {}
        for node in reversed(self._nodes):
            if node.name not in grads:
                continue
            dy = grads.pop(node.name)
            if node.kind == "input":
                acc = input_grads.setdefault(node.name, np.zeros_like(values[node.name]))
                acc += dy.reshape(values[node.name].shape)
            elif node.kind == "concat":
                shapes = caches[node.name]
                offset = 0
                for src, shape in zip(node.inputs, shapes):
                    size = int(np.prod(shape)) if shape else 1
                    piece = dy[offset : offset + size].reshape(shape)
                    offset += size
                    if src in grads:
                        grads[src] = grads[src] + piece
                    else:
                        grads[src] = piece.copy()
            else:
                dx = node.layer.backward(dy, caches[node.name])
                src = node.inputs[0]
                if src in grads:
                    grads[src] = grads[src] + dx
                else:
                    grads[src] = dx
        return input_grads

    # -- parameter plumbing -------------------------------------------------

    def layers(self) -> list[tuple[str, Layer]]:
        return [(n.name, n.layer) for n in self._nodes if n.kind == "layer"]

    def named_params(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for name, layer in self.layers():
            for pname in sorted(layer.params):
                out.append((f"{name}.{pname}", layer.params[pname]))
        return out

    def zero_grads(self) -> None:
        for _, layer in self.layers():
            layer.zero_grads()

    def get_flat(self) -> np.ndarray:
        parts = [p.ravel() for _, p in self.named_params()]
        return np.concatenate(parts) if parts else np.zeros(0)

    def set_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        offset = 0
        for _, p in self.named_params():
            p[...] = vec[offset : offset + p.size].reshape(p.shape)
            offset += p.size
        if offset != vec.size:
            raise ValueError(f"flat vector size {vec.size}, expected {offset}")

    def grads_flat(self) -> np.ndarray:
        parts = []
        for name, layer in self.layers():
            for pname in sorted(layer.params):
                parts.append(layer.grads[pname].ravel())
        return np.concatenate(parts) if parts else np.zeros(0)

    @property
    def n_params(self) -> int:
        return sum(p.size for _, p in self.named_params())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.copy() for name, p in self.named_params()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_params())
        if set(own) != set(state):
            missing = set(own) ^ set(state)
            raise ValueError(f"parameter name mismatch: {sorted(missing)}")
        for name, p in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ValueError(f"{name}: shape {value.shape} != {p.shape}")
            p[...] = value

    def clone(self) -> "Network":
        import copy

        return copy.deepcopy(self)

    # -- checkpoints ---------------------------------------------------------

    def params_payload(self) -> dict:
        """JSON-safe parameter dict; floats round-trip bit-exactly."""
        return {
            name: {"shape": list(p.shape), "data": p.ravel().tolist()}
            for name, p in self.named_params()
        }

    def load_params_payload(self, payload: dict) -> None:
        state = {
            name: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
            for name, entry in payload.items()
        }
        self.load_state_dict(state)

    def save(self, path: str | Path) -> None:
        payload = {
            "format": "anableps-checkpoint",
            "version": 1,
            "params": self.params_payload(),
        }
        Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")

    def load(self, path: str | Path) -> None:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("format") != "anableps-checkpoint":
            raise ValueError(f"{path}: not a parameter checkpoint")
        self.load_params_payload(payload["params"])


# ---------------------------------------------------------------------------
# Adam optimizer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must be in [0, 1)")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n))


def adam_step(
    params: np.ndarray,
    grads: np.ndarray,
    cfg: AdamConfig,
    state: AdamState,
    step: int,
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; ``step`` counts from 1."""
    cfg.validate()
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError("params, grads, and moment state must share a shape")
    if step < 1:
        raise ValueError("step index counts from 1")
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grads
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grads * grads
    m_hat = m / (1.0 - cfg.beta1**step)
    v_hat = v / (1.0 - cfg.beta2**step)
    new_params = params - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return new_params, AdamState(m=m, v=v)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


def grad_check(
    net: Network,
    inputs: dict[str, np.ndarray],
    eps: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    The scalar probe loss is a fixed random weighting of all outputs.  For
    large networks ``max_coords`` limits the check to a random coordinate
    subset of the flat parameter vector.
    """
    rng = np.random.default_rng(seed)
    outs, cache = net.forward(inputs)
    weights = {name: rng.standard_normal(np.shape(y) or ()) for name, y in outs.items()}

    def loss() -> float:
        vals, _ = net.forward(inputs)
        return float(sum(np.sum(weights[k] * v) for k, v in vals.items()))

    net.zero_grads()
    net.backward(cache, {k: np.asarray(w, dtype=np.float64) for k, w in weights.items()})
    analytic = net.grads_flat()

    flat = net.get_flat()
    n = flat.size
    coords = np.arange(n)
    if max_coords is not None and n > max_coords:
        coords = rng.choice(n, size=max_coords, replace=False)

    max_rel = 0.0
    for i in coords:
        orig = flat[i]
        flat[i] = orig + eps
        net.set_flat(flat)
        up = loss()
        flat[i] = orig - eps
        net.set_flat(flat)
        down = loss()
        flat[i] = orig
        numeric = (up - down) / (2.0 * eps)
        denom = max(abs(analytic[i]), abs(numeric), 1e-6)
        max_rel = max(max_rel, abs(analytic[i] - numeric) / denom)
    net.set_flat(flat)
    return max_rel
