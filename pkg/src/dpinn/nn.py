"""Dense tanh networks, exact derivatives through jax, and an ADAM optimizer.

Parameters are plain pytrees: a list of ``(W, b)`` pairs with ``W`` of shape
``(fan_in, fan_out)``. Everything runs in float64.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import jax

jax.config.update("jax_enable_x64", True)

import jax.numpy as jnp  # noqa: E402
import numpy as np  # noqa: E402

CHECKPOINT_VERSION = 1


class NonFiniteError(FloatingPointError):
    pass


@dataclass(frozen=True, eq=False)
class MLP:
    """Multilayer perceptron with tanh hidden layers and a linear output layer."""

    layer_sizes: tuple
    params: list

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in self.params)

    def __call__(self, x):
        return forward(self.params, x)

    def replace(self, params) -> "MLP":
        return MLP(self.layer_sizes, params)


def init_mlp(layer_sizes: Sequence[int], seed: int = 0) -> MLP:
    """Glorot-uniform weights and zero biases from a seeded numpy generator."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2 or min(sizes) < 1:
        raise ValueError(f"need at least two positive layer sizes, got {layer_sizes!r}")
    rng = np.random.default_rng(seed)
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-lim, lim, size=(fan_in, fan_out))
        params.append((jnp.asarray(W), jnp.zeros(fan_out)))
    return MLP(sizes, params)


def forward(params, x):
    """Evaluate the network on a batch ``(B, in)`` or a single sample ``(in,)``."""
    h = x
    for W, b in params[:-1]:
        h = jnp.tanh(h @ W + b)
    W, b = params[-1]
    return h @ W + b


def check_input(model: MLP, x) -> None:
    if np.shape(x)[-1] != model.layer_sizes[0]:
        raise ValueError(f"input width {np.shape(x)[-1]} does not match {model.layer_sizes[0]}")


def param_gradients(model: MLP, loss: Callable) -> tuple[float, list]:
    """Value and reverse-mode gradient of ``loss(params)`` at the model parameters."""
    value, grads = jax.value_and_grad(loss)(model.params)
    if not np.isfinite(float(value)):
        raise NonFiniteError(f"loss is not finite: {float(value)}")
    return float(value), grads


def input_jacobian(model: MLP, x) -> np.ndarray:
    """(out, in) Jacobian of the outputs with respect to a single input sample."""
    x = jnp.asarray(x, dtype=jnp.float64)
    if x.ndim != 1:
        raise ValueError("input_jacobian takes a single sample")
    check_input(model, x)
    return np.asarray(jax.jacrev(forward, argnums=1)(model.params, x))


def flatten(params) -> np.ndarray:
    return np.concatenate([np.ravel(a) for a in jax.tree_util.tree_leaves(params)])


def unflatten(template, flat) -> list:
    leaves, treedef = jax.tree_util.tree_flatten(template)
    out, pos = [], 0
    for leaf in leaves:
        out.append(jnp.asarray(np.reshape(flat[pos : pos + leaf.size], leaf.shape)))
        pos += leaf.size
    return jax.tree_util.tree_unflatten(treedef, out)


# ---------------------------------------------------------------- ADAM


class AdamState(NamedTuple):
    step: jnp.ndarray
    mu: list
    nu: list


@dataclass(frozen=True)
class Adam:
    """ADAM with an optional exponential learning-rate decay ``lr * gamma**(step/decay_steps)``."""

    lr: float = 1e-3
    b1: float = 0.9
    b2: float = 0.999
    eps: float = 1e-8
    decay_rate: float | None = None
    decay_steps: int = 2000

    def init(self, params) -> AdamState:
        zeros = jax.tree_util.tree_map(jnp.zeros_like, params)
        return AdamState(jnp.asarray(0, dtype=jnp.int64), zeros, zeros)

    def learning_rate(self, step):
        if self.decay_rate is None:
            return self.lr
        return self.lr * self.decay_rate ** (step / self.decay_steps)

    def update(self, params, state: AdamState, grads):
        """Pure update usable inside ``jax.jit``; returns ``(params, state)``."""
        step = state.step + 1
        mu = jax.tree_util.tree_map(lambda m, g: self.b1 * m + (1 - self.b1) * g, state.mu, grads)
        nu = jax.tree_util.tree_map(lambda v, g: self.b2 * v + (1 - self.b2) * g * g, state.nu, grads)
        lr = self.learning_rate(state.step)
        c1 = 1 - self.b1 ** step
        c2 = 1 - self.b2 ** step
        params = jax.tree_util.tree_map(
            lambda p, m, v: p - lr * (m / c1) / (jnp.sqrt(v / c2) + self.eps), params, mu, nu
        )
        return params, AdamState(step, mu, nu)


def adam_step(model: MLP, state: AdamState, grads, opt: Adam | None = None) -> tuple[MLP, AdamState]:
    """One eager ADAM update of ``model``; rejects non-finite gradients."""
    opt = opt or Adam()
    if not all(bool(jnp.all(jnp.isfinite(g))) for g in jax.tree_util.tree_leaves(grads)):
        raise NonFiniteError("non-finite gradient")
    params, state = opt.update(model.params, state, grads)
    return model.replace(params), state


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, models: dict, extra: dict | None = None) -> None:
    """JSON checkpoint with layer sizes and flat parameter arrays per named network."""
    doc = {
        "version": CHECKPOINT_VERSION,
        "networks": {
            name: {"layer_sizes": list(m.layer_sizes), "params": flatten(m.params).tolist()}
            for name, m in models.items()
        },
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> tuple[dict, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    models = {}
    for name, net in doc["networks"].items():
        template = init_mlp(net["layer_sizes"], 0)
        models[name] = template.replace(unflatten(template.params, np.asarray(net["params"])))
    return models, doc["extra"]
