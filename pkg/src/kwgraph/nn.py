"""A small reverse-mode autodiff kernel over 2-D float64 arrays.

Only what the annotator and the linear text classifier need: dense and
constant-sparse matmuls, bias add, ReLU, learnable scalar gates, column
concatenation and mean softmax cross-entropy. Parameters carry their own
AdamW moment slots.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, parents: Sequence["Tensor"] = (), backward: Optional[Callable] = None,
                 requires_grad: bool = False):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim != 2:
            raise ValueError(f"tensors are 2-D, got shape {value.shape}")
        self.value = value
        self.grad: Optional[np.ndarray] = None
        self._parents = tuple(parents)
        self._backward = backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in self._parents)

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    def backward(self) -> None:
        if self.shape != (1, 1):
            raise ValueError("backward() starts from a scalar (1x1) tensor")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            stack.extend((p, False) for p in node._parents)
        self.grad = np.ones((1, 1))
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            grads = node._backward(node.grad)
            for p, g in zip(node._parents, grads):
                if p.requires_grad and g is not None:
                    p.grad = g if p.grad is None else p.grad + g
            if not isinstance(node, Parameter):
                node.grad = None


class Parameter(Tensor):
    __slots__ = ("m", "v", "t", "name")

    def __init__(self, value, name: str = ""):
        super().__init__(np.array(value, dtype=np.float64), requires_grad=True)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)
        self.t = 0
        self.name = name

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def reset_optimizer(self) -> None:
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)
        self.t = 0


def constant(value) -> Tensor:
    return Tensor(value)


# --- ops ------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return Tensor(av @ bv, (a, b), lambda g: (g @ bv.T if a.requires_grad else None,
                                             av.T @ g if b.requires_grad else None))


def spmm(m, a: Tensor) -> Tensor:
    """Constant (sparse or dense) matrix times tensor."""
    if m.shape[1] != a.shape[0]:
        raise ValueError(f"spmm dimension mismatch: {m.shape} @ {a.shape}")
    out = m @ a.value
    out = out.toarray() if sp.issparse(out) else np.asarray(out)
    return Tensor(out, (a,), lambda g: (np.asarray(m.T @ g),))


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a (1, cols) row broadcast over ``a``."""
    if a.shape == b.shape:
        return Tensor(a.value + b.value, (a, b), lambda g: (g, g))
    if b.shape == (1, a.shape[1]):
        return Tensor(a.value + b.value, (a, b), lambda g: (g, g.sum(axis=0, keepdims=True)))
    raise ValueError(f"cannot add shapes {a.shape} and {b.shape}")


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0
    return Tensor(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def gate(a: Tensor, s: Tensor, offset: float = 0.0) -> Tensor:
    """``(offset + s) * a`` for a learnable 1x1 scalar ``s``."""
    if s.shape != (1, 1):
        raise ValueError("gate scalar must be 1x1")
    factor = offset + s.value[0, 0]
    av = a.value
    return Tensor(factor * av, (a, s), lambda g: (g * factor, np.array([[np.sum(g * av)]])))


def concat(parts: Sequence[Tensor]) -> Tensor:
    widths = np.cumsum([0] + [p.shape[1] for p in parts])
    out = np.concatenate([p.value for p in parts], axis=1)
    return Tensor(out, parts, lambda g: tuple(g[:, widths[i]:widths[i + 1]] for i in range(len(parts))))


def total(a: Tensor) -> Tensor:
    return Tensor(np.array([[a.value.sum()]]), (a,), lambda g: (np.full(a.shape, g[0, 0]),))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits, target_class: int) -> tuple[float, np.ndarray]:
    """Loss and logit gradient for one example."""
    logits = np.asarray(logits, dtype=np.float64).ravel()
    if not 0 <= target_class < logits.size:
        raise ValueError("target class out of range")
    loss = -log_softmax(logits)[target_class]
    grad = softmax(logits)
    grad[target_class] -= 1.0
    return float(loss), grad


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood of ``targets`` over the rows of ``logits``."""
    targets = np.asarray(targets, dtype=np.int64)
    rows = logits.shape[0]
    if targets.shape != (rows,):
        raise ValueError("one target per logit row")
    logp = log_softmax(logits.value)
    loss = -logp[np.arange(rows), targets].mean()
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite loss")

    def backward(g):
        grad = np.exp(logp)
        grad[np.arange(rows), targets] -= 1.0
        return (grad * (g[0, 0] / rows),)

    return Tensor(np.array([[loss]]), (logits,), backward)


# --- layers ---------------------------------------------------------------

class Linear:
    def __init__(self, in_dim: int, out_dim: int, rng: Optional[np.random.Generator] = None,
                 name: str = "linear"):
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / np.sqrt(in_dim)
        self.weight = Parameter(rng.uniform(-bound, bound, (in_dim, out_dim)), f"{name}.weight")
        self.bias = Parameter(rng.uniform(-bound, bound, (1, out_dim)), f"{name}.bias")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.weight), self.bias)

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]


class MLPBlock:
    """Affine layers with ReLU between them and none after the last."""

    def __init__(self, dims: Sequence[int], rng: Optional[np.random.Generator] = None, name: str = "mlp"):
        if len(dims) < 2:
            raise ValueError("an MLP needs an input and an output dimension")
        self.layers = [Linear(a, b, rng, f"{name}.{i}") for i, (a, b) in enumerate(zip(dims[:-1], dims[1:]))]

    @classmethod
    def from_weights(cls, weights: Sequence[tuple]) -> "MLPBlock":
        block = cls.__new__(cls)
        block.layers = []
        for i, (w, b) in enumerate(weights):
            lin = Linear.__new__(Linear)
            lin.weight = Parameter(np.atleast_2d(w), f"mlp.{i}.weight")
            lin.bias = Parameter(np.asarray(b, dtype=np.float64).reshape(1, -1), f"mlp.{i}.bias")
            block.layers.append(lin)
        for a, b in zip(block.layers[:-1], block.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError("consecutive layer dimensions do not chain")
        return block

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def __call__(self, x: Tensor) -> Tensor:
        return mlp_forward(self, x)

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]


def mlp_forward(block: MLPBlock, x: Tensor) -> Tensor:
    if x.shape[1] != block.in_dim:
        raise ValueError(f"MLP expects {block.in_dim} input columns, got {x.shape[1]}")
    h = x
    for i, layer in enumerate(block.layers):
        h = layer(h)
        if i < len(block.layers) - 1:
            h = relu(h)
    return h


# --- optimisation ---------------------------------------------------------

@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps_num: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")


def zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()


def adamw_step(params: Iterable[Parameter], config: OptimizerConfig) -> None:
    """Decoupled-weight-decay Adam update, in place."""
    lr, b1, b2 = config.learning_rate, config.beta1, config.beta2
    for p in params:
        g = p.grad
        p.t += 1
        p.m = b1 * p.m + (1 - b1) * g
        p.v = b2 * p.v + (1 - b2) * g * g
        m_hat = p.m / (1 - b1 ** p.t)
        v_hat = p.v / (1 - b2 ** p.t)
        if config.weight_decay:
            p.value = p.value - lr * config.weight_decay * p.value
        p.value = p.value - lr * m_hat / (np.sqrt(v_hat) + config.eps_num)
        if not np.all(np.isfinite(p.value)):
            raise FloatingPointError(f"parameter {p.name or '?'} became non-finite")


def finite_difference_check(loss_fn: Callable[[], Tensor], params: Sequence[Parameter], h: float = 1e-5,
                            floor: float = 1e-6) -> float:
    """Largest elementwise |analytic - numeric| / max(|analytic|, |numeric|, floor)."""
    zero_grad(params)
    loss_fn().backward()
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = loss_fn().value[0, 0]
            flat[i] = old - h
            down = loss_fn().value[0, 0]
            flat[i] = old
            num = (up - down) / (2 * h)
            ai = a.reshape(-1)[i]
            err = abs(ai - num) / max(abs(ai), abs(num), floor)
            worst = max(worst, err)
    zero_grad(params)
    return worst


# --- checkpoints ----------------------------------------------------------

CHECKPOINT_MAGIC = b"KWGCKPT1\n"


def save_checkpoint(path, params: Sequence[Parameter], epsilons: Sequence[float] = (), step: int = 0) -> None:
    """Write a JSON header line followed by little-endian float64 values in parameter order."""
    header = {
        "params": [{"name": p.name, "shape": list(p.shape)} for p in params],
        "epsilons": [float(e) for e in epsilons],
        "step": int(step),
    }
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for p in params:
            fh.write(np.ascontiguousarray(p.value, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict, list[np.ndarray]]:
    with open(path, "rb") as fh:
        if fh.readline() != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        header = json.loads(fh.readline())
        values = []
        for spec in header["params"]:
            r, c = spec["shape"]
            buf = fh.read(8 * r * c)
            if len(buf) != 8 * r * c:
                raise ValueError(f"{path}: truncated checkpoint")
            values.append(np.frombuffer(buf, dtype="<f8").reshape(r, c).astype(np.float64))
    return header, values
