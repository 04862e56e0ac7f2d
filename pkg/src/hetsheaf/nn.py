"""Parameter containers, affine layers, MLPs and the Adam optimizer."""

from __future__ import annotations

from collections.abc import Callable, Iterator, Sequence
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, NumericError, ValidationError


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / max(fan_in + fan_out, 1))
    return rng.uniform(-limit, limit, size=shape if shape is not None else (fan_in, fan_out))


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


class Module:
    """Base class that discovers parameters and submodules from attributes.

    Attribute order is registration order, so parameter names and their
    iteration order are stable across runs.
    """

    training = False

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def param_dict(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def modules(self) -> Iterator["Module"]:
        yield self
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        params = self.param_dict()
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise ValidationError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise DimensionError(f"parameter {name}: expected shape {p.shape}, got {value.shape}")
            p.data = value.copy()


class Linear(Module):
    """``x @ weight + bias`` with Glorot-uniform weights and zero bias."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = parameter(glorot_uniform(rng, in_features, out_features))
        self.bias = parameter(np.zeros(out_features)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise DimensionError(f"Linear expects {self.in_features} input features, got shape {x.shape}")
        out = x @ self.weight
        return out + self.bias if self.bias is not None else out


def mlp_forward(layers: Sequence[tuple[Tensor, Tensor | None, str | Callable]], x: Tensor) -> Tensor:
    """Apply ``(weight, bias, activation)`` triples in order."""
    h = ad.as_tensor(x)
    for i, (weight, bias, act) in enumerate(layers):
        if h.shape[-1] != weight.shape[0]:
            raise DimensionError(
                f"layer {i}: input width {h.shape[-1]} does not match weight shape {weight.shape}"
            )
        h = h @ weight
        if bias is not None:
            h = h + bias
        h = ad.activation(act)(h) if isinstance(act, str) else act(h)
    return h


class MLP(Module):
    """Stack of affine layers; hidden layers use ``activation``, the last is linear."""

    def __init__(
        self,
        sizes: Sequence[int],
        rng: np.random.Generator,
        activation: str = "elu",
        final_activation: str = "identity",
    ):
        if len(sizes) < 2:
            raise ValidationError(f"MLP needs at least input and output sizes, got {list(sizes)}")
        self.sizes = list(sizes)
        self.activation = activation
        self.final_activation = final_activation
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]

    @property
    def in_features(self) -> int:
        return self.sizes[0]

    @property
    def out_features(self) -> int:
        return self.sizes[-1]

    def spec(self) -> list[tuple[Tensor, Tensor | None, str]]:
        acts = [self.activation] * (len(self.layers) - 1) + [self.final_activation]
        return [(layer.weight, layer.bias, act) for layer, act in zip(self.layers, acts)]

    def __call__(self, x: Tensor) -> Tensor:
        return mlp_forward(self.spec(), x)


def mlp_param_count(sizes: Sequence[int]) -> int:
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


# ---------------------------------------------------------------------------
# Adam with decoupled weight decay
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray | None],
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One Adam update; returns new parameter arrays and a new state.

    Weight decay is decoupled: ``p <- p - lr*wd*p`` happens before the
    bias-corrected moment step.  A missing gradient counts as zero.
    """
    for name, g in grads.items():
        if g is not None and not np.isfinite(g).all():
            raise NumericError(f"adam_step: non-finite gradient for {name}; step aborted")
    beta1, beta2 = betas
    t = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads.get(name)
        g = np.zeros_like(p) if g is None else g
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        if m.shape != p.shape or v.shape != p.shape:
            raise DimensionError(f"adam_step: moment shapes for {name} do not match parameter {p.shape}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p = p - lr * weight_decay * p
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(t, new_m, new_v)


class Adam:
    """Stateful wrapper around :func:`adam_step` for a set of named tensors."""

    def __init__(self, params: dict[str, Tensor], lr: float, weight_decay: float = 0.0,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.state = AdamState()

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        values = {name: p.data for name, p in self.params.items()}
        grads = {name: p.grad for name, p in self.params.items()}
        updated, self.state = adam_step(values, grads, self.state, self.lr, self.weight_decay, self.betas, self.eps)
        for name, p in self.params.items():
            p.data = updated[name]
