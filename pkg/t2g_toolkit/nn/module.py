"""Parameter containers and the small layers the blocks are made of."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from ..core import autodiff as ad
from ..core.autodiff import Parameter, Value


def uniform(rng: np.random.Generator, bound: float, shape: tuple) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Walks attributes to find Parameters and child Modules.

    Shared parameters (the same object reachable twice) are reported once,
    under the first name encountered.
    """

    def children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            yield name, value

    def named_parameters(self, prefix: str = "", seen: set[int] | None = None) -> Iterator[tuple[str, Parameter]]:
        seen = set() if seen is None else seen
        for name, value in self.children():
            items = list(enumerate(value)) if isinstance(value, (list, tuple)) else [(None, value)]
            for index, item in items:
                full = f"{prefix}{name}" if index is None else f"{prefix}{name}.{index}"
                if isinstance(item, Parameter):
                    if id(item) not in seen:
                        seen.add(id(item))
                        yield full, item
                elif isinstance(item, Module):
                    yield from item.named_parameters(f"{full}.", seen)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]


class Linear(Module):
    """y = x @ W + b with W stored as (in, out)."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / math.sqrt(d_in)
        self.weight = Parameter(uniform(rng, bound, (d_in, d_out)))
        self.bias = Parameter(uniform(rng, bound, (d_out,))) if bias else None

    def __call__(self, x: Value) -> Value:
        out = ad.matmul(x, self.weight)
        return ad.add(out, self.bias) if self.bias is not None else out


class LayerNorm(Module):
    def __init__(self, d: int):
        self.weight = Parameter(np.ones(d))
        self.bias = Parameter(np.zeros(d))

    def __call__(self, x: Value) -> Value:
        return ad.layer_norm(x, self.weight, self.bias)


class FeedForward(Module):
    """ReGLU feed-forward: (x W_a) * relu(x W_g), dropout, then W_out."""

    def __init__(self, d: int, factor: float, dropout: float, rng: np.random.Generator):
        hidden = math.ceil(round(factor * d, 9))
        self.value = Linear(d, hidden, rng)
        self.gate = Linear(d, hidden, rng)
        self.out = Linear(hidden, d, rng)
        self.dropout = dropout

    @property
    def hidden(self) -> int:
        return self.value.weight.shape[1]

    def __call__(self, x: Value, training: bool = False, rng: np.random.Generator | None = None) -> Value:
        h = ad.mul(self.value(x), ad.relu(self.gate(x)))
        h = ad.dropout(h, self.dropout, training, rng)
        return self.out(h)
