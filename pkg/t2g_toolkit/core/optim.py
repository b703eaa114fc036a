"""AdamW with per-group learning rates."""

from __future__ import annotations

from typing import Iterable, Mapping

import numpy as np

from .autodiff import Parameter
from .errors import DivergenceError


def adamw_step(
    named_params: Iterable[tuple[str, Parameter]],
    moments: dict[str, tuple[np.ndarray, np.ndarray]],
    step: int,
    lr_by_group: Mapping[str, float],
    weight_decay: float = 0.0,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """Apply one decoupled-weight-decay Adam update in place.

    `moments` is keyed by the names paired with the parameters. `step` is
    the 1-based step number used for bias correction. Gradients are checked
    for every parameter before any of them is touched, so a non-finite
    gradient leaves the whole model unchanged.
    """
    named_params = list(named_params)
    for name, p in named_params:
        if not np.all(np.isfinite(p.grad)):
            raise DivergenceError(
                f"non-finite gradient in parameter {name!r} at step {step}",
                step=step,
                parameter=name,
            )

    beta1, beta2 = betas
    correction1 = 1.0 - beta1**step
    correction2 = 1.0 - beta2**step
    for name, p in named_params:
        if not p.trainable:
            continue
        lr = lr_by_group[p.group]
        m, v = moments.setdefault(name, (np.zeros_like(p.data), np.zeros_like(p.data)))
        g = p.grad
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if weight_decay:
            p.data *= 1.0 - lr * weight_decay
        p.data -= lr * (m / correction1) / (np.sqrt(v / correction2) + eps)


class AdamW:
    """Stateful wrapper around `adamw_step`.

    Example:
        opt = AdamW(model.named_parameters(), {"backbone": 1e-4, "column_embedding": 5e-3})
        opt.zero_grad(); ad.backward(loss); opt.step()
    """

    def __init__(
        self,
        named_params: Iterable[tuple[str, Parameter]],
        lr_by_group: Mapping[str, float],
        weight_decay: float = 0.0,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.named = [(name or f"#{index}", p) for index, (name, p) in enumerate(named_params)]
        names = [name for name, _ in self.named]
        duplicated = sorted({name for name in names if names.count(name) > 1})
        if duplicated:
            raise ValueError(f"duplicate parameter names: {duplicated}")
        self.params = [p for _, p in self.named]
        self.lr_by_group = dict(lr_by_group)
        missing = {p.group for p in self.params} - set(self.lr_by_group)
        if missing:
            raise ValueError(f"no learning rate for parameter groups: {sorted(missing)}")
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self.moments: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        adamw_step(
            self.named,
            self.moments,
            self.step_count + 1,
            self.lr_by_group,
            self.weight_decay,
            self.betas,
            self.eps,
        )
        self.step_count += 1

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {"__step__": np.asarray(self.step_count)}
        for name, (m, v) in self.moments.items():
            state[f"m/{name}"] = m.copy()
            state[f"v/{name}"] = v.copy()
        return state

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        self.step_count = int(state["__step__"])
        self.moments = {}
        for key, array in state.items():
            if key.startswith("m/"):
                name = key[2:]
                self.moments[name] = (np.array(array), np.array(state[f"v/{name}"]))
