import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Tuple

import torch
from torch import nn

from eyedentify.errors import NonFiniteGradientError, ShapeError

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    t: int = 0
    m: Dict[str, torch.Tensor] = field(default_factory=dict)
    v: Dict[str, torch.Tensor] = field(default_factory=dict)
    v_max: Dict[str, torch.Tensor] = field(default_factory=dict)


@torch.no_grad()
def adam_step(
    params: Mapping[str, torch.Tensor],
    grads: Mapping[str, torch.Tensor],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    t: int = None,
    amsgrad: bool = False,
) -> AdamState:
    """
    One Adam update with bias correction, applied to `params` in place.

    Every gradient is checked before any parameter moves, so a non-finite
    gradient leaves parameters and state untouched.
    """
    t = state.t + 1 if t is None else t
    if t < 1:
        raise ValueError(f"Adam step index must be >= 1, got {t}")
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter '{name}'")
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient of '{name}' has shape {tuple(g.shape)}, parameter {tuple(params[name].shape)}")
        if not torch.isfinite(g).all():
            raise NonFiniteGradientError(name)

    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        p = params[name]
        m = state.m.setdefault(name, torch.zeros_like(p))
        v = state.v.setdefault(name, torch.zeros_like(p))
        m.mul_(beta1).add_(g, alpha=1.0 - beta1)
        v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
        if amsgrad:
            v_max = state.v_max.setdefault(name, torch.zeros_like(p))
            torch.maximum(v_max, v, out=v_max)
            v_hat = v_max / correction2
        else:
            v_hat = v / correction2
        p.sub_(lr * (m / correction1) / (v_hat.sqrt() + eps))
    state.t = t
    return state


class Adam:
    """Adam over a fixed set of named parameters of a module."""

    def __init__(
        self,
        named_parameters: Iterable[Tuple[str, nn.Parameter]],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        amsgrad: bool = False,
    ):
        self.params = dict(named_parameters)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.amsgrad = amsgrad
        self.state = AdamState()

    def step(self):
        grads = {name: p.grad for name, p in self.params.items() if p.grad is not None}
        adam_step(
            self.params, grads, self.state, self.lr,
            beta1=self.beta1, beta2=self.beta2, eps=self.eps, amsgrad=self.amsgrad,
        )

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
