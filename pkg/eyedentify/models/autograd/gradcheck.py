"""
Central finite-difference check of the reverse-mode rules.

A vector-valued operator is reduced to a scalar through a fixed random
projection, so a single backward pass yields the full gradient to compare
against the numeric one.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import torch

from eyedentify.models.autograd import functional as EF

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-4
DEFAULT_STEP = 1e-5
# relative errors use max(|analytic|, |numeric|, floor) as denominator
RELATIVE_FLOOR = 1e-3


@dataclass
class GradCheckResult:
    max_rel_error: float
    passed: bool
    message: str = ""


@dataclass
class GradCheckReport:
    op: str
    max_rel_error: float
    seeds: int
    passed: bool


def nudge_kinks(x: torch.Tensor, margin: float = 1e-3) -> torch.Tensor:
    """Move entries closer than `margin` to 0 away from the ReLU kink."""
    x = x.clone()
    near = x.abs() < margin
    x[near] = torch.where(x[near] < 0, -margin, margin).to(x.dtype)
    return x


def _scalarize(out: torch.Tensor, projection: Optional[torch.Tensor]) -> torch.Tensor:
    return out if projection is None else (out * projection).sum()


def grad_check(
    fn: Callable[..., torch.Tensor],
    inputs: Sequence[torch.Tensor],
    tolerance: float = DEFAULT_TOLERANCE,
    h: float = DEFAULT_STEP,
    seed: int = 0,
) -> GradCheckResult:
    """Max relative error between the reverse-mode and central-difference gradients of `fn` at `inputs`."""
    try:
        point = [x.detach().to(torch.float64).clone().requires_grad_(True) for x in inputs]
        out = fn(*point)
        projection = None
        if out.numel() > 1:
            g = torch.Generator().manual_seed(seed)
            projection = torch.randn(out.shape, generator=g, dtype=torch.float64)
        loss = _scalarize(out, projection)
        if loss.requires_grad:
            analytic = torch.autograd.grad(loss, point, allow_unused=True)
        else:
            # constant function
            analytic = [None] * len(point)
        analytic = [torch.zeros_like(x) if a is None else a for x, a in zip(point, analytic)]

        worst = 0.0
        with torch.no_grad():
            for x, a in zip(point, analytic):
                flat = x.view(-1)
                a_flat = a.reshape(-1)
                for i in range(flat.numel()):
                    original = flat[i].item()
                    flat[i] = original + h
                    plus = _scalarize(fn(*point), projection).item()
                    flat[i] = original - h
                    minus = _scalarize(fn(*point), projection).item()
                    flat[i] = original
                    numeric = (plus - minus) / (2 * h)
                    exact = a_flat[i].item()
                    error = abs(exact - numeric) / max(abs(exact), abs(numeric), RELATIVE_FLOOR)
                    worst = max(worst, error)
    except Exception as e:
        logger.error(f"Gradient check failed to run: {e}")
        return GradCheckResult(max_rel_error=float("inf"), passed=False, message=str(e))
    return GradCheckResult(max_rel_error=worst, passed=worst < tolerance)


class _ScaleGrad(torch.autograd.Function):
    """Identity forward, scaled backward; fault injection for the checker."""

    @staticmethod
    def forward(ctx, x, factor):
        ctx.factor = factor
        return x.clone()

    @staticmethod
    def backward(ctx, grad_out):
        return grad_out * ctx.factor, None


def _batchnorm(training: bool):
    def fn(x, gamma, beta):
        features = x.shape[-1]
        running_mean = torch.linspace(-0.5, 0.5, features, dtype=x.dtype)
        running_var = torch.linspace(0.5, 2.0, features, dtype=x.dtype)
        return EF.batchnorm(x, gamma, beta, running_mean, running_var, training=training)
    return fn


def _cases(g: torch.Generator, seed: int) -> Dict[str, tuple]:
    def rand(*shape):
        return torch.randn(*shape, generator=g, dtype=torch.float64)

    labels = torch.tensor([0, 2, 1, 2])
    return {
        "conv1d": (lambda x, w, b: EF.conv1d(x, w, b), [rand(2, 7, 3), rand(3, 3, 4), rand(4)]),
        "conv1d_same": (lambda x, w, b: EF.conv1d(x, w, b, padding="same"), [rand(2, 6, 2), rand(4, 2, 3), rand(3)]),
        "avgpool1d": (lambda x: EF.avgpool1d(x, 2, 1 + seed % 2), [rand(2, 7, 3)]),
        "batchnorm_train": (_batchnorm(True), [rand(4, 5, 3), 1.0 + 0.5 * rand(3), rand(3)]),
        "batchnorm_infer": (_batchnorm(False), [rand(3, 4), 1.0 + 0.5 * rand(4), rand(4)]),
        "relu": (EF.relu, [nudge_kinks(rand(3, 5))]),
        "dense": (EF.dense, [rand(2, 8), rand(8, 3), rand(3)]),
        "softmax_xent": (lambda z: EF.softmax_xent(z, labels)[0], [3.0 * rand(4, 3)]),
        "flatten": (EF.flatten, [rand(2, 3, 4)]),
        "concat": (lambda a, b: EF.concat([a, b]), [rand(3, 2), rand(3, 4)]),
        "conv1d+relu": (
            lambda x, w: EF.relu(EF.conv1d(x, w)),
            [rand(2, 6, 2), rand(3, 2, 3)],
        ),
    }


OPS = tuple(_cases(torch.Generator().manual_seed(0), 0))


def gradcheck_suite(
    seeds: Sequence[int] = tuple(range(20)),
    tolerance: float = DEFAULT_TOLERANCE,
    corrupt: Optional[str] = None,
) -> List[GradCheckReport]:
    """One report per operator: the worst relative error over all seeds."""
    if corrupt is not None and corrupt not in OPS:
        raise ValueError(f"unknown operator '{corrupt}', expected one of {OPS}")
    worst = {op: 0.0 for op in OPS}
    for seed in seeds:
        g = torch.Generator().manual_seed(seed)
        for op, (fn, inputs) in _cases(g, seed).items():
            if op == corrupt:
                fn = (lambda f: lambda *xs: _ScaleGrad.apply(f(*xs), 1.01))(fn)
            if op == "conv1d+relu":
                inputs = _nudge_composite(inputs)
            result = grad_check(fn, inputs, tolerance=tolerance, seed=seed)
            worst[op] = max(worst[op], result.max_rel_error)
    reports = [GradCheckReport(op, worst[op], len(seeds), worst[op] < tolerance) for op in OPS]
    for r in reports:
        log = logger.info if r.passed else logger.error
        log(f"{r.op}: max relative error {r.max_rel_error:.3e} over {r.seeds} seeds")
    return reports


def _nudge_composite(inputs):
    x, w = inputs
    with torch.no_grad():
        pre = EF.conv1d(x, w)
        # shift the input until no pre-activation sits within 1e-3 of the kink
        for _ in range(8):
            if (pre.abs() >= 1e-3).all():
                break
            x = x + 1e-2
            pre = EF.conv1d(x, w)
    return [x, w]
