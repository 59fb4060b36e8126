"""
Differentiable operators of the DeepEyedentification network.

Every operator is a `torch.autograd.Function` with an explicit backward rule;
torch only supplies the tape and the raw kernels. Sequences use the layout
[batch, length, channels].
"""
from typing import Literal, Sequence, Tuple

import torch
import torch.nn.functional as F

from eyedentify.errors import BatchNormBatchError, ShapeError


def _same_padding(kernel: int) -> Tuple[int, int]:
    left = (kernel - 1) // 2
    return left, kernel - 1 - left


class Conv1dFunction(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, weight, bias, padding):
        # weight is [k, in_ch, f]; torch kernels want [f, in_ch, k]
        xt = x.transpose(1, 2)
        if padding != (0, 0):
            xt = F.pad(xt, padding)
        ctx.save_for_backward(xt, weight)
        ctx.padding = padding
        out = F.conv1d(xt, weight.permute(2, 1, 0), bias)
        return out.transpose(1, 2).contiguous()

    @staticmethod
    def backward(ctx, grad_out):
        xt, weight = ctx.saved_tensors
        left, right = ctx.padding
        g = grad_out.transpose(1, 2)
        kernels = weight.permute(2, 1, 0)
        grad_x = grad_w = grad_b = None
        if ctx.needs_input_grad[0]:
            gx = F.conv_transpose1d(g, kernels)
            gx = gx[:, :, left:gx.shape[2] - right]
            grad_x = gx.transpose(1, 2).contiguous()
        if ctx.needs_input_grad[1]:
            gw = torch.nn.grad.conv1d_weight(xt, kernels.shape, g)
            grad_w = gw.permute(2, 1, 0).contiguous()
        if ctx.needs_input_grad[2]:
            grad_b = g.sum(dim=(0, 2))
        return grad_x, grad_w, grad_b, None


class AvgPool1dFunction(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, size, stride):
        ctx.size = size
        ctx.stride = stride
        ctx.input_shape = x.shape
        out = F.avg_pool1d(x.transpose(1, 2), kernel_size=size, stride=stride)
        return out.transpose(1, 2).contiguous()

    @staticmethod
    def backward(ctx, grad_out):
        size, stride = ctx.size, ctx.stride
        grad_x = grad_out.new_zeros(ctx.input_shape)
        span = stride * (grad_out.shape[1] - 1) + 1
        share = grad_out / size
        for offset in range(size):
            grad_x[:, offset:offset + span:stride] += share
        return grad_x, None, None


def _feature_dims(x: torch.Tensor) -> Tuple[int, ...]:
    return tuple(range(x.ndim - 1))


class BatchNormTrainFunction(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, gamma, beta, eps):
        dims = _feature_dims(x)
        mean = x.mean(dim=dims)
        var = x.var(dim=dims, unbiased=False)
        inv_std = torch.rsqrt(var + eps)
        x_hat = (x - mean) * inv_std
        ctx.save_for_backward(x_hat, inv_std, gamma)
        ctx.mark_non_differentiable(mean, var)
        return gamma * x_hat + beta, mean, var

    @staticmethod
    def backward(ctx, grad_out, _grad_mean, _grad_var):
        x_hat, inv_std, gamma = ctx.saved_tensors
        dims = _feature_dims(grad_out)
        count = grad_out.numel() // grad_out.shape[-1]
        grad_x = grad_gamma = grad_beta = None
        if ctx.needs_input_grad[0]:
            g_hat = grad_out * gamma
            grad_x = (inv_std / count) * (
                count * g_hat - g_hat.sum(dim=dims) - x_hat * (g_hat * x_hat).sum(dim=dims)
            )
        if ctx.needs_input_grad[1]:
            grad_gamma = (grad_out * x_hat).sum(dim=dims)
        if ctx.needs_input_grad[2]:
            grad_beta = grad_out.sum(dim=dims)
        return grad_x, grad_gamma, grad_beta, None


class BatchNormInferenceFunction(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, gamma, beta, running_mean, running_var, eps):
        inv_std = torch.rsqrt(running_var + eps)
        x_hat = (x - running_mean) * inv_std
        ctx.save_for_backward(x_hat, inv_std, gamma)
        return gamma * x_hat + beta

    @staticmethod
    def backward(ctx, grad_out):
        x_hat, inv_std, gamma = ctx.saved_tensors
        dims = _feature_dims(grad_out)
        grad_x = grad_out * gamma * inv_std if ctx.needs_input_grad[0] else None
        grad_gamma = (grad_out * x_hat).sum(dim=dims) if ctx.needs_input_grad[1] else None
        grad_beta = grad_out.sum(dim=dims) if ctx.needs_input_grad[2] else None
        return grad_x, grad_gamma, grad_beta, None, None, None


class ReluFunction(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        mask = x > 0
        ctx.save_for_backward(mask)
        return x * mask

    @staticmethod
    def backward(ctx, grad_out):
        (mask,) = ctx.saved_tensors
        # subgradient 0 at exactly 0
        return grad_out * mask


class DenseFunction(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, weight, bias):
        ctx.save_for_backward(x, weight)
        out = x @ weight
        return out + bias if bias is not None else out

    @staticmethod
    def backward(ctx, grad_out):
        x, weight = ctx.saved_tensors
        grad_x = grad_out @ weight.t() if ctx.needs_input_grad[0] else None
        grad_w = x.t() @ grad_out if ctx.needs_input_grad[1] else None
        grad_b = grad_out.sum(dim=0) if ctx.needs_input_grad[2] else None
        return grad_x, grad_w, grad_b


class SoftmaxCrossEntropyFunction(torch.autograd.Function):
    @staticmethod
    def forward(ctx, logits, labels):
        shifted = logits - logits.max(dim=1, keepdim=True).values
        log_probs = shifted - torch.log(torch.exp(shifted).sum(dim=1, keepdim=True))
        probs = torch.exp(log_probs)
        loss = -log_probs.gather(1, labels.view(-1, 1)).mean()
        ctx.save_for_backward(probs, labels)
        ctx.mark_non_differentiable(probs)
        return loss, probs

    @staticmethod
    def backward(ctx, grad_loss, _grad_probs):
        probs, labels = ctx.saved_tensors
        grad = probs.clone()
        grad[torch.arange(len(labels)), labels] -= 1.0
        return grad * (grad_loss / len(labels)), None


def conv1d(
    input: torch.Tensor,
    kernels: torch.Tensor,
    bias: torch.Tensor = None,
    stride: int = 1,
    padding: Literal["valid", "same"] = "valid",
) -> torch.Tensor:
    """input [batch, length, in_ch] * kernels [k, in_ch, f] -> [batch, length - k + 1, f] (valid)."""
    if stride != 1:
        raise ValueError(f"only stride 1 convolutions are supported, got {stride}")
    if input.ndim != 3 or kernels.ndim != 3:
        raise ShapeError(f"conv1d expects 3-d input and kernels, got {tuple(input.shape)} and {tuple(kernels.shape)}")
    k, in_ch, filters = kernels.shape
    if input.shape[2] != in_ch:
        raise ShapeError(f"conv1d input has {input.shape[2]} channels, kernels expect {in_ch}")
    if bias is not None and bias.shape != (filters,):
        raise ShapeError(f"conv1d bias must have shape ({filters},), got {tuple(bias.shape)}")
    if padding == "valid":
        pad = (0, 0)
        if input.shape[1] < k:
            raise ShapeError(f"conv1d input length {input.shape[1]} is shorter than the kernel ({k})")
    elif padding == "same":
        pad = _same_padding(k)
    else:
        raise ValueError(f"unknown padding '{padding}'")
    return Conv1dFunction.apply(input, kernels, bias, pad)


def avgpool1d(input: torch.Tensor, size: int = 2, stride: int = 1) -> torch.Tensor:
    if input.ndim != 3:
        raise ShapeError(f"avgpool1d expects [batch, length, channels], got {tuple(input.shape)}")
    if input.shape[1] < size:
        raise ShapeError(f"avgpool1d input length {input.shape[1]} is shorter than the pool size ({size})")
    return AvgPool1dFunction.apply(input, size, stride)


def batchnorm(
    input: torch.Tensor,
    gamma: torch.Tensor,
    beta: torch.Tensor,
    running_mean: torch.Tensor,
    running_var: torch.Tensor,
    training: bool,
    momentum: float = 0.99,
    eps: float = 1e-5,
) -> torch.Tensor:
    """
    Normalize every feature (last dimension). In training mode batch statistics
    are used and the running statistics move towards them with `momentum`;
    in inference mode the running statistics are used.
    """
    if input.shape[-1] != gamma.shape[0]:
        raise ShapeError(f"batchnorm expects {gamma.shape[0]} features, got {input.shape[-1]}")
    if not training:
        return BatchNormInferenceFunction.apply(input, gamma, beta, running_mean, running_var, eps)
    if input.shape[0] < 2:
        raise BatchNormBatchError(f"training-mode batch normalization needs a batch of at least 2, got {input.shape[0]}")
    out, mean, var = BatchNormTrainFunction.apply(input, gamma, beta, eps)
    with torch.no_grad():
        running_mean.mul_(momentum).add_(mean, alpha=1.0 - momentum)
        running_var.mul_(momentum).add_(var, alpha=1.0 - momentum)
    return out


def relu(input: torch.Tensor) -> torch.Tensor:
    return ReluFunction.apply(input)


def dense(input: torch.Tensor, weights: torch.Tensor, bias: torch.Tensor = None) -> torch.Tensor:
    if input.ndim != 2 or weights.ndim != 2 or input.shape[1] != weights.shape[0]:
        raise ShapeError(f"dense cannot multiply {tuple(input.shape)} by {tuple(weights.shape)}")
    if bias is not None and bias.shape != (weights.shape[1],):
        raise ShapeError(f"dense bias must have shape ({weights.shape[1]},), got {tuple(bias.shape)}")
    return DenseFunction.apply(input, weights, bias)


def softmax_xent(logits: torch.Tensor, labels: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Mean cross-entropy over the batch and the softmax probabilities."""
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ShapeError(f"softmax_xent expects [batch, classes >= 2], got {tuple(logits.shape)}")
    labels = torch.as_tensor(labels, dtype=torch.long)
    if labels.shape != (logits.shape[0],):
        raise ShapeError(f"expected {logits.shape[0]} labels, got {tuple(labels.shape)}")
    if ((labels < 0) | (labels >= logits.shape[1])).any():
        raise ValueError(f"labels must lie in [0, {logits.shape[1]})")
    return SoftmaxCrossEntropyFunction.apply(logits, labels)


def flatten(input: torch.Tensor) -> torch.Tensor:
    return input.reshape(input.shape[0], -1)


def concat(inputs: Sequence[torch.Tensor]) -> torch.Tensor:
    inputs = list(inputs)
    if not inputs:
        raise ShapeError("concat needs at least one tensor")
    if len(inputs) == 1:
        return inputs[0]
    batch = inputs[0].shape[0]
    if any(t.ndim != 2 or t.shape[0] != batch for t in inputs):
        raise ShapeError(f"concat inputs disagree: {[tuple(t.shape) for t in inputs]}")
    return torch.cat(inputs, dim=1)
