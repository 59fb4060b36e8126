import math

import numpy as np
import pytest
import torch

from eyedentify.errors import BatchNormBatchError, NonFiniteGradientError, ShapeError
from eyedentify.models.autograd import functional as EF
from eyedentify.models.autograd.gradcheck import OPS, grad_check, gradcheck_suite, nudge_kinks
from eyedentify.models.autograd.layers import BatchNorm, Conv1d, Dense, parameter_count
from eyedentify.models.autograd.optim import Adam, AdamState, adam_step


def seq(values):
    """[1, length, 1] tensor from a list."""
    return torch.tensor(values, dtype=torch.float64).view(1, -1, 1)


class TestConv1d:
    def test_hand_dot_product(self):
        out = EF.conv1d(seq([1.0, 2.0, 3.0]), torch.tensor([1.0, 0.0, -1.0], dtype=torch.float64).view(3, 1, 1))
        np.testing.assert_allclose(out.view(-1).numpy(), [-2.0])

    def test_identity_kernel(self):
        x = torch.randn(2, 10, 3, dtype=torch.float64)
        kernel = torch.eye(3, dtype=torch.float64).view(1, 3, 3)
        torch.testing.assert_close(EF.conv1d(x, kernel), x)

    def test_output_length(self):
        assert EF.conv1d(torch.zeros(1, 1000, 2), torch.zeros(9, 2, 4)).shape == (1, 992, 4)

    def test_same_padding_keeps_length(self):
        assert EF.conv1d(torch.zeros(1, 20, 2), torch.zeros(4, 2, 3), padding="same").shape == (1, 20, 3)

    def test_bias_added(self):
        out = EF.conv1d(seq([0.0, 0.0]), torch.zeros(1, 1, 2, dtype=torch.float64), torch.tensor([1.0, -1.0], dtype=torch.float64))
        np.testing.assert_allclose(out[0].numpy(), [[1.0, -1.0], [1.0, -1.0]])

    def test_too_short(self):
        with pytest.raises(ShapeError):
            EF.conv1d(torch.zeros(1, 4, 1), torch.zeros(5, 1, 1))

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            EF.conv1d(torch.zeros(1, 10, 2), torch.zeros(3, 1, 1))

    def test_stride_unsupported(self):
        with pytest.raises(ValueError):
            EF.conv1d(torch.zeros(1, 10, 1), torch.zeros(3, 1, 1), stride=2)


class TestAvgPool:
    def test_two_point_means(self):
        np.testing.assert_allclose(EF.avgpool1d(seq([1.0, 3.0, 5.0])).view(-1).numpy(), [2.0, 4.0])

    def test_constant(self):
        np.testing.assert_allclose(EF.avgpool1d(seq([7.0] * 6)).view(-1).numpy(), [7.0] * 5)

    def test_length(self):
        assert EF.avgpool1d(torch.zeros(2, 992, 3)).shape == (2, 991, 3)
        assert EF.avgpool1d(torch.zeros(2, 992, 3), 2, 2).shape == (2, 496, 3)

    def test_too_short(self):
        with pytest.raises(ShapeError):
            EF.avgpool1d(torch.zeros(1, 1, 1))


class TestBatchNorm:
    def _stats(self, features=1):
        return torch.zeros(features, dtype=torch.float64), torch.ones(features, dtype=torch.float64)

    def test_two_values(self):
        mean, var = self._stats()
        out = EF.batchnorm(
            torch.tensor([[1.0], [3.0]], dtype=torch.float64), torch.ones(1, dtype=torch.float64),
            torch.zeros(1, dtype=torch.float64), mean, var, training=True, eps=1e-12,
        )
        np.testing.assert_allclose(out.view(-1).numpy(), [-1.0, 1.0], atol=1e-9)

    def test_running_statistics_update(self):
        mean, var = self._stats()
        EF.batchnorm(
            torch.tensor([[1.0], [3.0]], dtype=torch.float64), torch.ones(1, dtype=torch.float64),
            torch.zeros(1, dtype=torch.float64), mean, var, training=True, momentum=0.99,
        )
        np.testing.assert_allclose(mean.numpy(), [0.02])
        np.testing.assert_allclose(var.numpy(), [1.0])

    def test_normalized_input_is_fixed_point(self):
        x = torch.tensor([[-1.0, 1.0], [1.0, -1.0]], dtype=torch.float64)
        mean, var = self._stats(2)
        out = EF.batchnorm(x, torch.ones(2, dtype=torch.float64), torch.zeros(2, dtype=torch.float64), mean, var, training=True)
        torch.testing.assert_close(out, x, atol=1e-5, rtol=1e-5)

    def test_inference_is_affine(self):
        x = torch.randn(3, 5, 2, dtype=torch.float64)
        gamma = torch.tensor([2.0, -1.0], dtype=torch.float64)
        beta = torch.tensor([0.5, 3.0], dtype=torch.float64)
        mean, var = self._stats(2)
        out = EF.batchnorm(x, gamma, beta, mean, var, training=False)
        torch.testing.assert_close(out, gamma * x + beta, atol=1e-4, rtol=1e-4)
        np.testing.assert_array_equal(mean.numpy(), [0.0, 0.0])

    def test_single_window_batch(self):
        mean, var = self._stats()
        with pytest.raises(BatchNormBatchError):
            EF.batchnorm(torch.ones(1, 1, dtype=torch.float64), torch.ones(1), torch.zeros(1), mean, var, training=True)

    def test_module_switches_mode(self):
        bn = BatchNorm(3)
        x = torch.randn(4, 6, 3)
        bn.train()
        bn(x)
        assert not torch.equal(bn.running_mean, torch.zeros(3))
        snapshot = bn.running_mean.clone()
        bn.eval()
        bn(x[:1])
        torch.testing.assert_close(bn.running_mean, snapshot)


class TestElementwise:
    def test_relu(self):
        np.testing.assert_array_equal(EF.relu(torch.tensor([-1.0, 2.0])).numpy(), [0.0, 2.0])
        assert not EF.relu(-torch.rand(5)).any()

    def test_relu_subgradient_at_zero(self):
        x = torch.zeros(3, requires_grad=True)
        EF.relu(x).sum().backward()
        np.testing.assert_array_equal(x.grad.numpy(), [0.0, 0.0, 0.0])

    def test_dense_identity(self):
        x = torch.randn(4, 3)
        torch.testing.assert_close(EF.dense(x, torch.eye(3), torch.zeros(3)), x)

    def test_dense_hand_value(self):
        out = EF.dense(torch.tensor([[1.0, 2.0]]), torch.tensor([[1.0], [1.0]]), torch.tensor([1.0]))
        np.testing.assert_allclose(out.numpy(), [[4.0]])

    def test_dense_zero(self):
        assert not EF.dense(torch.randn(5, 4), torch.zeros(4, 2), torch.zeros(2)).any()

    def test_dense_shape_error(self):
        with pytest.raises(ShapeError):
            EF.dense(torch.zeros(2, 3), torch.zeros(4, 2))


class TestSoftmaxCrossEntropy:
    def test_symmetric_logits(self):
        loss, probs = EF.softmax_xent(torch.zeros(1, 2, dtype=torch.float64), torch.tensor([0]))
        np.testing.assert_allclose(probs.numpy(), [[0.5, 0.5]])
        assert float(loss) == pytest.approx(math.log(2.0))

    def test_large_logits(self):
        loss, probs = EF.softmax_xent(torch.tensor([[1000.0, 0.0]]), torch.tensor([0]))
        assert torch.isfinite(loss) and torch.isfinite(probs).all()
        np.testing.assert_allclose(probs.numpy(), [[1.0, 0.0]], atol=1e-12)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            EF.softmax_xent(torch.zeros(2, 3), torch.tensor([0, 3]))

    def test_single_class(self):
        with pytest.raises(ShapeError):
            EF.softmax_xent(torch.zeros(2, 1), torch.tensor([0, 0]))


class TestShapes:
    def test_flatten(self):
        assert EF.flatten(torch.empty(2, 947, 256, device="meta")).shape == (2, 242432)

    def test_concat(self):
        a, b = torch.randn(3, 128), torch.randn(3, 128)
        assert EF.concat([a, b]).shape == (3, 256)
        assert EF.concat([a]) is a

    def test_concat_mismatch(self):
        with pytest.raises(ShapeError):
            EF.concat([torch.zeros(3, 2), torch.zeros(4, 2)])

    def test_parameter_count(self):
        assert parameter_count(Dense(3, 2)) == 8
        assert parameter_count(Conv1d(2, 4, 3)) == 3 * 2 * 4 + 4
        assert parameter_count(BatchNorm(5)) == 10


class TestGradCheck:
    def test_dense(self):
        g = torch.Generator().manual_seed(1)
        inputs = [torch.randn(1, 8, generator=g), torch.randn(8, 4, generator=g), torch.randn(4, generator=g)]
        assert grad_check(EF.dense, inputs).max_rel_error < 1e-4

    def test_conv_relu_composite(self):
        g = torch.Generator().manual_seed(2)
        x, w = torch.randn(1, 8, 2, generator=g, dtype=torch.float64), torch.randn(3, 2, 2, generator=g, dtype=torch.float64)
        result = grad_check(lambda x, w: EF.relu(EF.conv1d(x, w)), [x, w])
        assert result.passed, result

    def test_constant_function(self):
        result = grad_check(lambda x: torch.tensor(3.0, dtype=torch.float64), [torch.randn(4)])
        assert result.max_rel_error == 0.0 and result.passed

    def test_wrong_gradient_is_caught(self):
        class Doubled(torch.autograd.Function):
            @staticmethod
            def forward(ctx, x):
                return x * x

            @staticmethod
            def backward(ctx, grad_out):
                return grad_out

        assert not grad_check(Doubled.apply, [torch.randn(5) + 3.0]).passed

    def test_errors_become_failures(self):
        result = grad_check(lambda x: EF.conv1d(x, torch.zeros(9, 1, 1, dtype=torch.float64)), [torch.zeros(1, 3, 1)])
        assert math.isinf(result.max_rel_error) and not result.passed

    def test_nudge_kinks(self):
        out = nudge_kinks(torch.tensor([0.0, -1e-5, 2e-4, 0.5]))
        assert (out.abs() >= 1e-3).all()
        assert out[3] == 0.5

    def test_suite_reports_every_op_once(self):
        reports = gradcheck_suite(seeds=range(2))
        assert [r.op for r in reports] == list(OPS)
        assert all(r.passed for r in reports), [(r.op, r.max_rel_error) for r in reports]

    def test_corrupted_gradient_fails(self):
        reports = {r.op: r for r in gradcheck_suite(seeds=range(1), corrupt="dense")}
        assert not reports["dense"].passed
        assert reports["relu"].passed

    def test_unknown_corrupt_op(self):
        with pytest.raises(ValueError):
            gradcheck_suite(seeds=range(1), corrupt="pool")

    @pytest.mark.slow
    def test_full_suite(self):
        assert all(r.passed for r in gradcheck_suite())


class TestAdam:
    def test_first_step(self):
        p = {"w": torch.zeros(3)}
        adam_step(p, {"w": torch.ones(3)}, AdamState(), lr=0.001)
        np.testing.assert_allclose(p["w"].numpy(), -0.001 / (1 + 1e-8), rtol=1e-6)

    def test_zero_gradient(self):
        p = {"w": torch.tensor([1.0, -2.0])}
        state = adam_step(p, {"w": torch.zeros(2)}, AdamState(), lr=0.1)
        np.testing.assert_array_equal(p["w"].numpy(), [1.0, -2.0])
        assert state.t == 1

    def test_tensors_updated_independently(self):
        p = {"a": torch.tensor([0.5, 1.0]), "b": torch.tensor([0.5, 1.0])}
        g = torch.tensor([0.3, -0.7])
        state = AdamState()
        for _ in range(3):
            adam_step(p, {"a": g.clone(), "b": g.clone()}, state, lr=0.01)
        torch.testing.assert_close(p["a"], p["b"])

    def test_non_finite_gradient(self):
        p = {"w": torch.ones(2), "v": torch.ones(2)}
        state = AdamState()
        with pytest.raises(NonFiniteGradientError) as e:
            adam_step(p, {"w": torch.ones(2), "v": torch.tensor([1.0, float("nan")])}, state, lr=0.1)
        assert e.value.parameter == "v"
        np.testing.assert_array_equal(p["w"].numpy(), [1.0, 1.0])
        assert state.t == 0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            adam_step({"w": torch.ones(2)}, {"w": torch.ones(3)}, AdamState(), lr=0.1)

    def test_amsgrad_keeps_max(self):
        p = {"w": torch.zeros(1)}
        state = AdamState()
        adam_step(p, {"w": torch.tensor([10.0])}, state, lr=0.1, amsgrad=True)
        high = state.v_max["w"].clone()
        adam_step(p, {"w": torch.tensor([0.0])}, state, lr=0.1, amsgrad=True)
        assert state.v_max["w"] >= high

    def test_optimizer_skips_missing_grads(self):
        layer = Dense(2, 1)
        before = layer.bias.detach().clone()
        optimizer = Adam(layer.named_parameters(), lr=0.1)
        layer.weight.grad = torch.ones_like(layer.weight)
        optimizer.step()
        torch.testing.assert_close(layer.bias.detach(), before)
        optimizer.zero_grad()
        assert layer.weight.grad is None
