import numpy as np
import pytest
import torch

from numpy.testing import assert_allclose
from torch import nn

from omniqa.nn import functional as OF
from omniqa.nn.architectures import descriptor_features, descriptor_specs, scnn_specs, vgg16_specs
from omniqa.nn.gradcheck import GRADCHECK_CASES, TOLERANCE, check_case, gradient_check, run_suite
from omniqa.nn.network import (BATCHNORM, FLATTEN, GLOBAL_MAXPOOL, RELU, Network, build_network, conv, dense,
                               infer_shapes, maxpool)
from omniqa.nn.optim import AdamOptimizer, ParamGroup
from omniqa.utils.errors import NetworkSpecError, NumericError


class TestFunctional:
    def test_conv_same_padding(self):
        x = torch.randn(1, 2, 9, 9)
        w = torch.randn(3, 2, 3, 3)
        assert OF.conv2d(x, w).shape == (1, 3, 9, 9)
        assert OF.conv2d(x, w, stride=2).shape == (1, 3, 5, 5)

    def test_conv_channel_mismatch(self):
        with pytest.raises(ValueError):
            OF.conv2d(torch.zeros(1, 3, 4, 4), torch.zeros(2, 2, 3, 3))

    def test_maxpool_window_too_large(self):
        with pytest.raises(ValueError):
            OF.maxpool2d(torch.zeros(1, 1, 2, 2), 5)

    def test_batchnorm_train_normalizes(self):
        state = nn.BatchNorm1d(4)
        out = OF.batchnorm(torch.randn(16, 4) * 3 + 2, state, 'train')
        assert_allclose(out.mean(0).detach().numpy(), 0.0, atol=1e-5)

    def test_batchnorm_running_update(self):
        state = nn.BatchNorm1d(1)
        x = torch.tensor([[1.0], [3.0]])
        OF.batchnorm(x, state, 'train')
        # running = 0.9 * running + 0.1 * batch
        assert float(state.running_mean) == pytest.approx(0.2)

    def test_batchnorm_rejects_single_sample(self):
        with pytest.raises(ValueError):
            OF.batchnorm(torch.randn(1, 3), nn.BatchNorm1d(3), 'train')

    def test_softplus_is_stable(self):
        out = OF.softplus(torch.tensor([-1000.0, 0.0, 1000.0]))
        assert torch.isfinite(out).all()
        assert float(out[1]) == pytest.approx(np.log(2.0))
        assert float(out[2]) == pytest.approx(1000.0)

    def test_dense_mismatch(self):
        with pytest.raises(ValueError):
            OF.dense(torch.zeros(2, 3), torch.zeros(4, 5))


class TestNetwork:
    def test_shapes(self):
        specs = [conv(3, 4, stride=2), BATCHNORM, RELU, maxpool(2), FLATTEN, dense(5)]
        net = build_network(specs, (3, 16, 16))
        assert net.shapes[0] == (4, 8, 8)
        assert net.output_shape == (5,)
        assert net(torch.randn(2, 3, 16, 16)).shape == (2, 5)

    def test_conv_before_batchnorm_has_no_bias(self):
        net = Network([conv(3, 4), BATCHNORM, RELU], (1, 8, 8))
        assert net.layers[0].bias is None

    def test_seeded_init(self):
        a = Network([conv(3, 4), RELU, GLOBAL_MAXPOOL], (2, 8, 8), seed=3)
        b = Network([conv(3, 4), RELU, GLOBAL_MAXPOOL], (2, 8, 8), seed=3)
        c = Network([conv(3, 4), RELU, GLOBAL_MAXPOOL], (2, 8, 8), seed=4)
        assert torch.equal(a.layers[0].weight, b.layers[0].weight)
        assert not torch.equal(a.layers[0].weight, c.layers[0].weight)

    def test_names_the_offending_layer(self):
        with pytest.raises(NetworkSpecError) as err:
            infer_shapes([conv(3, 4), RELU, dense(3)], (1, 8, 8))
        assert err.value.index == 2
        assert err.value.kind == 'dense'

    def test_window_too_large(self):
        with pytest.raises(NetworkSpecError) as err:
            infer_shapes([maxpool(2), maxpool(2), maxpool(4, padding=0)], (1, 8, 8))
        assert err.value.index == 2


class TestArchitectures:
    def test_full_descriptor(self):
        shapes = infer_shapes(descriptor_specs(1), (3, 256, 256))
        assert shapes[-1] == (512,)
        assert descriptor_features(1) == 512

    def test_full_global_streams_agree(self):
        scnn = infer_shapes(scnn_specs(1), (3, 512, 1024))[-1]
        vgg = infer_shapes(vgg16_specs(1), (3, 512, 1024))[-1]
        assert scnn == (128, 32, 64)
        assert vgg == (512, 32, 64)

    def test_scaled(self):
        assert infer_shapes(descriptor_specs(4), (3, 64, 64))[-1] == (128,)
        assert infer_shapes(scnn_specs(4), (3, 128, 256))[-1] == (32, 8, 16)


class TestOptimizer:
    def _group(self, lr=0.1, step=0, gamma=1.0):
        module = nn.Linear(1, 1, bias=False)
        with torch.no_grad():
            module.weight.fill_(1.0)
        return ParamGroup('w', module, lr, step, gamma)

    def test_first_step_moves_by_lr(self):
        group = self._group(lr=0.1)
        opt = AdamOptimizer([group])
        opt.zero_grad()
        (group.module.weight * 3.0).sum().backward()
        opt.step()
        # bias-corrected first Adam step is lr * sign(g)
        assert float(group.module.weight) == pytest.approx(0.9, abs=1e-6)
        assert int(opt.state('w.weight')['step']) == 1

    def test_minimizes_a_scalar_quadratic(self):
        group = self._group(lr=0.1)
        opt = AdamOptimizer([group])
        w = group.module.weight
        for step in range(1, 201):
            opt.zero_grad()
            (w ** 2).sum().backward()
            opt.step()
            if abs(float(w)) < 0.01:
                break
        assert abs(float(w)) < 0.01, f"|w| = {abs(float(w)):.4f} after {step} steps"

    def test_zero_gradient_leaves_parameter(self):
        group = self._group(lr=0.1)
        opt = AdamOptimizer([group])
        group.module.weight.grad = torch.zeros_like(group.module.weight)
        opt.step()
        assert float(group.module.weight) == 1.0

    def test_step_schedule(self):
        group = self._group(lr=1.0, step=2, gamma=0.5)
        opt = AdamOptimizer([group])
        rates = []
        for _ in range(5):
            rates.append(opt.learning_rates()['w'])
            opt.end_epoch()
        assert rates == [1.0, 1.0, 0.5, 0.5, 0.25]

    def test_non_finite_gradient_is_named(self):
        group = self._group()
        opt = AdamOptimizer([group])
        group.module.weight.grad = torch.tensor([[float('nan')]])
        with pytest.raises(NumericError, match='w.weight'):
            opt.step()


class TestGradcheck:
    def test_detects_a_wrong_gradient(self):
        x = torch.randn(5, dtype=torch.float64, requires_grad=True)

        class Wrong(torch.autograd.Function):
            @staticmethod
            def forward(ctx, t):
                return t ** 2

            @staticmethod
            def backward(ctx, g):
                return g

        ok, _ = gradient_check(Wrong.apply, (x,))
        assert not ok

    def test_accepts_a_correct_gradient(self):
        x = torch.randn(5, dtype=torch.float64, requires_grad=True)
        ok, error = gradient_check(lambda t: t ** 3, (x,))
        assert ok
        assert error < TOLERANCE

    @pytest.mark.parametrize('name', [n for n in GRADCHECK_CASES if n != 'vgcn-loss'])
    def test_case(self, name):
        result = check_case(name, instances=3)
        assert result.passed, f"{name}: {result.max_rel_error:.2e} >= {TOLERANCE}"

    def test_composed_loss(self):
        assert check_case('vgcn-loss', instances=1).passed

    @pytest.mark.slow
    def test_full_suite(self):
        results = run_suite()
        assert all(r.instances == 20 for r in results)
        assert all(r.passed for r in results), [(r.name, r.max_rel_error) for r in results if not r.passed]
