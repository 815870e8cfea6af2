"""Finite-difference checks of every analytic backward pass.

Inputs stay small (<= 10x10x2), kinks and pool ties are excluded, and
tolerances follow the mixed relative-error rule used throughout.
"""

import numpy as np
import pytest

from conftest import fd_grad, max_rel_err
from padkit import neural_net as nn

TOL = 1e-6


class TestConvGradients:
    @pytest.mark.parametrize("seed", range(5))
    def test_conv_input_kernel_bias(self, seed):
        rng = np.random.default_rng(seed)
        h, w = rng.integers(5, 11, size=2)
        cin = int(rng.integers(1, 3))
        nf = int(rng.integers(1, 3))
        x = rng.standard_normal((h, w, cin))
        kernel = rng.standard_normal((5, 5, cin, nf))
        bias = rng.standard_normal(nf)
        direction = rng.standard_normal((h - 4, w - 4, nf))

        gx, gk, gb = nn.conv2d_backward(direction, x, kernel)
        assert max_rel_err(gx, fd_grad(lambda a: float(np.sum(nn.conv2d_forward(a, kernel, bias) * direction)), x)) < TOL
        assert max_rel_err(gk, fd_grad(lambda a: float(np.sum(nn.conv2d_forward(x, a, bias) * direction)), kernel)) < TOL
        assert max_rel_err(gb, fd_grad(lambda a: float(np.sum(nn.conv2d_forward(x, kernel, a) * direction)), bias)) < TOL


class TestPoolGradients:
    @pytest.mark.parametrize("seed", range(5))
    def test_maxpool_away_from_ties(self, seed):
        rng = np.random.default_rng(100 + seed)
        h, w = rng.integers(3, 11, size=2)
        c = int(rng.integers(1, 3))
        x = rng.standard_normal((h, w, c))  # continuous values: ties have measure zero
        out, argmax = nn.maxpool_forward(x)
        direction = rng.standard_normal(out.shape)
        grad = nn.maxpool_backward(direction, argmax, x.shape)

        def loss(a):
            o, _ = nn.maxpool_forward(a)
            return float(np.sum(o * direction))

        assert max_rel_err(grad, fd_grad(loss, x)) < TOL


class TestDenseGradients:
    @pytest.mark.parametrize("seed", range(5))
    def test_dense_input_weights_bias(self, seed):
        rng = np.random.default_rng(200 + seed)
        n, m = rng.integers(1, 9, size=2)
        x = rng.standard_normal(n)
        weights = rng.standard_normal((n, m))
        bias = rng.standard_normal(m)
        direction = rng.standard_normal(m)

        gx, gw, gb = nn.dense_backward(direction, x, weights)
        assert max_rel_err(gx, fd_grad(lambda a: float(np.sum(nn.dense_forward(a, weights, bias) * direction)), x)) < 1e-8
        assert max_rel_err(gw, fd_grad(lambda a: float(np.sum(nn.dense_forward(x, a, bias) * direction)), weights)) < 1e-8
        assert max_rel_err(gb, fd_grad(lambda a: float(np.sum(nn.dense_forward(x, weights, a) * direction)), bias)) < 1e-8


class TestActivationGradients:
    @pytest.mark.parametrize("seed", range(5))
    def test_relu_away_from_kink(self, seed):
        rng = np.random.default_rng(300 + seed)
        x = rng.standard_normal(16)
        x = np.where(np.abs(x) < 0.1, 0.5, x)  # keep clear of the kink
        direction = rng.standard_normal(16)
        grad = nn.relu_backward(direction, x)
        assert max_rel_err(grad, fd_grad(lambda a: float(np.sum(nn.relu(a) * direction)), x)) < TOL

    @pytest.mark.parametrize("seed", range(5))
    def test_sigmoid(self, seed):
        rng = np.random.default_rng(400 + seed)
        x = rng.standard_normal(12) * 3.0
        direction = rng.standard_normal(12)
        grad = nn.sigmoid_backward(direction, nn.sigmoid(x))
        assert max_rel_err(grad, fd_grad(lambda a: float(np.sum(nn.sigmoid(a) * direction)), x)) < TOL

    @pytest.mark.parametrize("seed", range(5))
    def test_softmax(self, seed):
        rng = np.random.default_rng(500 + seed)
        x = rng.standard_normal(6)
        direction = rng.standard_normal(6)
        grad = nn.softmax_backward(direction, nn.softmax(x))
        assert max_rel_err(grad, fd_grad(lambda a: float(np.sum(nn.softmax(a) * direction)), x)) < TOL


class TestLossGradients:
    @pytest.mark.parametrize("seed", range(5))
    def test_binary_ce_dldp(self, seed):
        rng = np.random.default_rng(600 + seed)
        p = rng.uniform(0.05, 0.95, size=6)
        for y in (0, 1):
            _, grad = nn.loss_binary_ce(p, np.full(6, y))

            def loss(a):
                values, _ = nn.loss_binary_ce(a, np.full(6, y))
                return float(values.sum())

            assert max_rel_err(grad, fd_grad(loss, p)) < TOL

    @pytest.mark.parametrize("seed", range(5))
    def test_categorical_ce_combined_with_softmax(self, seed):
        # the returned gradient is d(-log softmax(z)_y)/dz = p - onehot(y)
        rng = np.random.default_rng(700 + seed)
        z = rng.standard_normal(5)
        y = int(rng.integers(0, 5))
        p = nn.softmax(z)
        _, grad = nn.loss_categorical_ce(p, y)

        def loss(a):
            values, _ = nn.loss_categorical_ce(nn.softmax(a), y)
            return float(values)

        assert max_rel_err(grad, fd_grad(loss, z)) < TOL


class TestWholeNetworkGradient:
    def test_end_to_end_binary(self):
        # FD through the full spoofnet stack against the trainer's gradients
        rng = np.random.default_rng(800)
        model = nn.build_spoofnet(25, 25, 1, seed=9)
        x = rng.random((2, 25, 25, 1))
        y = np.array([0, 1])

        from padkit.neural_net import _backward, _forward, _head_loss_and_grad

        out, caches = _forward(model, x, keep_cache=True)
        _, grad_z = _head_loss_and_grad(out, y, "binary_ce")
        grads = _backward(model, caches, grad_z)

        def loss_for(layer_index, which):
            def loss(arr):
                saved = model.weights[layer_index]
                pair = (arr, saved[1]) if which == 0 else (saved[0], arr)
                model.weights[layer_index] = pair
                try:
                    p, _ = _forward(model, x, keep_cache=False)
                    values, _ = nn.loss_binary_ce(p[:, 0], y)
                    return float(values.mean())
                finally:
                    model.weights[layer_index] = saved

            return loss

        # spot-check the two most entangled parameters: conv2 kernel, dense1 weights
        fd = fd_grad(loss_for(1, 0), model.weights[1][0], h=1e-5)
        assert max_rel_err(grads[2], fd) < 1e-5
        fd = fd_grad(loss_for(3, 1), model.weights[3][1], h=1e-5)
        assert max_rel_err(grads[7], fd) < 1e-5
