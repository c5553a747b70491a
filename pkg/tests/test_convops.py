import numpy as np
import pytest

from conftest import random_flow
from flowconvgru.convops import (
    ConvFilter,
    DiffusionFilter,
    conv2d_same,
    diffusion_conv,
    diffusion_powers,
    flow_aware_gconv,
)
from flowconvgru.errors import ShapeError
from flowconvgru.flowgraph import SparseFlowMatrix, make_transitions
from oracles import dense_diffusion, dense_gconv, naive_conv2d


class TestDiffusionConv:
    def test_k1_is_weighted_identity(self, rng):
        f = random_flow(rng, 5, allow_empty=False)
        s = rng.normal(size=5)
        theta = np.array([[0.3, -1.2]])
        out = diffusion_conv(s, make_transitions(f), theta)
        assert np.allclose(out, (0.3 - 1.2) * s, atol=1e-12)

    def test_two_node_walk(self):
        # single flow 1->2; theta selects the one-step outgoing walk
        f = SparseFlowMatrix.from_entries(2, [(0, 1, 1.0)])
        theta = np.array([[0.0, 0.0], [1.0, 0.0]])
        out = diffusion_conv(np.array([0.0, 1.0]), make_transitions(f), theta)
        assert np.allclose(out, [1.0, 0.0], atol=1e-15)

    def test_matches_dense_matrix_powers(self, rng):
        for _ in range(40):
            n = int(rng.integers(2, 7))
            f = random_flow(rng, n)
            s = rng.normal(size=n)
            theta = rng.normal(size=(3, 2))
            ref = dense_diffusion(s, f.to_dense(), theta)
            out = diffusion_conv(s, make_transitions(f), theta)
            assert np.allclose(out, ref, atol=1e-12)

    def test_powers_start_at_identity_both_directions(self, rng):
        f = random_flow(rng, 4, allow_empty=False)
        s = rng.normal(size=(4, 2))
        pw = diffusion_powers(s, make_transitions(f), 3)
        assert pw.shape == (3, 2, 4, 2)
        assert np.array_equal(pw[0, 0], s)
        assert np.array_equal(pw[0, 1], s)

    def test_shape_mismatch(self, rng):
        f = random_flow(rng, 4)
        with pytest.raises(ShapeError):
            diffusion_conv(np.zeros(5), make_transitions(f), np.zeros((2, 2)))

    def test_locality(self, rng):
        # a 3-node chain 0->1->2: with K=2 (walks of length <= 1), node 0's
        # output cannot see node 2
        f = SparseFlowMatrix.from_entries(3, [(0, 1, 1.0), (1, 2, 1.0)])
        tp = make_transitions(f)
        theta = rng.normal(size=(2, 2))
        s = rng.normal(size=3)
        base = diffusion_conv(s, tp, theta)[0]
        s2 = s.copy()
        s2[2] += 100.0
        assert diffusion_conv(s2, tp, theta)[0] == base


class TestFlowAwareGconv:
    def test_single_channel_reduces_to_diffusion(self, rng):
        f = random_flow(rng, 5, allow_empty=False)
        x = rng.normal(size=(5, 1))
        theta = rng.normal(size=(1, 1, 2, 2))
        a = flow_aware_gconv(x, f, DiffusionFilter(theta))
        b = diffusion_conv(x[:, 0], make_transitions(f), theta[0, 0])
        assert np.allclose(a[:, 0], b, atol=1e-14)

    def test_zero_filter(self, rng):
        f = random_flow(rng, 4)
        x = rng.normal(size=(4, 2))
        out = flow_aware_gconv(x, f, DiffusionFilter(np.zeros((2, 3, 2, 2))))
        assert np.array_equal(out, np.zeros((4, 3)))

    def test_matches_per_channel_oracle(self, rng):
        for _ in range(30):
            n = int(rng.integers(2, 6))
            f = random_flow(rng, n)
            x = rng.normal(size=(n, 2))
            theta = rng.normal(size=(2, 3, 2, 2))
            ref = dense_gconv(x, f.to_dense(), theta)
            out = flow_aware_gconv(x, f, DiffusionFilter(theta))
            assert np.allclose(out, ref, atol=1e-12)

    def test_linear_in_signal(self, rng):
        f = random_flow(rng, 5)
        filt = DiffusionFilter(rng.normal(size=(2, 2, 2, 2)))
        x, y = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
        a, b = 1.7, -0.4
        lhs = flow_aware_gconv(a * x + b * y, f, filt)
        rhs = a * flow_aware_gconv(x, f, filt) + b * flow_aware_gconv(y, f, filt)
        assert np.allclose(lhs, rhs, atol=1e-10)

    def test_flow_scale_invariance(self, rng):
        f = random_flow(rng, 5, allow_empty=False)
        x = rng.normal(size=(5, 2))
        filt = DiffusionFilter(rng.normal(size=(2, 2, 3, 2)))
        base = flow_aware_gconv(x, f, filt)
        for c in (0.5, 3.0, 100.0):
            assert np.allclose(flow_aware_gconv(x, f.scaled(c), filt), base, atol=1e-12)

    def test_channel_mismatch(self, rng):
        f = random_flow(rng, 4)
        with pytest.raises(ShapeError):
            flow_aware_gconv(rng.normal(size=(4, 3)), f, DiffusionFilter(rng.normal(size=(2, 2, 2, 2))))


class TestConv2dSame:
    def test_single_cell_sees_only_center_tap(self, rng):
        kernel = rng.normal(size=(3, 3, 1, 1))
        bias = np.array([0.25])
        x = np.array([[[2.0]]])
        out = conv2d_same(x, ConvFilter(kernel, bias))
        assert np.allclose(out, kernel[1, 1, 0, 0] * 2.0 + 0.25, atol=1e-15)

    def test_zero_input_broadcasts_bias(self, rng):
        kernel = rng.normal(size=(3, 3, 2, 3))
        bias = np.array([1.0, -2.0, 3.0])
        out = conv2d_same(np.zeros((4, 5, 2)), ConvFilter(kernel, bias))
        assert np.allclose(out, np.broadcast_to(bias, (4, 5, 3)))

    def test_matches_naive_loops(self, rng):
        for _ in range(30):
            m, k = int(rng.integers(1, 6)), int(rng.integers(1, 6))
            c_in, c_out = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            ks = int(rng.choice([1, 3, 5]))
            x = rng.normal(size=(m, k, c_in))
            kernel = rng.normal(size=(ks, ks, c_in, c_out))
            bias = rng.normal(size=c_out)
            ref = naive_conv2d(x, kernel, bias)
            out = conv2d_same(x, ConvFilter(kernel, bias))
            assert np.allclose(out, ref, atol=1e-12)

    def test_bias_optional(self, rng):
        x = rng.normal(size=(3, 3, 2))
        kernel = rng.normal(size=(3, 3, 2, 2))
        a = conv2d_same(x, ConvFilter(kernel, None))
        b = conv2d_same(x, ConvFilter(kernel, np.zeros(2)))
        assert np.allclose(a, b, atol=1e-15)

    def test_linear_in_input(self, rng):
        filt = ConvFilter(rng.normal(size=(3, 3, 2, 2)), None)
        x, y = rng.normal(size=(4, 4, 2)), rng.normal(size=(4, 4, 2))
        lhs = conv2d_same(2.0 * x - 0.5 * y, filt)
        rhs = 2.0 * conv2d_same(x, filt) - 0.5 * conv2d_same(y, filt)
        assert np.allclose(lhs, rhs, atol=1e-10)

    def test_even_kernel_rejected(self, rng):
        with pytest.raises(ShapeError):
            ConvFilter(rng.normal(size=(2, 2, 1, 1)), None)

    def test_channel_mismatch(self, rng):
        filt = ConvFilter(rng.normal(size=(3, 3, 2, 2)), None)
        with pytest.raises(ShapeError):
            conv2d_same(rng.normal(size=(3, 3, 1)), filt)
