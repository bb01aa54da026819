import numpy as np
import pytest

from intrinsic_hdr import autodiff as ad
from intrinsic_hdr.autodiff import Tensor


def leaf(x):
    return Tensor(np.asarray(x, dtype=float), requires_grad=True)


class TestBasics:
    def test_sigmoid_at_zero(self):
        x = leaf([0.0])
        y = ad.sum(ad.sigmoid(x))
        y.backward()
        assert y.item() == 0.5 and x.grad[0] == 0.25

    def test_mul_by_one(self):
        x = leaf([1.5, -2.0])
        y = ad.sum(x * 1.0)
        y.backward()
        np.testing.assert_array_equal(x.grad, [1, 1])

    def test_root_gradient_is_one(self):
        x = leaf(3.0)
        y = x * x
        y.backward()
        assert y.grad == 1.0 and x.grad == 6.0

    def test_gradient_accumulates_over_reuse(self):
        x = leaf(2.0)
        y = x * x + x
        y.backward()
        assert x.grad == 5.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            leaf(np.ones((2, 3))) + leaf(np.ones((3, 2)))

    def test_div_guard_keeps_zero_finite(self):
        x = leaf([0.0])
        y = ad.sum(1.0 / x)
        y.backward()
        assert np.isfinite(y.item()) and np.isfinite(x.grad).all()


class TestConv:
    def test_identity_kernel(self):
        x = np.random.default_rng(0).normal(size=(1, 1, 3, 3))
        out = ad.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))))
        np.testing.assert_array_equal(out.value, x)

    def test_same_padding_against_direct_sum(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 3, 5, 4))
        w = rng.normal(size=(2, 3, 3, 3))
        b = rng.normal(size=2)
        out = ad.conv2d(Tensor(x), Tensor(w), Tensor(b)).value
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        ref = np.zeros((2, 2, 5, 4))
        for n in range(2):
            for o in range(2):
                for i in range(5):
                    for j in range(4):
                        ref[n, o, i, j] = np.sum(xp[n, :, i : i + 3, j : j + 3] * w[o]) + b[o]
        np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


class TestPooling:
    def test_avgpool_and_upsample(self):
        x = np.arange(16.0).reshape(1, 1, 4, 4)
        pooled = ad.avgpool2(Tensor(x)).value
        np.testing.assert_array_equal(pooled[0, 0], [[2.5, 4.5], [10.5, 12.5]])
        up = ad.upsample2(Tensor(pooled)).value
        assert up.shape == x.shape and up[0, 0, 1, 1] == 2.5

    def test_concat_channels(self):
        a, b = Tensor(np.zeros((1, 2, 2, 2))), Tensor(np.ones((1, 3, 2, 2)))
        assert ad.concat([a, b]).shape == (1, 5, 2, 2)


class TestGradCheck:
    def test_square(self):
        assert ad.grad_check(lambda t: ad.sum(t * t), np.array([3.0])) < 1e-9

    def test_constant(self):
        assert ad.grad_check(lambda t: ad.sum(t * 0.0) + 1.0, np.array([0.3, 0.7])) == 0.0

    def test_every_op(self):
        from intrinsic_hdr.gradcheck import TOLERANCE, op_cases

        names = set()
        for name, f, x in op_cases(np.random.default_rng(0)):
            names.add(name)
            assert ad.grad_check(f, x) < TOLERANCE, name
        expected = {"add", "sub", "mul", "div", "pow", "clampmin", "mean", "abs", "sigmoid"}
        expected |= {"conv2d", "avgpool2", "upsample2", "concat"}
        assert expected <= names

    def test_non_finite_rejected(self):
        with pytest.raises(FloatingPointError):
            ad.grad_check(lambda t: ad.sum(t * np.inf), np.array([1.0]))
