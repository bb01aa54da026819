import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from intrinsic_hdr import intrinsic as ir


def px(*values):
    return np.array(values, dtype=float).reshape(1, 1, -1)


class TestCompose:
    def test_examples(self):
        np.testing.assert_array_equal(ir.compose(px(0.5, 0.5, 0.5), px(2)), px(1, 1, 1))
        np.testing.assert_array_equal(ir.compose(px(1, 0, 0.25), px(4)), px(4, 0, 1))

    def test_unit_shading_is_identity(self):
        a = np.random.default_rng(0).uniform(0, 1, (3, 4, 3))
        np.testing.assert_array_equal(ir.compose(a, np.ones((3, 4, 1))), a)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            ir.compose(np.ones((2, 2, 3)), np.ones((3, 2, 1)))


class TestInverseMaps:
    def test_shading_values(self):
        assert ir.shading_to_inverse(px(0))[0, 0, 0] == 1.0
        assert ir.shading_to_inverse(px(1))[0, 0, 0] == 0.5
        assert ir.inverse_to_shading(px(0.5))[0, 0, 0] == 1.0
        assert ir.shading_to_inverse(px(9))[0, 0, 0] == pytest.approx(0.1, rel=1e-15)

    def test_image_values(self):
        assert ir.image_to_inverse(px(0))[0, 0, 0] == 1.0
        assert ir.image_to_inverse(px(3))[0, 0, 0] == 0.25

    @pytest.mark.parametrize("fn", [ir.inverse_to_shading, ir.inverse_to_image])
    def test_degenerate_inverse(self, fn):
        with pytest.raises(ValueError, match="degenerate"):
            fn(px(0.0))

    @given(st.floats(0, 1e4))
    def test_roundtrip_from_shading(self, s):
        back = ir.inverse_to_shading(ir.shading_to_inverse(px(s)))[0, 0, 0]
        assert back == pytest.approx(s, rel=1e-10, abs=1e-12)

    @given(st.floats(1e-3, 1.0))
    def test_roundtrip_from_inverse(self, d):
        back = ir.shading_to_inverse(ir.inverse_to_shading(px(d)))[0, 0, 0]
        assert back == pytest.approx(d, rel=1e-10)

    def test_image_roundtrip(self):
        img = np.random.default_rng(1).exponential(3.0, (5, 5, 3))
        np.testing.assert_allclose(ir.inverse_to_image(ir.image_to_inverse(img)), img, rtol=1e-10, atol=1e-12)

    def test_strictly_decreasing(self):
        s = np.linspace(0, 50, 200).reshape(1, -1, 1)
        assert np.all(np.diff(ir.shading_to_inverse(s)[0, :, 0]) < 0)
        assert np.all(np.diff(ir.image_to_inverse(s)[0, :, 0]) < 0)


class TestImplied:
    def test_implied_albedo_example(self):
        np.testing.assert_allclose(ir.implied_albedo(px(2, 2, 2), px(0.25)), px(2 / 3, 2 / 3, 2 / 3), rtol=1e-12)

    def test_implied_albedo_zero_numerator(self):
        assert not ir.implied_albedo(px(0, 0, 0), px(0.3)).any()

    @settings(max_examples=50)
    @given(st.integers(0, 2**32 - 1))
    def test_implied_albedo_consistency(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.uniform(0.01, 1, (4, 4, 3))
        s = rng.uniform(1e-6, 100, (4, 4, 1))
        d = ir.shading_to_inverse(s)
        np.testing.assert_allclose(ir.implied_albedo(ir.compose(a, s), d), a, rtol=1e-6)
        i = ir.compose(a, s)
        np.testing.assert_allclose(ir.combine_intrinsics(ir.implied_albedo(i, d), d), i, rtol=1e-6)

    def test_implied_inverse_shading(self):
        assert ir.implied_inverse_shading(px(0.3, 0.6, 0.9), px(0.3, 0.6, 0.9))[0, 0, 0] == pytest.approx(0.5, abs=1e-5)
        assert ir.implied_inverse_shading(px(0.2, 0.4, 0.5), px(0, 0, 0))[0, 0, 0] == pytest.approx(1.0, abs=1e-4)
        assert ir.implied_inverse_shading(px(0.5, 0.5, 0.5), px(1, 1, 1))[0, 0, 0] == pytest.approx(1 / 3, abs=1e-5)

    def test_implied_inverse_shading_is_single_channel(self):
        assert ir.implied_inverse_shading(np.ones((2, 3, 3)), np.ones((2, 3, 3))).shape == (2, 3, 1)


class TestSoftMask:
    @pytest.mark.parametrize("value, expected", [(0.8, 0.0), (1.0, 1.0), (0.9, 0.5), (0.3, 0.0)])
    def test_ramp(self, value, expected):
        assert ir.soft_mask(px(value))[0, 0, 0] == pytest.approx(expected, abs=1e-12)

    def test_exact_endpoints(self):
        x = np.random.default_rng(2).uniform(0, 1, (8, 8, 3))
        x[0, 0] = 1.0
        m = ir.soft_mask(x)
        assert np.all(m[x <= 0.8] == 0) and np.all(m[x == 1.0] == 1.0)
        assert m.min() >= 0 and m.max() <= 1

    def test_threshold_validation(self):
        with pytest.raises(ValueError):
            ir.soft_mask(px(0.5), 1.0)

    def test_guidance_mask_takes_channel_max(self):
        m = ir.guidance_mask(px(0.9, 0.2, 1.0))
        assert m.shape == (1, 1, 1) and m[0, 0, 0] == pytest.approx(1.0)


class TestCombine:
    def test_examples(self):
        np.testing.assert_allclose(ir.combine_intrinsics(px(0.5, 0.5, 0.5), px(0.5)), px(0.5, 0.5, 0.5))
        np.testing.assert_allclose(ir.combine_intrinsics(px(1, 1, 1), px(0.1)), px(9, 9, 9), rtol=1e-14)

    def test_matches_compose(self):
        rng = np.random.default_rng(3)
        a, s = rng.uniform(0, 1, (4, 4, 3)), rng.uniform(0, 20, (4, 4, 1))
        np.testing.assert_allclose(ir.combine_intrinsics(a, ir.shading_to_inverse(s)), ir.compose(a, s), rtol=1e-12)

    def test_zero_inverse_rejected(self):
        with pytest.raises(ValueError):
            ir.combine_intrinsics(px(1, 1, 1), px(0))
