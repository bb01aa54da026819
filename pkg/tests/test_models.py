import struct

import numpy as np
import pytest

from intrinsic_hdr import models
from intrinsic_hdr.models import CheckpointError, build, forward, read_checkpoint, stack_inputs, write_checkpoint

SHAPES = {"shading": (4, 1), "albedo": (7, 3), "refinement": (10, 3)}


def random_input(role, n=2, size=16, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.01, 0.99, (n, models.IN_CHANNELS[role], size, size)).astype(np.float32)


class TestBuild:
    @pytest.mark.parametrize("role", models.ROLES)
    def test_channel_contract(self, role):
        cin, cout = SHAPES[role]
        net = build(role)
        assert net.in_channels == cin and net.out_channels == cout
        out = forward(net, random_input(role))
        assert out.shape == (2, cout, 16, 16)

    @pytest.mark.parametrize("role", models.ROLES)
    @pytest.mark.parametrize("delta", [-1, 1])
    def test_wrong_channel_count(self, role, delta):
        x = np.zeros((1, models.IN_CHANNELS[role] + delta, 16, 16), dtype=np.float32)
        with pytest.raises(ValueError, match="expects"):
            forward(build(role), x)

    def test_layout_sums(self):
        for role, layout in models.INPUT_LAYOUT.items():
            assert sum(c for _, c in layout) == models.IN_CHANNELS[role]
        assert [c for _, c in models.INPUT_LAYOUT["refinement"]] == [3, 3, 1, 3]

    def test_deterministic(self):
        a, b = build("albedo", seed=3), build("albedo", seed=3)
        for (_, p), (_, q) in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(p.value, q.value)
        c = build("albedo", seed=4)
        assert not np.array_equal(a.params["enc1.weight"].value, c.params["enc1.weight"].value)

    @pytest.mark.parametrize("role", models.ROLES)
    def test_parameter_budget(self, role):
        assert build(role).num_parameters() <= 100_000

    def test_unknown_role(self):
        with pytest.raises(ValueError):
            build("depth")

    def test_dims_must_divide(self):
        with pytest.raises(ValueError, match="divisible"):
            forward(build("shading"), np.zeros((1, 4, 18, 16), dtype=np.float32))


class TestForward:
    @pytest.mark.parametrize("role", models.ROLES)
    def test_range(self, role):
        x = random_input(role, seed=1) * 50 - 25
        out = forward(build(role, anchored=False, head_gain=5.0), x).value
        assert np.all((out > 0) & (out < 1))

    def test_zero_head_gives_half(self):
        out = forward(build("refinement", anchored=False, zero_head=True), random_input("refinement")).value
        assert np.all(out == 0.5)

    def test_zero_head_anchored_reproduces_anchor(self):
        x = random_input("albedo", seed=2)
        out = forward(build("albedo", zero_head=True), x).value
        np.testing.assert_allclose(out, x[:, 3:6], rtol=1e-5)

    def test_stack_inputs_order(self):
        blocks = {"ldr": np.zeros((3, 4, 4)), "albedo_ldr": np.ones((3, 4, 4)), "mask": np.full((1, 4, 4), 2.0)}
        x = stack_inputs("albedo", **blocks)
        assert x.shape == (7, 4, 4)
        assert x[0, 0, 0] == 0 and x[3, 0, 0] == 1 and x[6, 0, 0] == 2

    def test_stack_inputs_validates(self):
        with pytest.raises(ValueError, match="missing"):
            stack_inputs("shading", ldr=np.zeros((3, 4, 4)))
        with pytest.raises(ValueError, match="channels"):
            stack_inputs("shading", ldr=np.zeros((3, 4, 4)), inv_shading_ldr=np.zeros((3, 4, 4)))


class TestCheckpoint:
    @pytest.mark.parametrize("role", models.ROLES)
    @pytest.mark.parametrize("anchored", [True, False])
    def test_roundtrip(self, tmp_path, role, anchored):
        net = build(role, seed=7, anchored=anchored)
        write_checkpoint(net, tmp_path / "n.ckpt")
        back = read_checkpoint(tmp_path / "n.ckpt")
        assert back.role == role and back.anchored == anchored
        for (name, p), (_, q) in zip(net.parameters(), back.parameters()):
            np.testing.assert_array_equal(p.value, q.value, err_msg=name)

    def test_header_layout(self, tmp_path):
        write_checkpoint(build("albedo"), tmp_path / "n.ckpt")
        data = (tmp_path / "n.ckpt").read_bytes()
        assert data[:8] == b"IHDRCKPT"
        assert struct.unpack_from("<III", data, 8) == (1, 1 | models.ANCHORED_FLAG, 12)
        assert struct.unpack_from("<5I", data, 20) == (4, 16, 7, 3, 3)

    @pytest.mark.parametrize(
        "mutate, message",
        [
            (lambda b: b"XXXXXXXX" + b[8:], "bad magic"),
            (lambda b: b[:8] + struct.pack("<I", 9) + b[12:], "version"),
            (lambda b: b[:-10], "truncated"),
            (lambda b: b + b"\0", "trailing"),
            (lambda b: b[:12] + struct.pack("<I", 7) + b[16:], "role"),
        ],
    )
    def test_corruption(self, tmp_path, mutate, message):
        path = tmp_path / "n.ckpt"
        write_checkpoint(build("shading"), path)
        path.write_bytes(mutate(path.read_bytes()))
        with pytest.raises(CheckpointError, match=message):
            read_checkpoint(path)
