"""Reconstruction network tests: attention blocks, shapes, weights I/O."""

import math

import numpy as np
import pytest

from helpers import fd_gradient, rel_error

from hyperfake.autodiff import Var
from hyperfake.errors import CheckpointError, ConfigError, NumericError, ShapeError
from hyperfake.reconstruction import (
    FlexiAttention,
    ReconConfig,
    SmsaParams,
    flexi_attention,
    freeze,
    init_reconstruction,
    load_recon_weights,
    psnr,
    reconstruct,
    save_recon_weights,
    smsa,
)
from hyperfake.util import derive_rng

RNG = np.random.default_rng(53)

SMALL = ReconConfig(n_stages=1, feature_channels=16, n_heads=2, flexi_downsample=2)


class TestSmsa:
    def test_shape_and_row_sums(self):
        params = SmsaParams(32, 4, derive_rng(1, "s"), dtype=np.float64)
        out, attn = smsa(RNG.standard_normal((31, 32)), params, return_attention=True)
        assert out.shape == (31, 32)
        assert attn.shape == (4, 31, 31)
        assert np.allclose(attn.sum(axis=-1), 1.0, atol=1e-6)

    def test_zero_value_projection_identity_output_proj(self):
        params = SmsaParams(16, 2, derive_rng(2, "s"), dtype=np.float64)
        params.wv.data[:] = 0.0
        params.wo.data[:] = np.eye(16)
        out = smsa(RNG.standard_normal((8, 16)), params)
        assert np.array_equal(out, np.zeros((8, 16)))

    def test_divisibility_config_error(self):
        with pytest.raises(ConfigError):
            SmsaParams(10, 4, derive_rng(1, "s"))

    def test_non_finite_rejected(self):
        params = SmsaParams(8, 2, derive_rng(3, "s"), dtype=np.float64)
        bad = np.zeros((4, 8))
        bad[0, 0] = np.nan
        with pytest.raises(NumericError):
            smsa(bad, params)

    def test_gradient_wrt_tokens(self):
        params = SmsaParams(8, 2, derive_rng(4, "s"), dtype=np.float64)
        x = RNG.standard_normal((4, 8))
        vx = Var(x, requires_grad=True)
        smsa(vx, params).sum().backward()
        fd = fd_gradient(lambda arr: float(np.sum(smsa(arr, params))), x)
        assert rel_error(fd, vx.grad) < 1e-4


class TestFlexi:
    def _params(self, m=16, d=8, heads=2, factor=4):
        return FlexiAttention(m, d, heads, factor, derive_rng(5, "f"), dtype=np.float64)

    def test_shape_contract_31x16x16(self):
        params = self._params(m=16, factor=4)
        x = RNG.standard_normal((31, 16, 16))
        out = flexi_attention(x, params)
        assert out.shape == (31, 16, 16)

    def test_downsampled_token_count(self):
        params = self._params(m=16, factor=4)
        assert params.proj_in.shape == (16, 8)  # (16/4)^2 = 16 positions per channel

    def test_zero_output_projection_is_identity(self):
        params = self._params()
        params.proj_out.data[:] = 0.0
        x = RNG.standard_normal((5, 16, 16))
        out = flexi_attention(x, params)
        assert np.array_equal(out, x)

    def test_indivisible_factor_shape_error(self):
        params = self._params(m=16, factor=4)
        with pytest.raises(ShapeError):
            flexi_attention(RNG.standard_normal((3, 18, 18)), params)

    def test_resolution_mismatch_detected(self):
        params = self._params(m=16, factor=4)
        with pytest.raises(ShapeError, match="resolution"):
            flexi_attention(RNG.standard_normal((3, 32, 32)), params)


class TestReconstruct:
    def test_eq_shape_contract_64(self):
        model = init_reconstruction(ReconConfig(), (64, 64), seed=3)
        cube = reconstruct(RNG.random((3, 64, 64)).astype(np.float32), model)
        assert cube.shape == (31, 64, 64)
        assert np.all(np.isfinite(cube))

    @pytest.mark.parametrize("res", [(32, 32), (64, 32), (48, 48)])
    def test_shape_invariance_across_resolutions(self, res):
        model = init_reconstruction(SMALL, res, seed=4)
        cube = reconstruct(RNG.random((3, *res)).astype(np.float32), model)
        assert cube.shape == (31, *res)

    def test_zero_input_zero_biases_zero_cube(self):
        model = init_reconstruction(ReconConfig(n_stages=2), (32, 32), seed=5)
        # fresh models have all-zero biases already; make it explicit anyway
        for name, var in model.named_params().items():
            if "bias" in name:
                var.data[:] = 0.0
        cube = reconstruct(np.zeros((3, 32, 32), dtype=np.float32), model)
        assert np.array_equal(cube, np.zeros((31, 32, 32), dtype=np.float32))

    def test_deterministic_bit_identical(self):
        model = init_reconstruction(SMALL, (32, 32), seed=6)
        x = RNG.random((3, 32, 32)).astype(np.float32)
        assert np.array_equal(reconstruct(x, model), reconstruct(x, model))

    def test_batched_equals_per_sample(self):
        model = init_reconstruction(SMALL, (32, 32), seed=7)
        batch = RNG.random((3, 3, 32, 32)).astype(np.float32)
        stacked = reconstruct(batch, model)
        for i in range(3):
            assert np.allclose(stacked[i], reconstruct(batch[i], model), atol=1e-6)

    def test_bad_resolution_config_error(self):
        with pytest.raises(ConfigError):
            init_reconstruction(SMALL, (30, 30), seed=0)

    def test_flexi_downsample_four(self):
        cfg = ReconConfig(n_stages=1, feature_channels=16, n_heads=2, flexi_downsample=4)
        model = init_reconstruction(cfg, (32, 32), seed=14)
        cube = reconstruct(RNG.random((3, 32, 32)).astype(np.float32), model)
        assert cube.shape == (31, 32, 32)
        with pytest.raises(ConfigError):
            init_reconstruction(cfg, (36, 36), seed=14)  # 36 % 8 != 0

    def test_input_gradient_one_stage_16(self):
        model = init_reconstruction(SMALL, (16, 16), seed=8, dtype=np.float64)
        x = RNG.random((1, 3, 16, 16))
        vx = Var(x, requires_grad=True)
        model.forward_var(vx).mean().backward()
        fd = fd_gradient(lambda arr: float(model.forward_var(Var(arr)).data.mean()), x)
        assert rel_error(fd, vx.grad) < 1e-4


class TestPsnr:
    def test_uniform_offset_twenty_db(self):
        ref = RNG.random((31, 8, 8))
        assert abs(psnr(ref + 0.1, ref, peak=1.0) - 20.0) < 1e-6

    def test_identical_sentinel(self):
        ref = RNG.random((31, 4, 4))
        assert psnr(ref, ref) == math.inf

    def test_against_scalar_loop_oracle(self):
        pred = RNG.random((31, 5, 4))
        ref = RNG.random((31, 5, 4))
        total = 0.0
        for b in range(31):
            for i in range(5):
                for j in range(4):
                    total += (pred[b, i, j] - ref[b, i, j]) ** 2
        want = 20.0 * math.log10(1.0 / math.sqrt(total / (31 * 5 * 4)))
        assert abs(psnr(pred, ref) - want) < 1e-9

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            psnr(np.zeros((31, 4, 4)), np.zeros((31, 5, 5)))

    def test_nonpositive_peak_rejected(self):
        with pytest.raises(ConfigError):
            psnr(np.zeros((31, 4, 4)), np.ones((31, 4, 4)), peak=0.0)


class TestWeightsIO:
    def test_round_trip_bit_identical(self, tmp_path):
        model = init_reconstruction(SMALL, (32, 32), seed=9)
        path = tmp_path / "recon.hfw"
        save_recon_weights(model, path)
        assert (tmp_path / "recon.hfw.json").exists()
        loaded = load_recon_weights(path)
        orig = model.named_params()
        back = loaded.named_params()
        assert orig.keys() == back.keys()
        for name in orig:
            assert np.array_equal(orig[name].data, back[name].data), name
        assert loaded.config == model.config and loaded.resolution == model.resolution

    def test_frozen_state_round_trips(self, tmp_path):
        model = freeze(init_reconstruction(SMALL, (32, 32), seed=10))
        path = tmp_path / "recon.hfw"
        save_recon_weights(model, path)
        loaded = load_recon_weights(path)
        assert loaded.frozen
        assert all(not p.requires_grad for p in loaded.named_params().values())

    def test_mismatched_config_checkpoint_error(self, tmp_path):
        model = init_reconstruction(SMALL, (32, 32), seed=11)
        path = tmp_path / "recon.hfw"
        save_recon_weights(model, path)
        with pytest.raises(CheckpointError):
            load_recon_weights(path, expected=ReconConfig(n_stages=2, feature_channels=16,
                                                          n_heads=2))

    def test_corrupt_archive(self, tmp_path):
        path = tmp_path / "bad.hfw"
        path.write_bytes(b"ZZZZ not a zip")
        with pytest.raises(CheckpointError):
            load_recon_weights(path)

    def test_save_load_save_is_stable(self, tmp_path):
        model = init_reconstruction(SMALL, (32, 32), seed=12)
        p1, p2 = tmp_path / "a.hfw", tmp_path / "b.hfw"
        save_recon_weights(model, p1)
        save_recon_weights(load_recon_weights(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()


def test_freeze_marks_all_params():
    model = init_reconstruction(SMALL, (32, 32), seed=13)
    assert all(p.requires_grad for p in model.named_params().values())
    freeze(model)
    assert model.frozen
    assert all(not p.requires_grad for p in model.named_params().values())
