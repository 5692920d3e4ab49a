"""Band attention, mixing and reduction tests."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import check_grad_wrt

from hyperfake.autodiff import Var
from hyperfake.errors import ShapeError, ValidationError
from hyperfake.spectral import (
    BandMixing,
    SpectralAttentionParams,
    SpectralConfig,
    band_descriptors,
    compute_mixing,
    export_band_weights,
    mixing_scores,
    reduce_bands,
    spectral_attention,
)
from hyperfake.util import derive_rng

RNG = np.random.default_rng(41)


def _params(p=4, d=8, heads=1, dtype=np.float64, seed=5):
    cfg = SpectralConfig(pool_size=p, attn_dim=d, head_count=heads)
    return SpectralAttentionParams(cfg, derive_rng(seed, "sp"), dtype=dtype)


class TestDescriptors:
    def test_constant_bands_give_constant_rows(self):
        levels = np.linspace(0.1, 0.9, 31)
        cube = np.broadcast_to(levels[:, None, None], (31, 8, 8)).copy()
        desc = band_descriptors(cube, 4)
        assert desc.shape == (31, 16)
        assert np.allclose(desc, levels[:, None], atol=1e-12)

    def test_p1_gives_band_means(self):
        cube = RNG.random((31, 8, 8))
        desc = band_descriptors(cube, 1)
        assert desc.shape == (31, 1)
        assert np.allclose(desc[:, 0], cube.mean(axis=(1, 2)), atol=1e-12)

    def test_against_naive_block_mean_loop(self):
        cube = RNG.random((31, 8, 8))
        desc = band_descriptors(cube, 4)
        for band in range(31):
            for i in range(4):
                for j in range(4):
                    block = cube[band, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2]
                    assert abs(desc[band, i * 4 + j] - block.mean()) < 1e-9

    def test_oversized_pool_rejected(self):
        with pytest.raises(ShapeError):
            band_descriptors(np.zeros((31, 4, 4)), 5)


class TestAttention:
    def test_zero_query_uniform_rows(self):
        params = _params()
        params.wq.data[:] = 0.0
        x = RNG.random((31, 16))
        _, attn = spectral_attention(x, params)
        assert attn.shape == (1, 31, 31)
        assert np.allclose(attn, 1.0 / 31.0, atol=1e-12)

    def test_rows_sum_to_one(self):
        params = _params(heads=2)
        for _ in range(10):
            _, attn = spectral_attention(RNG.standard_normal((31, 16)), params)
            assert np.allclose(attn.sum(axis=-1), 1.0, atol=1e-6)

    def test_batched_shapes(self):
        params = _params()
        values, attn = spectral_attention(RNG.random((5, 31, 16)), params)
        assert values.shape == (5, 31, 8)
        assert attn.shape == (5, 1, 31, 31)

    def test_gradient_vs_finite_differences(self):
        params = _params()
        x = RNG.standard_normal((31, 16))

        def loss_of(arrs):
            p = _params()
            p.wq.data, p.wk.data, p.wv.data = arrs["wq"], arrs["wk"], arrs["wv"]
            values, _ = spectral_attention(np.asarray(arrs["x"]), p)
            return float(values.sum())

        vx = Var(x, requires_grad=True)
        values, _ = spectral_attention(vx, params)
        values.sum().backward()
        arrays = {
            "x": x,
            "wq": params.wq.data.copy(),
            "wk": params.wk.data.copy(),
            "wv": params.wv.data.copy(),
        }
        grads = {
            "x": vx.grad,
            "wq": params.wq.grad,
            "wk": params.wk.grad,
            "wv": params.wv.grad,
        }
        assert check_grad_wrt(loss_of, arrays, grads) < 1e-4


class TestMixing:
    def test_zero_head_uniform_alpha(self):
        params = _params()
        params.mixing_head.data[:] = 0.0
        mixing = compute_mixing(RNG.random((31, 8)), params)
        assert np.allclose(mixing.alpha, 1.0 / 31.0, atol=1e-12)

    def test_saturated_score_picks_band(self):
        params = _params()
        params.mixing_head.data[:] = 0.0
        params.mixing_head.data[0, :] = 1.0
        values = np.zeros((31, 8))
        values[16, 0] = 1000.0
        mixing = compute_mixing(values, params)
        assert np.all(mixing.alpha[16] > 1.0 - 1e-6)

    def test_columns_sum_to_one_random(self):
        params = _params()
        for _ in range(100):
            mixing = compute_mixing(RNG.standard_normal((31, 8)), params)
            assert np.allclose(mixing.alpha.sum(axis=0), 1.0, atol=1e-6)
            assert mixing.alpha.min() >= 0.0

    def test_bandmixing_validation(self):
        bad = np.full((31, 3), 0.5)
        with pytest.raises(ValidationError):
            BandMixing(bad)
        with pytest.raises(ShapeError):
            BandMixing(np.ones((30, 3)) / 30.0)


class TestReduce:
    def _onehot(self, band, col):
        alpha = np.zeros((31, 3))
        alpha[0, :] = 1.0
        alpha[0, col] = 0.0
        alpha[band, col] = 1.0
        return BandMixing(alpha)

    def test_onehot_selects_band_exactly(self):
        cube = RNG.random((31, 8, 8))
        out = reduce_bands(cube, self._onehot(16, 1))
        assert np.allclose(out[1], cube[16], atol=1e-6)
        assert np.allclose(out[0], cube[0], atol=1e-6)

    @given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 1000))
    @settings(max_examples=40, deadline=None)
    def test_linearity(self, a, b, seed):
        rng = np.random.default_rng(seed)
        mixing = compute_mixing(rng.random((31, 8)), _params())
        h1 = rng.random((31, 8, 8))
        h2 = rng.random((31, 8, 8))
        lhs = reduce_bands(a * h1 + b * h2, mixing)
        rhs = a * reduce_bands(h1, mixing) + b * reduce_bands(h2, mixing)
        assert np.allclose(lhs, rhs, atol=1e-6)

    def test_against_triple_loop_oracle(self):
        cube = RNG.random((31, 6, 5))
        mixing = compute_mixing(RNG.random((31, 8)), _params())
        out = reduce_bands(cube, mixing)
        for c in range(3):
            for i in range(6):
                for j in range(5):
                    want = sum(mixing.alpha[b, c] * cube[b, i, j] for b in range(31))
                    assert abs(out[c, i, j] - want) < 1e-9

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            reduce_bands(RNG.random((30, 8, 8)), self._onehot(3, 0))


class TestFullModuleGradient:
    def test_cube_and_all_params(self):
        params = _params(p=4, d=8)
        cube = RNG.random((31, 8, 8))

        def pipeline(cube_v, p):
            desc = band_descriptors(cube_v, 4)
            values, _ = spectral_attention(desc, p)
            alpha = mixing_scores(values, p)
            return reduce_bands(cube_v, alpha).mean()

        def loss_of(arrs):
            p = _params(p=4, d=8)
            p.wq.data, p.wk.data = arrs["wq"], arrs["wk"]
            p.wv.data, p.mixing_head.data = arrs["wv"], arrs["mh"]
            return float(pipeline(Var(np.asarray(arrs["cube"])), p).data)

        vc = Var(cube, requires_grad=True)
        pipeline(vc, params).backward()
        arrays = {
            "cube": cube,
            "wq": params.wq.data.copy(),
            "wk": params.wk.data.copy(),
            "wv": params.wv.data.copy(),
            "mh": params.mixing_head.data.copy(),
        }
        grads = {
            "cube": vc.grad,
            "wq": params.wq.grad,
            "wk": params.wk.grad,
            "wv": params.wv.grad,
            "mh": params.mixing_head.grad,
        }
        assert check_grad_wrt(loss_of, arrays, grads) < 1e-4


class TestExport:
    def test_uniform_alpha_tie_break(self, tmp_path):
        alpha = np.full((31, 3), 1.0 / 31.0)
        attn = np.full((1, 31, 31), 1.0 / 31.0)
        out = tmp_path / "w.json"
        export_band_weights(BandMixing(alpha), attn, out)
        payload = json.loads(out.read_text())
        for ch in "012":
            assert payload["top_bands"][ch] == [0, 1, 2, 3, 4]

    def test_round_trip_and_onehot_top1(self, tmp_path):
        alpha = np.zeros((31, 3))
        alpha[16, :] = 1.0
        attn = RNG.random((2, 31, 31))
        attn /= attn.sum(axis=-1, keepdims=True)
        out = tmp_path / "w.json"
        export_band_weights(BandMixing(alpha), attn, out)
        payload = json.loads(out.read_text())
        assert np.allclose(np.array(payload["alpha"]), alpha, atol=1e-7)
        assert np.allclose(np.array(payload["attention_mean"]), attn, atol=1e-7)
        for ch in "012":
            assert payload["top_bands"][ch][0] == 16
