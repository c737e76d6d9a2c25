import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsqcodec import patch_codec as pc
from bsqcodec.errors import DomainError, InvalidCodeError, ShapeError
from bsqcodec.grid import TokenGrid, image_from_bytes
from bsqcodec.fileio import read_ppm
from bsqcodec.weights import ModelWeights, init_weights
from conftest import TINY, fixture_path
from oracles import softmax_attention_scalar

NEG = -math.inf


class TestPatchify:
    def test_counts(self):
        patches = pc.patchify(np.zeros((256, 256, 3)), 8)
        assert patches.shape == (1024, 192)

    def test_single_patch_order(self):
        img = np.arange(8 * 8 * 3, dtype=float).reshape(8, 8, 3)
        assert np.array_equal(pc.patchify(img, 8)[0], img.reshape(-1))

    def test_row_major_patches(self):
        img = np.zeros((4, 6, 3))
        img[0:2, 4:6] = 1.0
        patches = pc.patchify(img, 2)
        assert patches.shape == (6, 12)
        assert np.flatnonzero(patches.any(axis=1)).tolist() == [2]

    def test_indivisible_names_dims(self):
        with pytest.raises(ShapeError, match=r"H=256.*W=256.*p=5"):
            pc.patchify(np.zeros((256, 256, 3)), 5)

    @given(st.integers(1, 6), st.integers(1, 6), st.sampled_from([1, 2, 4, 8]), st.integers(0, 99))
    def test_inverse(self, h, w, p, seed):
        img = np.random.default_rng(seed).random((h * p, w * p, 3))
        out = pc.unpatchify(pc.patchify(img, p), h * p, w * p, p)
        assert np.array_equal(out, img)

    def test_non_square(self, rng):
        img = rng.random((64, 32, 3))
        assert np.array_equal(pc.unpatchify(pc.patchify(img, 8), 64, 32, 8), img)

    def test_unpatchify_shape_error(self):
        with pytest.raises(ShapeError):
            pc.unpatchify(np.zeros((3, 192)), 16, 16, 8)


class TestMask:
    def test_single_frame(self):
        assert np.array_equal(pc.build_block_causal_mask(1, 4), np.zeros((4, 4)))

    def test_two_frames(self):
        assert np.array_equal(pc.build_block_causal_mask(2, 1), [[0, NEG], [0, 0]])

    def test_three_by_two(self):
        m = pc.build_block_causal_mask(3, 2)
        for i in range(6):
            for j in range(6):
                assert m[i, j] == (0.0 if j // 2 <= i // 2 else NEG)

    def test_bad_counts(self):
        with pytest.raises(DomainError):
            pc.build_block_causal_mask(0, 3)


class TestAttention:
    def test_singleton(self, rng):
        v = rng.random((1, 4))
        assert np.allclose(pc.masked_attention(rng.random((1, 4)), rng.random((1, 4)), v), v)

    def test_zero_query_averages_unmasked(self, rng):
        v = rng.random((3, 2))
        mask = pc.build_block_causal_mask(3, 1)
        out = pc.masked_attention(np.zeros((3, 2)), rng.random((3, 2)), v, mask)
        expected = np.array([v[: i + 1].mean(axis=0) for i in range(3)])
        assert np.allclose(out, expected)

    def test_two_by_two_against_scalar(self):
        q = [[1.0, 0.5], [-0.3, 2.0]]
        k = [[0.2, -1.0], [1.5, 0.1]]
        v = [[1.0, 2.0], [3.0, -1.0]]
        mask = [[0.0, NEG], [0.0, 0.0]]
        out = pc.masked_attention(np.array(q), np.array(k), np.array(v), np.array(mask))
        assert np.allclose(out, softmax_attention_scalar(q, k, v, mask), atol=1e-12)
        assert np.allclose(out[0], v[0])

    def test_fully_masked_row(self):
        mask = np.array([[NEG, NEG], [0.0, 0.0]])
        with pytest.raises(DomainError):
            pc.masked_attention(np.ones((2, 2)), np.ones((2, 2)), np.ones((2, 2)), mask)

    @settings(max_examples=30)
    @given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 999))
    def test_rows_are_convex_combinations(self, frames, tpf, seed):
        rng = np.random.default_rng(seed)
        n = frames * tpf
        q, k = rng.standard_normal((2, n, 3))
        mask = pc.build_block_causal_mask(frames, tpf)
        # attending with identity values exposes the weights themselves
        weights = pc.masked_attention(q, k, np.eye(n), mask)
        assert np.allclose(weights.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(weights[np.isneginf(mask)] == 0.0)
        assert np.all(weights >= 0)


class TestPipeline:
    def test_tokenize_shape_and_determinism(self, small36_weights, image256):
        g1 = pc.tokenize(image256, small36_weights)
        g2 = pc.tokenize(image256.copy(), small36_weights)
        assert g1.shape == (32, 32)
        assert g1.bits == 36
        assert g1 == g2

    def test_detokenize_range(self, small36_weights, image256):
        out = pc.detokenize(pc.tokenize(image256, small36_weights), small36_weights)
        assert out.shape == (256, 256, 3)
        assert np.all(np.isfinite(out))
        assert out.min() >= -0.5 and out.max() <= 0.5

    def test_zero_enhancement_is_clamped_base(self, tiny_weights, rng):
        zeroed = tiny_weights.merged({
            name: np.zeros_like(tiny_weights[name]) for name in tiny_weights if name.startswith("enhance.")
        })
        grid = TokenGrid(rng.integers(0, 2**12, size=(3, 2)), 12)
        base = pc.decode_base(grid, zeroed)
        assert np.array_equal(pc.detokenize(grid, zeroed), np.clip(base, -0.5, 0.5))

    def test_skip_wiring(self, tiny_weights, rng):
        grid = TokenGrid(rng.integers(0, 2**12, size=(2, 2)), 12)
        base = pc.decode_base(grid, tiny_weights)
        expected = np.clip(base + 0.15 * pc.enhance(base, tiny_weights), -0.5, 0.5)
        assert np.array_equal(pc.detokenize(grid, tiny_weights), expected)

    def test_invalid_token(self, tiny_weights):
        with pytest.raises(InvalidCodeError):
            TokenGrid(np.array([[2**12]]), 12)
        with pytest.raises(ShapeError):
            pc.detokenize(TokenGrid(np.zeros((2, 2), dtype=int), 8), tiny_weights)

    def test_indivisible_image(self, tiny_weights):
        with pytest.raises(ShapeError):
            pc.tokenize(np.zeros((10, 8, 3)), tiny_weights)

    def test_learned_positions_used(self, rng):
        with_table = init_weights(TINY, seed=3, grid=(2, 2))
        img = rng.random((8, 8, 3)) - 0.5
        moved = with_table.merged({"pos_embed": with_table["pos_embed"] + 5.0})
        assert not np.array_equal(pc.encode_latents(img, with_table), pc.encode_latents(img, moved))
        with pytest.raises(ShapeError):
            pc.tokenize(np.zeros((12, 8, 3)), with_table)

    def test_sinusoidal_table(self):
        table = pc.sinusoidal_positions(2, 3, 8)
        assert table.shape == (6, 8)
        # column half repeats down rows, row half repeats across columns
        assert np.array_equal(table[0, 4:], table[3, 4:])
        assert np.array_equal(table[0, :4], table[2, :4])
        assert np.allclose(table[0], [0, 0, 1, 1, 0, 0, 1, 1])

    def test_golden_fixtures(self):
        weights = ModelWeights.load(fixture_path("golden_weights.ganw"))
        img = image_from_bytes(read_ppm(fixture_path("golden_image.ppm")))
        grid = pc.tokenize(img, weights)
        assert np.array_equal(grid.tokens, np.load(fixture_path("golden_tokens.npy")))
        decoded = pc.detokenize(grid, weights)
        assert np.allclose(decoded, np.load(fixture_path("golden_decoded.npy")), rtol=0, atol=1e-12)


class TestSequence:
    def frames(self, n, seed=0):
        rng = np.random.default_rng(seed)
        return [rng.random((8, 8, 3)) - 0.5 for _ in range(n)]

    def test_single_frame_matches_tokenize(self, tiny_weights):
        (f,) = self.frames(1)
        assert pc.tokenize_sequence([f], tiny_weights) == [pc.tokenize(f, tiny_weights)]

    def test_causality(self, tiny_weights):
        frames = self.frames(4)
        before = pc.tokenize_sequence(frames, tiny_weights)
        frames[3] = -frames[3]
        after = pc.tokenize_sequence(frames, tiny_weights)
        assert before[:3] == after[:3]
        assert before[3] != after[3]

    def test_later_frame_permutation(self, tiny_weights):
        frames = self.frames(4, seed=1)
        a = pc.tokenize_sequence(frames, tiny_weights)
        b = pc.tokenize_sequence([frames[0], frames[3], frames[1], frames[2]], tiny_weights)
        assert a[0] == b[0]

    def test_shape_mismatch(self, tiny_weights):
        with pytest.raises(ShapeError):
            pc.tokenize_sequence([np.zeros((8, 8, 3)), np.zeros((4, 8, 3))], tiny_weights)

    def test_empty(self, tiny_weights):
        assert pc.tokenize_sequence([], tiny_weights) == []
