import numpy as np
import pytest

from hse import tensorkit as tk
from hse.data import ParagraphSample, VideoSample
from hse.errors import ContractError, ShapeError
from hse.model import (
    GruParams,
    ModelDims,
    build_params,
    decode_hierarchical,
    encode_flat,
    encode_hierarchical,
    encode_sequence,
    gru_step,
)
from hse.tensorkit import Tensor, finite_diff_check
from hse.training import init_params


def random_gru(rng, input_dim, hidden_dim):
    p = GruParams.zeros(input_dim, hidden_dim)
    for _, tensor in p.named("g"):
        tensor.values = rng.normal(0.0, 0.4, size=tensor.values.shape)
    return p


def numpy_gru_step(p: GruParams, x, h):
    """Independent forward reference for the pinned cell convention."""
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))
    z = sig((p.w_z.values @ x + p.u_z.values @ h) + p.b_z.values)
    r = sig((p.w_r.values @ x + p.u_r.values @ h) + p.b_r.values)
    cand = np.tanh((p.w_h.values @ x + p.u_h.values @ (r * h)) + p.b_h.values)
    return (1.0 - z) * h + z * cand


class TestGruStep:
    def test_zero_weights_halve_the_state(self):
        p = GruParams.zeros(2, 2)
        h = Tensor([0.4, -0.2])
        out = gru_step(p, np.zeros(2), h)
        assert out.values.tolist() == [0.2, -0.1]

    def test_zero_state_is_fixed_point_of_zero_weights(self):
        p = GruParams.zeros(3, 3)
        out = gru_step(p, np.zeros(3), Tensor(np.zeros(3)))
        assert out.values.tolist() == [0.0, 0.0, 0.0]

    def test_matches_numpy_reference(self):
        rng = np.random.default_rng(3)
        p = random_gru(rng, 4, 3)
        x = rng.normal(size=4)
        h = rng.normal(size=3)
        out = gru_step(p, x, Tensor(h))
        assert np.allclose(out.values, numpy_gru_step(p, x, h), atol=1e-12)

    def test_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(9)
        p = random_gru(rng, 3, 3)
        x = rng.normal(size=3)
        h = tk.constant(rng.normal(size=3))
        weight = tk.constant(rng.normal(size=3))
        params = [t for _, t in p.named("g")]

        def f(ps):
            return tk.reduce_sum(tk.mul(gru_step(p, x, h), weight))

        assert finite_diff_check(f, params).max_rel_err < 1e-4

    def test_shape_errors(self):
        p = GruParams.zeros(2, 3)
        with pytest.raises(ShapeError):
            gru_step(p, np.zeros(5), Tensor(np.zeros(3)))
        with pytest.raises(ShapeError):
            gru_step(p, np.zeros(2), Tensor(np.zeros(2)))


class TestEncodeSequence:
    def test_single_element_equals_one_step(self):
        rng = np.random.default_rng(1)
        p = random_gru(rng, 3, 4)
        x = rng.normal(size=3)
        single = encode_sequence(p, [x])
        step = gru_step(p, x, Tensor(np.zeros(4)))
        assert np.array_equal(single.values, step.values)

    def test_pooling_is_channelwise_max_of_steps(self):
        rng = np.random.default_rng(2)
        p = random_gru(rng, 2, 3)
        xs = [rng.normal(size=2) for _ in range(5)]
        h = np.zeros(3)
        outputs = []
        for x in xs:
            h = numpy_gru_step(p, x, h)
            outputs.append(h)
        expected = np.max(np.stack(outputs), axis=0)
        assert np.allclose(encode_sequence(p, xs).values, expected, atol=1e-12)

    def test_empty_sequence_rejected(self):
        with pytest.raises(ContractError):
            encode_sequence(GruParams.zeros(2, 2), [])


class TestEncodeFlat:
    def test_single_frame_video(self):
        rng = np.random.default_rng(5)
        dims = ModelDims(d_v=3, d_t=3, hidden_low=4, hidden_high=4)
        params = init_params(dims, 0)
        frame = rng.normal(size=3)
        video = VideoSample("v", [frame.reshape(1, 3)])
        flat = encode_flat(params.enc_v_low, video)
        direct = encode_sequence(params.enc_v_low, [frame])
        assert np.array_equal(flat.values, direct.values)

    def test_equals_manual_flattening(self):
        rng = np.random.default_rng(6)
        dims = ModelDims(d_v=3, d_t=3, hidden_low=4, hidden_high=4)
        params = init_params(dims, 1)
        clips = [rng.normal(size=(2, 3)), rng.normal(size=(2, 3))]
        video = VideoSample("v", clips)
        flat = encode_flat(params.enc_v_low, video)
        manual = encode_sequence(params.enc_v_low, [r for c in clips for r in c])
        assert np.array_equal(flat.values, manual.values)

    def test_sensitive_to_clip_order(self):
        rng = np.random.default_rng(7)
        dims = ModelDims(d_v=3, d_t=3, hidden_low=4, hidden_high=4)
        params = init_params(dims, 2)
        clips = [rng.normal(size=(2, 3)), rng.normal(size=(2, 3))]
        a = encode_flat(params.enc_v_low, VideoSample("v", clips))
        b = encode_flat(params.enc_v_low, VideoSample("v", clips[::-1]))
        assert not np.array_equal(a.values, b.values)


class TestEncodeHierarchical:
    def setup_method(self):
        self.rng = np.random.default_rng(8)
        self.dims = ModelDims(d_v=4, d_t=3, hidden_low=5, hidden_high=6)
        self.params = init_params(self.dims, 3)

    def _video(self, n=3):
        return VideoSample(
            "v", [self.rng.normal(size=(int(self.rng.integers(1, 4)), 4)) for _ in range(n)]
        )

    def test_single_clip_high_embedding(self):
        video = self._video(n=1)
        emb = encode_hierarchical(self.params, video)
        direct = encode_sequence(self.params.enc_v_high, [emb.low[0]])
        assert np.array_equal(emb.high.values, direct.values)

    def test_low_embeddings_are_local(self):
        video = self._video(n=3)
        before = encode_hierarchical(self.params, video)
        perturbed = VideoSample(
            "v", [video.clips[0], video.clips[1] + 1.0, video.clips[2]]
        )
        after = encode_hierarchical(self.params, perturbed)
        assert np.array_equal(before.low[0].values, after.low[0].values)
        assert np.array_equal(before.low[2].values, after.low[2].values)
        assert not np.array_equal(before.low[1].values, after.low[1].values)

    def test_permuting_clips_permutes_low_and_changes_high(self):
        video = self._video(n=3)
        base = encode_hierarchical(self.params, video)
        perm = [2, 0, 1]
        permuted = encode_hierarchical(
            self.params, VideoSample("v", [video.clips[i] for i in perm])
        )
        for out_idx, src_idx in enumerate(perm):
            assert np.array_equal(permuted.low[out_idx].values, base.low[src_idx].values)
        assert not np.array_equal(permuted.high.values, base.high.values)

    def test_paragraph_side_uses_text_encoders(self):
        paragraph = ParagraphSample("p", [self.rng.normal(size=(2, 3)) for _ in range(2)])
        emb = encode_hierarchical(self.params, paragraph)
        assert emb.high.values.shape == (6,)
        assert all(low.values.shape == (5,) for low in emb.low)

    def test_carry_low_state_changes_embeddings(self):
        video = self._video(n=3)
        reset = encode_hierarchical(self.params, video, carry_low_state=False)
        carried = encode_hierarchical(self.params, video, carry_low_state=True)
        assert np.array_equal(reset.low[0].values, carried.low[0].values)
        assert not np.array_equal(reset.low[1].values, carried.low[1].values)

    def test_encoder_gradients_vs_finite_differences(self):
        video = self._video(n=2)
        weight = tk.constant(self.rng.normal(size=6))
        enc_params = [t for _, t in self.params.enc_v_low.named("a")] + [
            t for _, t in self.params.enc_v_high.named("b")
        ]

        def f(ps):
            return tk.reduce_sum(tk.mul(encode_hierarchical(self.params, video).high, weight))

        assert finite_diff_check(f, enc_params).max_rel_err < 1e-4


class TestDecodeHierarchical:
    def setup_method(self):
        self.dims = ModelDims(d_v=3, d_t=4, hidden_low=4, hidden_high=5)
        self.params = init_params(self.dims, 5)
        self.rng = np.random.default_rng(11)

    def test_single_unit_counts(self):
        high = tk.constant(self.rng.normal(size=5))
        low_hat, units_hat = decode_hierarchical(self.params, high, 1, [1], "video")
        assert len(low_hat) == 1
        assert len(units_hat) == 1 and len(units_hat[0]) == 1
        assert units_hat[0][0].values.shape == (3,)

    def test_counts_match_requested_lengths(self):
        high = tk.constant(self.rng.normal(size=5))
        n_i = [2, 1, 3]
        low_hat, units_hat = decode_hierarchical(self.params, high, 3, n_i, "text")
        assert len(low_hat) == 3
        assert [len(u) for u in units_hat] == n_i
        assert all(r.values.shape == (4,) for u in units_hat for r in u)

    def test_zero_counts_rejected(self):
        high = tk.constant(np.zeros(5))
        with pytest.raises(ContractError):
            decode_hierarchical(self.params, high, 0, [], "video")
        with pytest.raises(ContractError):
            decode_hierarchical(self.params, high, 2, [1, 0], "video")

    def test_unknown_modality(self):
        with pytest.raises(ContractError):
            decode_hierarchical(self.params, tk.constant(np.zeros(5)), 1, [1], "audio")

    def test_decoder_gradients_vs_finite_differences(self):
        high = tk.constant(self.rng.normal(size=5))
        dec_params = [t for _, t in self.params.dec_v_high.named("h")] + [
            t for _, t in self.params.dec_v_low.named("l")
        ]

        def f(ps):
            low_hat, units_hat = decode_hierarchical(self.params, high, 2, [2, 1], "video")
            total = tk.reduce_sum(tk.stack(low_hat))
            for rows in units_hat:
                total = tk.add(total, tk.reduce_sum(tk.stack(rows)))
            return total

        assert finite_diff_check(f, dec_params).max_rel_err < 1e-4


class TestParamStructure:
    def test_named_parameter_order_is_stable(self):
        dims = ModelDims(d_v=2, d_t=3, hidden_low=4, hidden_high=5)
        names = [n for n, _ in build_params(dims).named_parameters()]
        assert names[:3] == ["enc_v_low.w_z", "enc_v_low.u_z", "enc_v_low.b_z"]
        assert names[-2:] == ["dec_p_low.out_w", "dec_p_low.out_b"]
        assert len(names) == 4 * 9 + 4 * 11

    def test_validate_catches_dim_mismatch(self):
        dims = ModelDims(d_v=2, d_t=3, hidden_low=4, hidden_high=5)
        params = build_params(dims)
        params.enc_v_low.w_z.values = np.zeros((4, 3))
        with pytest.raises(ShapeError):
            params.validate()

    def test_embeddings_are_finite_checked(self):
        dims = ModelDims(d_v=2, d_t=2, hidden_low=2, hidden_high=2)
        params = init_params(dims, 0)
        video = VideoSample("v", [np.full((1, 2), np.nan)])
        with pytest.raises(Exception, match="non-finite"):
            encode_hierarchical(params, video)
