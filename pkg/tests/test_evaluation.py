import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from hse.data import Corpus, ParagraphSample, SynthSpec, VideoSample, synth_generate
from hse.errors import ContractError, DegenerateInputError
from hse.evaluation import (
    cosine_matrix,
    encode_corpus,
    evaluate_partial,
    evaluate_retrieval,
    median_rank,
    rank_matrix,
    recall_at_k,
    zeroshot_classify,
)
from hse.model import ModelDims
from hse.training import init_params


def on_circle(*angles):
    return np.stack([[math.cos(a), math.sin(a)] for a in angles])


class TestRankMatrix:
    def test_identity_structure_all_rank_one(self):
        rng = np.random.default_rng(0)
        emb = rng.normal(size=(5, 4))
        assert rank_matrix(emb, emb).tolist() == [1, 1, 1, 1, 1]

    def test_one_stronger_distractor(self):
        # query 0 has cosine 0.5 with its own item, 0.9 and 0.2 with others
        queries = on_circle(0.0, 2.0, 2.5)
        gallery = on_circle(math.acos(0.5), math.acos(0.9), math.acos(0.2))
        ranks = rank_matrix(queries, gallery)
        assert ranks[0] == 2

    def test_all_ties_rank_one(self):
        queries = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        gallery = np.array([[2.0, 0.0], [4.0, 0.0], [1.0, 0.0]])  # same direction
        assert rank_matrix(queries, gallery).tolist() == [1, 1, 1]

    def test_rescaling_leaves_ranks_identical(self):
        rng = np.random.default_rng(1)
        q = rng.normal(size=(20, 6))
        g = rng.normal(size=(20, 6))
        base = rank_matrix(q, g)
        scales_q = rng.uniform(0.01, 100.0, size=(20, 1))
        scales_g = rng.uniform(0.01, 100.0, size=(20, 1))
        rescaled = rank_matrix(q * scales_q, g * scales_g)
        assert np.array_equal(base, rescaled)

    def test_zero_norm_rejected(self):
        with pytest.raises(DegenerateInputError):
            rank_matrix(np.zeros((2, 3)), np.ones((2, 3)))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ContractError):
            rank_matrix(np.ones((2, 3)), np.ones((3, 3)))


class TestMetrics:
    def test_recall_and_median_example(self):
        ranks = [1, 3, 10]
        assert recall_at_k(ranks, 1) == pytest.approx(1 / 3)
        assert recall_at_k(ranks, 5) == pytest.approx(2 / 3)
        assert median_rank(ranks) == 3

    def test_all_rank_one(self):
        assert recall_at_k([1, 1, 1], 1) == 1.0
        assert median_rank([1, 1, 1]) == 1

    def test_lower_median_for_even_counts(self):
        assert median_rank([4, 1, 3, 2]) == 2

    def test_recall_monotone_in_k(self):
        rng = np.random.default_rng(2)
        ranks = rng.integers(1, 50, size=30)
        values = [recall_at_k(ranks, k) for k in range(1, 51)]
        assert all(a <= b for a, b in zip(values, values[1:]))
        assert values[-1] == 1.0

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            recall_at_k([], 1)
        with pytest.raises(ContractError):
            median_rank([])
        with pytest.raises(ContractError):
            recall_at_k([1], 0)

    def test_matches_sort_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            n = int(rng.integers(2, 40))
            q = rng.normal(size=(n, 5))
            g = rng.normal(size=(n, 5))
            ranks = rank_matrix(q, g)
            sims = [[oracles.ref_match(qi, gj) for gj in g] for qi in q]
            assert ranks.tolist() == oracles.ref_ranks(sims)
            for k in (1, 5, n):
                assert recall_at_k(ranks, k) == oracles.ref_recall_at_k(ranks.tolist(), k)
            assert median_rank(ranks) == oracles.ref_median_rank(ranks.tolist())


def small_corpus(pairs=6, seed=0, **kw):
    spec = SynthSpec(
        num_pairs=pairs,
        num_events=3,
        clips_per_pair=kw.pop("clips_per_pair", (2, 3)),
        frames_per_clip=(1, 2),
        words_per_sentence=(1, 2),
        d_v=4,
        d_t=4,
        noise_std=0.2,
        seed=seed,
        **kw,
    )
    return synth_generate(spec)


class TestEvaluateRetrieval:
    def setup_method(self):
        self.corpus, self.labels = small_corpus()
        self.params = init_params(ModelDims(d_v=4, d_t=4, hidden_low=5, hidden_high=5), 7)

    def test_singleton_corpus_is_rank_one(self):
        corpus = Corpus(pairs=self.corpus.pairs[:1])
        p2v, v2p = evaluate_retrieval(self.params, corpus, topk=(1,))
        assert p2v.recall_at[1] == 1.0
        assert v2p.recall_at[1] == 1.0
        assert p2v.median_rank == 1

    def test_untrained_params_near_chance(self):
        corpus, _ = small_corpus(pairs=100, seed=5, clips_per_pair=(2, 2))
        params = init_params(ModelDims(d_v=4, d_t=4, hidden_low=6, hidden_high=6), 3)
        p2v, _ = evaluate_retrieval(params, corpus, topk=(1,))
        assert 0.0 <= p2v.recall_at[1] <= 0.1

    def test_report_fields(self):
        p2v, v2p = evaluate_retrieval(self.params, self.corpus, topk=(1, 5, 50))
        n = len(self.corpus)
        for report in (p2v, v2p):
            assert len(report.ranks) == n
            assert all(1 <= r <= n for r in report.ranks)
            assert report.recall_at[50] == 1.0  # k beyond corpus size saturates
        assert {p2v.direction, v2p.direction} == {
            "paragraph_to_video",
            "video_to_paragraph",
        }

    def test_flat_mode_uses_low_level_encoders(self):
        hier = evaluate_retrieval(self.params, self.corpus, topk=(1,))[0]
        flat = evaluate_retrieval(self.params, self.corpus, topk=(1,), mode="flat")[0]
        assert hier.ranks != flat.ranks or hier.recall_at != flat.recall_at


class TestEvaluatePartial:
    def setup_method(self):
        self.corpus, _ = small_corpus(pairs=5, seed=2, clips_per_pair=(3, 3))
        self.params = init_params(ModelDims(d_v=4, d_t=4, hidden_low=5, hidden_high=5), 9)

    def test_no_truncation_equals_full_eval(self):
        full = evaluate_retrieval(self.params, self.corpus, topk=(1, 5))
        partial = evaluate_partial(self.params, self.corpus, max_units=10, topk=(1, 5))
        for a, b in zip(full, partial):
            assert a.ranks == b.ranks
            assert a.recall_at == b.recall_at

    def test_truncation_encodes_first_units_only(self):
        truncated_pairs = [
            (VideoSample(v.id, v.clips[:1]), ParagraphSample(p.id, p.sentences[:1]))
            for v, p in self.corpus.pairs
        ]
        manual = Corpus(pairs=truncated_pairs, correspondence="strong")
        a = encode_corpus(self.params, self.corpus, max_units=1)
        b = encode_corpus(self.params, manual)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_max_units_must_be_positive(self):
        with pytest.raises(ContractError):
            evaluate_partial(self.params, self.corpus, max_units=0)


class TestZeroShot:
    def test_matching_encoders_predict_matching_label(self):
        dims = ModelDims(d_v=3, d_t=3, hidden_low=4, hidden_high=4)
        params = init_params(dims, 11)
        # share the low-level encoder weights across modalities so a clip
        # equal to a label phrase lands exactly on its embedding
        for field in ("w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h"):
            getattr(params.enc_p_low, field).values = getattr(
                params.enc_v_low, field
            ).values.copy()
        rng = np.random.default_rng(4)
        phrases = [rng.normal(size=(2, 3)) for _ in range(3)]
        clips = [(phrases[2].copy(), 2), (phrases[0].copy(), 0)]
        report = zeroshot_classify(params, clips, phrases)
        assert report.predicted == [2, 0]
        assert report.top1 == 1.0

    def test_top5_clamps_to_label_count(self):
        dims = ModelDims(d_v=3, d_t=3, hidden_low=4, hidden_high=4)
        params = init_params(dims, 12)
        rng = np.random.default_rng(5)
        phrases = [rng.normal(size=(1, 3)) for _ in range(3)]
        clips = [(rng.normal(size=(2, 3)), int(rng.integers(0, 3))) for _ in range(6)]
        report = zeroshot_classify(params, clips, phrases)
        assert report.top5 == 1.0  # rank within 3 labels is always <= 3
        assert report.top1 <= report.top5

    def test_empty_labels_rejected(self):
        params = init_params(ModelDims(d_v=2, d_t=2, hidden_low=2, hidden_high=2), 0)
        with pytest.raises(ContractError):
            zeroshot_classify(params, [(np.ones((1, 2)), 0)], [])

    def test_argmax_invariant_to_rescaling(self):
        rng = np.random.default_rng(6)
        clip_embs = rng.normal(size=(30, 8))
        label_embs = rng.normal(size=(7, 8))
        base = np.argmax(cosine_matrix(clip_embs, label_embs), axis=1)
        scaled = np.argmax(
            cosine_matrix(
                clip_embs * rng.uniform(0.01, 100.0, size=(30, 1)),
                label_embs * rng.uniform(0.01, 100.0, size=(7, 1)),
            ),
            axis=1,
        )
        assert np.array_equal(base, scaled)


@settings(max_examples=30, deadline=None)
@given(
    n=st.integers(min_value=1, max_value=12),
    k=st.integers(min_value=1, max_value=15),
    seed=st.integers(min_value=0, max_value=2**16),
)
def test_recall_bounds_property(n, k, seed):
    rng = np.random.default_rng(seed)
    ranks = rng.integers(1, n + 1, size=n)
    value = recall_at_k(ranks, k)
    assert 0.0 <= value <= 1.0
    assert recall_at_k(ranks, n) == 1.0
