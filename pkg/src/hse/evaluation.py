"""Bidirectional retrieval metrics and zero-shot label transfer.

Ranks are 1-based: the rank of query i is one plus the number of gallery
items whose similarity to the query strictly exceeds that of the true
match (ties resolve in the query's favor). Median rank is the lower median
for even counts. Everything here is read-only over parameters and corpus.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import Corpus, ParagraphSample, VideoSample
from .errors import ContractError, DegenerateInputError
from .model import HseModelParams, encode_flat, encode_hierarchical

__all__ = [
    "RetrievalReport",
    "ZeroShotReport",
    "cosine_matrix",
    "rank_matrix",
    "recall_at_k",
    "median_rank",
    "encode_corpus",
    "evaluate_retrieval",
    "evaluate_partial",
    "zeroshot_classify",
]

DEFAULT_TOPK = (1, 5, 50)


def cosine_matrix(queries: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    """Cosine similarity of every query row against every gallery row."""
    queries = np.asarray(queries, dtype=np.float64)
    gallery = np.asarray(gallery, dtype=np.float64)
    qn = np.linalg.norm(queries, axis=1)
    gn = np.linalg.norm(gallery, axis=1)
    if np.any(qn == 0.0) or np.any(gn == 0.0):
        raise DegenerateInputError("zero-norm embedding in similarity computation")
    return (queries @ gallery.T) / np.outer(qn, gn)


def rank_matrix(queries: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    """1-based rank of each query's true match (gallery row of the same index)."""
    queries = np.asarray(queries, dtype=np.float64)
    gallery = np.asarray(gallery, dtype=np.float64)
    if queries.shape != gallery.shape:
        raise ContractError(
            f"queries and gallery must pair up row for row, got "
            f"{list(queries.shape)} vs {list(gallery.shape)}"
        )
    sims = cosine_matrix(queries, gallery)
    true_sim = np.diag(sims)
    return 1 + np.sum(sims > true_sim[:, None], axis=1)


def recall_at_k(ranks: Sequence[int], k: int) -> float:
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise ContractError("recall_at_k requires a nonempty rank list")
    if k < 1:
        raise ContractError("recall_at_k requires k >= 1")
    return float(np.mean(ranks <= k))


def median_rank(ranks: Sequence[int]) -> int:
    ranks = sorted(int(r) for r in ranks)
    if not ranks:
        raise ContractError("median_rank requires a nonempty rank list")
    return ranks[(len(ranks) - 1) // 2]  # lower median for even counts


@dataclass
class RetrievalReport:
    """Per-query ranks plus derived metrics for one retrieval direction."""

    direction: str
    ranks: list[int]
    recall_at: dict[int, float]
    median_rank: int

    @classmethod
    def from_ranks(cls, direction: str, ranks, topk: Sequence[int]) -> "RetrievalReport":
        ranks = [int(r) for r in ranks]
        return cls(
            direction=direction,
            ranks=ranks,
            recall_at={int(k): recall_at_k(ranks, int(k)) for k in topk},
            median_rank=median_rank(ranks),
        )

    def lines(self) -> list[str]:
        out = [f"{self.direction} recall@{k} {v!r}" for k, v in sorted(self.recall_at.items())]
        out.append(f"{self.direction} median_rank {self.median_rank}")
        return out

    def summary(self) -> dict:
        return {
            "direction": self.direction,
            "recall_at": {str(k): v for k, v in sorted(self.recall_at.items())},
            "median_rank": self.median_rank,
            "ranks": self.ranks,
        }


@dataclass
class ZeroShotReport:
    """Nearest-label classification of clip embeddings."""

    num_labels: int
    true_labels: list[int]
    predicted: list[int]
    top1: float
    top5: float

    def lines(self) -> list[str]:
        return [
            f"zeroshot labels {self.num_labels}",
            f"zeroshot top1 {self.top1!r}",
            f"zeroshot top5 {self.top5!r}",
        ]

    def summary(self) -> dict:
        return {
            "num_labels": self.num_labels,
            "top1": self.top1,
            "top5": self.top5,
            "predicted": self.predicted,
            "true_labels": self.true_labels,
        }


def _truncated(sample, max_units: int | None):
    if max_units is None:
        return sample
    if isinstance(sample, VideoSample):
        return VideoSample(sample.id, sample.clips[:max_units])
    return ParagraphSample(sample.id, sample.sentences[:max_units])


def encode_corpus(
    params: HseModelParams,
    corpus: Corpus,
    mode: str = "hierarchical",
    max_units: int | None = None,
    carry_low_state: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Whole-sample embeddings of every pair, as (videos, paragraphs) arrays."""
    if mode not in ("hierarchical", "flat"):
        raise ContractError(f"unknown encoding mode {mode!r}")
    videos = []
    paragraphs = []
    for video, paragraph in corpus.pairs:
        video = _truncated(video, max_units)
        paragraph = _truncated(paragraph, max_units)
        if mode == "flat":
            videos.append(encode_flat(params.enc_v_low, video).values)
            paragraphs.append(encode_flat(params.enc_p_low, paragraph).values)
        else:
            videos.append(encode_hierarchical(params, video, carry_low_state).high.values)
            paragraphs.append(encode_hierarchical(params, paragraph, carry_low_state).high.values)
    return np.stack(videos), np.stack(paragraphs)


def evaluate_retrieval(
    params: HseModelParams,
    corpus: Corpus,
    topk: Sequence[int] = DEFAULT_TOPK,
    mode: str = "hierarchical",
    carry_low_state: bool = False,
) -> tuple[RetrievalReport, RetrievalReport]:
    """Both retrieval directions over whole-sample embeddings: returns
    (paragraph->video, video->paragraph) reports."""
    videos, paragraphs = encode_corpus(params, corpus, mode, None, carry_low_state)
    p2v = RetrievalReport.from_ranks(
        "paragraph_to_video", rank_matrix(paragraphs, videos), topk
    )
    v2p = RetrievalReport.from_ranks(
        "video_to_paragraph", rank_matrix(videos, paragraphs), topk
    )
    return p2v, v2p


def evaluate_partial(
    params: HseModelParams,
    corpus: Corpus,
    max_units: int,
    topk: Sequence[int] = DEFAULT_TOPK,
    mode: str = "hierarchical",
    carry_low_state: bool = False,
) -> tuple[RetrievalReport, RetrievalReport]:
    """Retrieval after truncating every sample to its first max_units
    clips/sentences."""
    if max_units < 1:
        raise ContractError("evaluate_partial requires max_units >= 1")
    videos, paragraphs = encode_corpus(params, corpus, mode, max_units, carry_low_state)
    p2v = RetrievalReport.from_ranks(
        "paragraph_to_video", rank_matrix(paragraphs, videos), topk
    )
    v2p = RetrievalReport.from_ranks(
        "video_to_paragraph", rank_matrix(videos, paragraphs), topk
    )
    return p2v, v2p


def zeroshot_classify(
    params: HseModelParams,
    labeled_clips: Sequence[tuple[np.ndarray, int]],
    label_phrases: Sequence[np.ndarray],
) -> ZeroShotReport:
    """Nearest-label transfer: encode each label phrase with the low-level
    text encoder, each clip with the low-level video encoder, and predict
    the label with the highest cosine similarity. Top-5 accuracy clamps to
    the label-set size."""
    if not label_phrases:
        raise ContractError("zeroshot_classify requires at least one label phrase")
    if not labeled_clips:
        raise ContractError("zeroshot_classify requires at least one clip")
    from .model import encode_sequence  # clip/phrase level, not whole samples

    label_embs = np.stack(
        [encode_sequence(params.enc_p_low, list(phrase)).values for phrase in label_phrases]
    )
    clip_embs = np.stack(
        [encode_sequence(params.enc_v_low, list(frames)).values for frames, _ in labeled_clips]
    )
    true_labels = [int(label) for _, label in labeled_clips]
    sims = cosine_matrix(clip_embs, label_embs)
    predicted = [int(j) for j in np.argmax(sims, axis=1)]
    k5 = min(5, len(label_phrases))
    hits1 = 0
    hits5 = 0
    for row, pred, true in zip(sims, predicted, true_labels):
        hits1 += pred == true
        rank = 1 + int(np.sum(row > row[true]))  # ties favor the true label
        hits5 += rank <= k5
    n = len(true_labels)
    return ZeroShotReport(
        num_labels=len(label_phrases),
        true_labels=true_labels,
        predicted=predicted,
        top1=hits1 / n,
        top5=hits5 / n,
    )
