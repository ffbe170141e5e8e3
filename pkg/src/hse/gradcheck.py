"""Finite-difference verification suites for losses, encoders, and decoders.

Each trial draws a random configuration (dimensions <= 8, batches <= 4,
sequence lengths <= 5), evaluates one objective, and compares tape
gradients against central differences. Embedding-level losses are checked
over every input coordinate; the full pipeline objective samples a few
coordinates per parameter tensor to stay fast.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import losses, tensorkit as tk
from .data import ParagraphSample, VideoSample
from .errors import ContractError
from .model import ModelDims, decode_hierarchical, encode_hierarchical
from .tensorkit import FiniteDiffReport, Tensor
from .training import init_params

__all__ = ["SuiteResult", "run_gradient_suite", "GRADCHECK_COMPONENTS"]

GRADCHECK_COMPONENTS = (
    "loss_match_high",
    "loss_match_low",
    "loss_cluster_high",
    "loss_cluster_low",
    "loss_match_low_weak",
    "loss_reconstruct",
    "total_loss",
    "encoder",
    "decoder",
)


@dataclass
class SuiteResult:
    component: str
    trials: int
    max_rel_err: float
    n_checked: int
    n_skipped_nondifferentiable: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err < 1e-4


def _leaf(rng, size) -> Tensor:
    return Tensor(rng.normal(0.0, 1.0, size=size), requires_grad=True)


def _embedding_batch(rng) -> tuple[list[Tensor], list[Tensor], int]:
    k = int(rng.integers(2, 5))
    d = int(rng.integers(2, 9))
    return [_leaf(rng, d) for _ in range(k)], [_leaf(rng, d) for _ in range(k)], k


def _nested_batch(rng, aligned: bool) -> tuple[list[list[Tensor]], list[list[Tensor]]]:
    k = int(rng.integers(2, 4))
    d = int(rng.integers(2, 7))
    clips: list[list[Tensor]] = []
    sents: list[list[Tensor]] = []
    for _ in range(k):
        n = int(rng.integers(1, 4))
        m = n if aligned else int(rng.integers(1, 4))
        clips.append([_leaf(rng, d) for _ in range(n)])
        sents.append([_leaf(rng, d) for _ in range(m)])
    return clips, sents


def _flatten(nested: list[list[Tensor]]) -> list[Tensor]:
    return [t for row in nested for t in row]


def _random_pair(rng, d_v: int, d_t: int, max_units=3, max_len=4):
    n = int(rng.integers(1, max_units + 1))
    clips = [
        rng.normal(0.0, 1.0, size=(int(rng.integers(1, max_len + 1)), d_v)) for _ in range(n)
    ]
    sentences = [
        rng.normal(0.0, 1.0, size=(int(rng.integers(1, max_len + 1)), d_t)) for _ in range(n)
    ]
    return VideoSample("v", clips), ParagraphSample("p", sentences)


def _trial(component: str, rng: np.random.Generator, sign_mode: str) -> FiniteDiffReport:
    margin = 0.2
    if component == "loss_match_high":
        videos, paragraphs, k = _embedding_batch(rng)
        params = videos + paragraphs

        def f(ps):
            return losses.loss_match_high(ps[:k], ps[k:], margin, sign_mode)

        return tk.finite_diff_check(f, params)

    if component == "loss_cluster_high":
        videos, paragraphs, k = _embedding_batch(rng)
        params = videos + paragraphs

        def f(ps):
            return losses.loss_cluster_high(ps[:k], ps[k:], margin, sign_mode)

        return tk.finite_diff_check(f, params)

    if component in ("loss_match_low", "loss_cluster_low", "loss_match_low_weak"):
        aligned = component != "loss_match_low_weak"
        clips, sents = _nested_batch(rng, aligned)
        shapes = ([len(r) for r in clips], [len(r) for r in sents])
        params = _flatten(clips) + _flatten(sents)

        def f(ps):
            cs, ss = [], []
            i = 0
            for count in shapes[0]:
                cs.append(list(ps[i : i + count]))
                i += count
            for count in shapes[1]:
                ss.append(list(ps[i : i + count]))
                i += count
            if component == "loss_match_low":
                return losses.loss_match_low(cs, ss, margin, sign_mode)
            if component == "loss_cluster_low":
                return losses.loss_cluster_low(cs, ss, margin, sign_mode)
            return losses.loss_match_low_weak(cs, ss, margin, sign_mode)

        return tk.finite_diff_check(f, params)

    if component == "loss_reconstruct":
        d_v = int(rng.integers(2, 6))
        hid = int(rng.integers(2, 6))
        dims = ModelDims(d_v=d_v, d_t=d_v, hidden_low=hid, hidden_high=hid)
        model = init_params(dims, int(rng.integers(0, 2**31)))
        video, _ = _random_pair(rng, d_v, d_v)
        target_low = [tk.constant(rng.normal(0.0, 1.0, size=hid)) for _ in range(video.n)]
        high = tk.constant(rng.normal(0.0, 1.0, size=hid))
        dec_params = [t for _, t in model.dec_v_high.named("h")] + [
            t for _, t in model.dec_v_low.named("l")
        ]

        def f(ps):
            low_hat, units_hat = decode_hierarchical(model, high, video.n, video.n_i, "video")
            return losses.loss_reconstruct(target_low, low_hat, units_hat, video.clips)

        return tk.finite_diff_check(f, dec_params)

    if component == "total_loss":
        d_v = int(rng.integers(2, 5))
        d_t = int(rng.integers(2, 5))
        hid = int(rng.integers(2, 5))
        dims = ModelDims(d_v=d_v, d_t=d_t, hidden_low=hid, hidden_high=hid)
        model = init_params(dims, int(rng.integers(0, 2**31)))
        k = int(rng.integers(2, 4))
        batch = [_random_pair(rng, d_v, d_t) for _ in range(k)]
        correspondence = "strong" if rng.random() < 0.5 else "weak"
        cfg = losses.LossConfig(
            tau=0.01, correspondence=correspondence, sign_mode=sign_mode
        )
        params = [t for _, t in model.named_parameters()]
        # reconstruction targets carry no gradient, so the differenced
        # function must hold them fixed at the evaluation point
        frozen = []
        for video, paragraph in batch:
            ve = encode_hierarchical(model, video)
            pe = encode_hierarchical(model, paragraph)
            frozen.append(
                ([t.values.copy() for t in ve.low], [t.values.copy() for t in pe.low])
            )

        def f(ps):
            return losses.total_loss(batch, model, cfg, reconstruction_targets=frozen).node

        return tk.finite_diff_check(
            f, params, coords_per_param=2, rng=np.random.default_rng(rng.integers(0, 2**31))
        )

    if component == "encoder":
        d_v = int(rng.integers(2, 6))
        hid = int(rng.integers(2, 6))
        dims = ModelDims(d_v=d_v, d_t=d_v, hidden_low=hid, hidden_high=hid)
        model = init_params(dims, int(rng.integers(0, 2**31)))
        video, _ = _random_pair(rng, d_v, d_v)
        weight = tk.constant(rng.normal(0.0, 1.0, size=hid))
        enc_params = [t for _, t in model.enc_v_low.named("l")] + [
            t for _, t in model.enc_v_high.named("h")
        ]

        def f(ps):
            emb = encode_hierarchical(model, video)
            return tk.reduce_sum(tk.mul(emb.high, weight))

        return tk.finite_diff_check(f, enc_params)

    if component == "decoder":
        hid = int(rng.integers(2, 6))
        d_v = int(rng.integers(2, 6))
        dims = ModelDims(d_v=d_v, d_t=d_v, hidden_low=hid, hidden_high=hid)
        model = init_params(dims, int(rng.integers(0, 2**31)))
        n = int(rng.integers(1, 4))
        n_i = [int(rng.integers(1, 4)) for _ in range(n)]
        high = tk.constant(rng.normal(0.0, 1.0, size=hid))
        dec_params = [t for _, t in model.dec_v_high.named("h")] + [
            t for _, t in model.dec_v_low.named("l")
        ]

        def f(ps):
            low_hat, units_hat = decode_hierarchical(model, high, n, n_i, "video")
            total = tk.reduce_sum(tk.stack(low_hat))
            for rows in units_hat:
                total = tk.add(total, tk.reduce_sum(tk.stack(rows)))
            return total

        return tk.finite_diff_check(f, dec_params)

    raise ContractError(f"unknown gradcheck component {component!r}")


def run_gradient_suite(
    seed: int = 0,
    trials_per_component: int = 16,
    components=GRADCHECK_COMPONENTS,
) -> list[SuiteResult]:
    """Run every component's trials and aggregate the worst relative error."""
    results = []
    for ci, component in enumerate(components):
        worst = 0.0
        checked = 0
        skipped = 0
        for t in range(trials_per_component):
            rng = np.random.default_rng(seed * 100_003 + ci * 7919 + t)
            sign_mode = "corrected" if t % 2 == 0 else "literal"
            report = _trial(component, rng, sign_mode)
            worst = max(worst, report.max_rel_err)
            checked += report.n_checked
            skipped += report.n_skipped_nondifferentiable
        results.append(
            SuiteResult(
                component=component,
                trials=trials_per_component,
                max_rel_err=worst,
                n_checked=checked,
                n_skipped_nondifferentiable=skipped,
            )
        )
    return results
