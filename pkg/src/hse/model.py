"""GRU cell, flat-sequence encoder, hierarchical encoders, and layer-wise decoders.

Sequence embeddings are channel-wise maxima over the per-step GRU hidden
outputs. The hierarchical encoders embed each clip (sentence) independently
from a zero initial state, then embed the resulting sequence of low-level
embeddings with a second GRU. Decoders mirror the hierarchy: a high-level
GRU seeded with the video/paragraph embedding emits one hidden state per
clip (sentence), each projected to a generated low-level embedding that in
turn seeds the low-level decoder GRU emitting generated frame (word)
features. Decoder step inputs are zero vectors; the hidden state carries
all information.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import tensorkit as tk
from .errors import ContractError, HseError, ShapeError
from .tensorkit import Tensor

__all__ = [
    "ModelDims",
    "GruParams",
    "DecoderParams",
    "HseModelParams",
    "HierEmbedding",
    "build_params",
    "gru_step",
    "encode_sequence",
    "encode_flat",
    "encode_hierarchical",
    "decode_hierarchical",
]

# decoders are driven by a fixed zero input at every step
DECODER_INPUT_DIM = 1

_GRU_FIELDS = ("w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h")


@dataclass
class ModelDims:
    """Feature and hidden sizes shared by both modalities."""

    d_v: int
    d_t: int
    hidden_low: int = 32
    hidden_high: int = 32

    @property
    def embed_dim(self) -> int:
        # pooled hidden states are used as embeddings directly (no projection),
        # so the joint space dimension equals the high-level hidden size
        return self.hidden_high

    def validate(self) -> None:
        for name in ("d_v", "d_t", "hidden_low", "hidden_high"):
            if getattr(self, name) < 1:
                raise ContractError(f"ModelDims.{name} must be >= 1")


@dataclass
class GruParams:
    """Update/reset/candidate weights of one GRU cell."""

    input_dim: int
    hidden_dim: int
    w_z: Tensor
    u_z: Tensor
    b_z: Tensor
    w_r: Tensor
    u_r: Tensor
    b_r: Tensor
    w_h: Tensor
    u_h: Tensor
    b_h: Tensor

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "GruParams":
        def w():
            return Tensor(np.zeros((hidden_dim, input_dim)), requires_grad=True)

        def u():
            return Tensor(np.zeros((hidden_dim, hidden_dim)), requires_grad=True)

        def b():
            return Tensor(np.zeros(hidden_dim), requires_grad=True)

        return cls(input_dim, hidden_dim, w(), u(), b(), w(), u(), b(), w(), u(), b())

    def named(self, prefix: str) -> Iterable[tuple[str, Tensor]]:
        for f in _GRU_FIELDS:
            yield f"{prefix}.{f}", getattr(self, f)

    def validate(self) -> None:
        d, h = self.input_dim, self.hidden_dim
        expect = {
            "w_z": (h, d), "u_z": (h, h), "b_z": (h,),
            "w_r": (h, d), "u_r": (h, h), "b_r": (h,),
            "w_h": (h, d), "u_h": (h, h), "b_h": (h,),
        }
        for name, shape in expect.items():
            got = getattr(self, name).values.shape
            if got != shape:
                raise ShapeError(f"GruParams.{name} has shape {list(got)}, expected {list(shape)}")


@dataclass
class DecoderParams:
    """Decoder GRU plus the affine projection onto the target feature space."""

    gru: GruParams
    out_w: Tensor
    out_b: Tensor

    def named(self, prefix: str) -> Iterable[tuple[str, Tensor]]:
        yield from self.gru.named(prefix)
        yield f"{prefix}.out_w", self.out_w
        yield f"{prefix}.out_b", self.out_b


@dataclass
class HseModelParams:
    """All encoder and decoder weights for both modalities and both levels."""

    dims: ModelDims
    enc_v_low: GruParams
    enc_v_high: GruParams
    enc_p_low: GruParams
    enc_p_high: GruParams
    dec_v_high: DecoderParams
    dec_v_low: DecoderParams
    dec_p_high: DecoderParams
    dec_p_low: DecoderParams

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        """All weights in the fixed canonical order used for persistence
        and optimizer updates."""
        out: list[tuple[str, Tensor]] = []
        for prefix in ("enc_v_low", "enc_v_high", "enc_p_low", "enc_p_high"):
            out.extend(getattr(self, prefix).named(prefix))
        for prefix in ("dec_v_high", "dec_v_low", "dec_p_high", "dec_p_low"):
            out.extend(getattr(self, prefix).named(prefix))
        return out

    def encoder_parameters(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        for prefix in ("enc_v_low", "enc_v_high", "enc_p_low", "enc_p_high"):
            out.extend(getattr(self, prefix).named(prefix))
        return out

    def flat_encoder_parameters(self) -> list[tuple[str, Tensor]]:
        """Low-level encoders only: the parameter set of the flat baseline."""
        out: list[tuple[str, Tensor]] = []
        for prefix in ("enc_v_low", "enc_p_low"):
            out.extend(getattr(self, prefix).named(prefix))
        return out

    def validate(self) -> None:
        self.dims.validate()
        d = self.dims
        checks = [
            (self.enc_v_low, d.d_v, d.hidden_low),
            (self.enc_v_high, d.hidden_low, d.hidden_high),
            (self.enc_p_low, d.d_t, d.hidden_low),
            (self.enc_p_high, d.hidden_low, d.hidden_high),
            (self.dec_v_high.gru, DECODER_INPUT_DIM, d.hidden_high),
            (self.dec_v_low.gru, DECODER_INPUT_DIM, d.hidden_low),
            (self.dec_p_high.gru, DECODER_INPUT_DIM, d.hidden_high),
            (self.dec_p_low.gru, DECODER_INPUT_DIM, d.hidden_low),
        ]
        for gru, in_dim, hid in checks:
            if gru.input_dim != in_dim or gru.hidden_dim != hid:
                raise ShapeError(
                    f"GRU dims ({gru.input_dim}, {gru.hidden_dim}) do not match "
                    f"expected ({in_dim}, {hid})"
                )
            gru.validate()


def build_params(dims: ModelDims) -> HseModelParams:
    """Zero-initialized parameter structure with the right shapes."""
    dims.validate()
    return HseModelParams(
        dims=dims,
        enc_v_low=GruParams.zeros(dims.d_v, dims.hidden_low),
        enc_v_high=GruParams.zeros(dims.hidden_low, dims.hidden_high),
        enc_p_low=GruParams.zeros(dims.d_t, dims.hidden_low),
        enc_p_high=GruParams.zeros(dims.hidden_low, dims.hidden_high),
        dec_v_high=_zero_decoder(dims.hidden_high, dims.hidden_low),
        dec_v_low=_zero_decoder(dims.hidden_low, dims.d_v),
        dec_p_high=_zero_decoder(dims.hidden_high, dims.hidden_low),
        dec_p_low=_zero_decoder(dims.hidden_low, dims.d_t),
    )


def _zero_decoder(hidden_dim: int, target_dim: int) -> DecoderParams:
    return DecoderParams(
        gru=GruParams.zeros(DECODER_INPUT_DIM, hidden_dim),
        out_w=Tensor(np.zeros((target_dim, hidden_dim)), requires_grad=True),
        out_b=Tensor(np.zeros(target_dim), requires_grad=True),
    )


@dataclass
class HierEmbedding:
    """Per-clip (or per-sentence) embeddings plus the whole-sample embedding."""

    low: list[Tensor]
    high: Tensor

    def __post_init__(self):
        for t in [*self.low, self.high]:
            if not np.all(np.isfinite(t.values)):
                raise HseError("non-finite embedding produced by encoder")


def _as_input(x) -> Tensor:
    return x if isinstance(x, Tensor) else tk.constant(x)


def gru_step(params: GruParams, x, h: Tensor) -> Tensor:
    """One GRU update.

    z = sigmoid(Wz x + Uz h + bz), r = sigmoid(Wr x + Ur h + br),
    cand = tanh(Wh x + Uh (r*h) + bh), h' = (1 - z)*h + z*cand.
    """
    x = _as_input(x)
    if x.values.ndim != 1 or x.values.shape[0] != params.input_dim:
        raise ShapeError(
            f"gru_step input has shape {list(x.shape)}, expected [{params.input_dim}]"
        )
    if h.values.ndim != 1 or h.values.shape[0] != params.hidden_dim:
        raise ShapeError(
            f"gru_step state has shape {list(h.shape)}, expected [{params.hidden_dim}]"
        )
    z = tk.sigmoid(tk.add(tk.add(tk.matmul(params.w_z, x), tk.matmul(params.u_z, h)), params.b_z))
    r = tk.sigmoid(tk.add(tk.add(tk.matmul(params.w_r, x), tk.matmul(params.u_r, h)), params.b_r))
    cand = tk.tanh(
        tk.add(tk.add(tk.matmul(params.w_h, x), tk.matmul(params.u_h, tk.mul(r, h))), params.b_h)
    )
    keep = tk.add_scalar(tk.mul_scalar(z, -1.0), 1.0)
    return tk.add(tk.mul(keep, h), tk.mul(z, cand))


def encode_sequence(params: GruParams, xs: Sequence, h0: Tensor | None = None) -> Tensor:
    """Run the GRU from a zero state over xs and channel-wise max-pool the
    per-step hidden outputs into a fixed-size embedding."""
    xs = list(xs)
    if not xs:
        raise ContractError("encode_sequence requires a nonempty sequence")
    h = h0 if h0 is not None else tk.constant(np.zeros(params.hidden_dim))
    outputs = []
    for x in xs:
        h = gru_step(params, x, h)
        outputs.append(h)
    return tk.reduce_max(tk.stack(outputs), axis=0)


def _units_of(sample) -> list[np.ndarray]:
    units = getattr(sample, "clips", None)
    if units is None:
        units = getattr(sample, "sentences", None)
    if units is None:
        raise ContractError(f"cannot encode object of type {type(sample).__name__}")
    return units


def encode_flat(params: GruParams, sample) -> Tensor:
    """Flat-sequence baseline: ignore clip/sentence boundaries and encode the
    concatenation of all frames (words) as one sequence."""
    units = _units_of(sample)
    flattened = [row for unit in units for row in unit]
    return encode_sequence(params, flattened)


def encode_hierarchical(
    params: HseModelParams,
    sample,
    carry_low_state: bool = False,
) -> HierEmbedding:
    """Embed each clip (sentence) independently, then embed the sequence of
    those embeddings with the high-level encoder.

    carry_low_state threads the low-level GRU state across unit boundaries
    instead of resetting it to zero per unit; embeddings are still pooled
    per unit. Off by default.
    """
    units = _units_of(sample)
    if hasattr(sample, "clips"):
        enc_low, enc_high = params.enc_v_low, params.enc_v_high
    else:
        enc_low, enc_high = params.enc_p_low, params.enc_p_high
    if not units:
        raise ContractError("encode_hierarchical requires at least one clip/sentence")
    low: list[Tensor] = []
    h = tk.constant(np.zeros(enc_low.hidden_dim))
    for unit in units:
        if carry_low_state:
            outputs = []
            for x in unit:
                h = gru_step(enc_low, x, h)
                outputs.append(h)
            low.append(tk.reduce_max(tk.stack(outputs), axis=0))
        else:
            low.append(encode_sequence(enc_low, unit))
    high = encode_sequence(enc_high, low)
    return HierEmbedding(low=low, high=high)


def decode_hierarchical(
    params: HseModelParams,
    high: Tensor,
    n: int,
    n_i: Sequence[int],
    modality: str,
) -> tuple[list[Tensor], list[list[Tensor]]]:
    """Generate n low-level embeddings from a whole-sample embedding, then
    n_i[i] feature vectors from each of them.

    The high-level decoder GRU starts from the sample embedding and runs n
    steps on zero inputs; every hidden state is projected to a generated
    low-level embedding. Each of those seeds the low-level decoder GRU for
    n_i[i] steps, whose hidden states are projected to generated features.
    """
    if modality == "video":
        dec_high, dec_low = params.dec_v_high, params.dec_v_low
    elif modality == "text":
        dec_high, dec_low = params.dec_p_high, params.dec_p_low
    else:
        raise ContractError(f"unknown modality {modality!r}")
    n_i = [int(c) for c in n_i]
    if n < 1 or len(n_i) != n or any(c < 1 for c in n_i):
        raise ContractError("decode_hierarchical requires n >= 1 and every n_i >= 1")
    zero_in = tk.constant(np.zeros(DECODER_INPUT_DIM))
    low_hat: list[Tensor] = []
    h = high
    for _ in range(n):
        h = gru_step(dec_high.gru, zero_in, h)
        low_hat.append(tk.add(tk.matmul(dec_high.out_w, h), dec_high.out_b))
    units_hat: list[list[Tensor]] = []
    for i in range(n):
        hl = low_hat[i]
        rows: list[Tensor] = []
        for _ in range(n_i[i]):
            hl = gru_step(dec_low.gru, zero_in, hl)
            rows.append(tk.add(tk.matmul(dec_low.out_w, hl), dec_low.out_b))
        units_hat.append(rows)
    return low_hat, units_hat
