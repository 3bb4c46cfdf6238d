"""The layout-aware encoder: summed word/1D/2D-position input embeddings, a
post-layer-norm transformer stack, and the five output heads.

2D position embeddings are looked up per coordinate: one table serves x0 and
x1, another serves y0 and y1, so tokens sharing a cell (cell-level mode)
share their entire layout contribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .documents import CELL_LEVEL, normalize_layout_mode

MASK_NEG = -1e9

TAG_HEAD_SIZE = 13  # O + {B,I,E,S} x {question, answer, header}


@dataclass
class ModelConfig:
    vocab_size: int
    num_layers: int = 2
    num_heads: int = 4
    hidden_d: int = 64
    ffn_d: int = 256
    max_len: int = 128
    coord_vocab: int = 1001
    num_areas: int = 16
    num_tag_labels: int = TAG_HEAD_SIZE
    num_doc_classes: int = 3
    layout_mode: str = CELL_LEVEL
    dropout: float = 0.0
    layer_norm_eps: float = 1e-12

    def __post_init__(self):
        self.layout_mode = normalize_layout_mode(self.layout_mode)
        if self.hidden_d % self.num_heads != 0:
            raise ValueError(
                f"hidden_d {self.hidden_d} not divisible by num_heads {self.num_heads}"
            )
        grid = math.isqrt(self.num_areas)
        if grid * grid != self.num_areas:
            raise ValueError(f"num_areas {self.num_areas} is not a perfect square")

    @classmethod
    def paper_scale(cls, vocab_size: int) -> "ModelConfig":
        """The full-scale configuration (not exercised by the test suite)."""
        return cls(
            vocab_size=vocab_size,
            num_layers=24,
            num_heads=16,
            hidden_d=1024,
            ffn_d=4096,
            max_len=512,
        )


PRETRAIN_HEADS = ("mlm", "cpc")
ALL_HEADS = ("mlm", "cpc", "tag", "span", "cls")


def _trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    # normal clipped to +-2 sigma; close enough to resampling at this scale
    return np.clip(rng.normal(0.0, std, size=shape), -2 * std, 2 * std)


def init_parameters(
    config: ModelConfig, rng: np.random.Generator, heads=PRETRAIN_HEADS
) -> dict[str, Tensor]:
    """Fresh trainable parameters for the encoder plus the requested heads.

    The MLM projection is weight-tied to `word_emb`; only its bias is a
    separate array.
    """
    d = config.hidden_d

    def param(arr) -> Tensor:
        return Tensor(arr, requires_grad=True)

    p: dict[str, Tensor] = {}
    p["word_emb"] = param(_trunc_normal(rng, (config.vocab_size, d)))
    p["pos1d_emb"] = param(_trunc_normal(rng, (config.max_len, d)))
    p["x_emb"] = param(_trunc_normal(rng, (config.coord_vocab, d)))
    p["y_emb"] = param(_trunc_normal(rng, (config.coord_vocab, d)))
    p["emb_ln_g"] = param(np.ones(d))
    p["emb_ln_b"] = param(np.zeros(d))

    for i in range(config.num_layers):
        pre = f"layer{i}."
        for name in ("q", "k", "v", "o"):
            p[pre + name + "_w"] = param(_trunc_normal(rng, (d, d)))
            p[pre + name + "_b"] = param(np.zeros(d))
        p[pre + "ln1_g"] = param(np.ones(d))
        p[pre + "ln1_b"] = param(np.zeros(d))
        p[pre + "f1_w"] = param(_trunc_normal(rng, (d, config.ffn_d)))
        p[pre + "f1_b"] = param(np.zeros(config.ffn_d))
        p[pre + "f2_w"] = param(_trunc_normal(rng, (config.ffn_d, d)))
        p[pre + "f2_b"] = param(np.zeros(d))
        p[pre + "ln2_g"] = param(np.ones(d))
        p[pre + "ln2_b"] = param(np.zeros(d))

    if "mlm" in heads:
        p["mlm_bias"] = param(np.zeros(config.vocab_size))
    if "cpc" in heads:
        p["cpc_w"] = param(_trunc_normal(rng, (d, config.num_areas)))
        p["cpc_b"] = param(np.zeros(config.num_areas))
    if "tag" in heads:
        p["tag_w"] = param(_trunc_normal(rng, (d, config.num_tag_labels)))
        p["tag_b"] = param(np.zeros(config.num_tag_labels))
    if "span" in heads:
        p["span_w"] = param(_trunc_normal(rng, (d, 2)))
        p["span_b"] = param(np.zeros(2))
    if "cls" in heads:
        p["cls_w"] = param(_trunc_normal(rng, (d, config.num_doc_classes)))
        p["cls_b"] = param(np.zeros(config.num_doc_classes))
    return p


def parameter_shapes(config: ModelConfig, heads=PRETRAIN_HEADS) -> dict[str, tuple]:
    """Expected name -> shape map for a config, without allocating."""
    d = config.hidden_d
    shapes: dict[str, tuple] = {
        "word_emb": (config.vocab_size, d),
        "pos1d_emb": (config.max_len, d),
        "x_emb": (config.coord_vocab, d),
        "y_emb": (config.coord_vocab, d),
        "emb_ln_g": (d,),
        "emb_ln_b": (d,),
    }
    for i in range(config.num_layers):
        pre = f"layer{i}."
        for name in ("q", "k", "v", "o"):
            shapes[pre + name + "_w"] = (d, d)
            shapes[pre + name + "_b"] = (d,)
        shapes[pre + "ln1_g"] = (d,)
        shapes[pre + "ln1_b"] = (d,)
        shapes[pre + "f1_w"] = (d, config.ffn_d)
        shapes[pre + "f1_b"] = (config.ffn_d,)
        shapes[pre + "f2_w"] = (config.ffn_d, d)
        shapes[pre + "f2_b"] = (d,)
        shapes[pre + "ln2_g"] = (d,)
        shapes[pre + "ln2_b"] = (d,)
    if "mlm" in heads:
        shapes["mlm_bias"] = (config.vocab_size,)
    if "cpc" in heads:
        shapes["cpc_w"] = (d, config.num_areas)
        shapes["cpc_b"] = (config.num_areas,)
    if "tag" in heads:
        shapes["tag_w"] = (d, config.num_tag_labels)
        shapes["tag_b"] = (config.num_tag_labels,)
    if "span" in heads:
        shapes["span_w"] = (d, 2)
        shapes["span_b"] = (2,)
    if "cls" in heads:
        shapes["cls_w"] = (d, config.num_doc_classes)
        shapes["cls_b"] = (config.num_doc_classes,)
    return shapes


def heads_present(params: dict[str, Tensor]) -> tuple[str, ...]:
    found = []
    for h, key in (("mlm", "mlm_bias"), ("cpc", "cpc_w"), ("tag", "tag_w"),
                   ("span", "span_w"), ("cls", "cls_w")):
        if key in params:
            found.append(h)
    return tuple(found)


def count_parameters(params: dict[str, Tensor]) -> int:
    return sum(t.size for t in params.values())


def expected_parameter_count(config: ModelConfig, heads=PRETRAIN_HEADS) -> int:
    d, f = config.hidden_d, config.ffn_d
    total = (config.vocab_size + config.max_len + 2 * config.coord_vocab) * d + 2 * d
    per_layer = 4 * (d * d + d) + (d * f + f) + (f * d + d) + 4 * d
    total += config.num_layers * per_layer
    if "mlm" in heads:
        total += config.vocab_size
    if "cpc" in heads:
        total += d * config.num_areas + config.num_areas
    if "tag" in heads:
        total += d * config.num_tag_labels + config.num_tag_labels
    if "span" in heads:
        total += d * 2 + 2
    if "cls" in heads:
        total += d * config.num_doc_classes + config.num_doc_classes
    return total


def layer_matmul_parameter_count(config: ModelConfig) -> int:
    """Elements of the dense weight matrices inside the encoder layers."""
    d, f = config.hidden_d, config.ffn_d
    return config.num_layers * (4 * d * d + 2 * d * f)


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


def layout_contribution(params: dict[str, Tensor], boxes: np.ndarray) -> Tensor:
    """Summed 2D-position embedding x_emb[x0] + x_emb[x1] + y_emb[y0] +
    y_emb[y1] for boxes shaped [..., 4]."""
    boxes = np.asarray(boxes)
    x = params["x_emb"]
    y = params["y_emb"]
    return (
        ag.embedding_gather(x, boxes[..., 0])
        + ag.embedding_gather(x, boxes[..., 2])
        + ag.embedding_gather(y, boxes[..., 1])
        + ag.embedding_gather(y, boxes[..., 3])
    )


def input_embedding(
    params: dict[str, Tensor],
    config: ModelConfig,
    token_ids: np.ndarray,
    boxes: np.ndarray,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Word + 1D-position + summed 2D-position embeddings, layer-normed.

    `token_ids` is [B, L] (or [L]); `boxes` matches with a trailing axis of 4.
    """
    token_ids = np.asarray(token_ids)
    seq_len = token_ids.shape[-1]
    words = ag.embedding_gather(params["word_emb"], token_ids)
    pos = ag.embedding_gather(params["pos1d_emb"], np.arange(seq_len))
    summed = words + pos + layout_contribution(params, boxes)
    out = ag.layer_norm(
        summed, params["emb_ln_g"], params["emb_ln_b"], config.layer_norm_eps
    )
    return ag.dropout(out, config.dropout, rng)


def _attention_bias(attn_mask: np.ndarray, dtype) -> Tensor:
    """[B, 1, 1, L] additive bias: 0 at visible keys, MASK_NEG at pad."""
    mask = np.asarray(attn_mask, dtype=bool)
    bias = np.where(mask, 0.0, MASK_NEG).astype(dtype)
    return Tensor(bias[:, None, None, :])


def encode(
    params: dict[str, Tensor],
    config: ModelConfig,
    token_ids: np.ndarray,
    boxes: np.ndarray,
    attn_mask: np.ndarray,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Full encoder stack over a batch; returns hidden states [B, L, d].

    `attn_mask` is [B, L] boolean, False at [PAD] positions; pad keys are
    excluded from every attention softmax.
    """
    token_ids = np.atleast_2d(np.asarray(token_ids))
    boxes = np.asarray(boxes).reshape(token_ids.shape + (4,))
    attn_mask = np.atleast_2d(np.asarray(attn_mask, dtype=bool))

    batch, seq_len = token_ids.shape
    n_heads = config.num_heads
    head_d = config.hidden_d // n_heads
    scale = 1.0 / math.sqrt(head_d)

    h = input_embedding(params, config, token_ids, boxes, rng)
    bias = _attention_bias(attn_mask, h.data.dtype)

    def split_heads(t: Tensor) -> Tensor:
        return t.reshape(batch, seq_len, n_heads, head_d).swapaxes(1, 2)

    for i in range(config.num_layers):
        pre = f"layer{i}."
        q = split_heads(ag.matmul(h, params[pre + "q_w"]) + params[pre + "q_b"])
        k = split_heads(ag.matmul(h, params[pre + "k_w"]) + params[pre + "k_b"])
        v = split_heads(ag.matmul(h, params[pre + "v_w"]) + params[pre + "v_b"])

        scores = ag.matmul(q, k.swapaxes(2, 3)) * scale + bias
        attn = ag.dropout(ag.softmax(scores, axis=-1), config.dropout, rng)
        ctx = ag.matmul(attn, v).swapaxes(1, 2).reshape(batch, seq_len, config.hidden_d)
        attn_out = ag.dropout(
            ag.matmul(ctx, params[pre + "o_w"]) + params[pre + "o_b"],
            config.dropout,
            rng,
        )
        h = ag.layer_norm(
            h + attn_out, params[pre + "ln1_g"], params[pre + "ln1_b"],
            config.layer_norm_eps,
        )

        ffn = ag.matmul(
            ag.gelu(ag.matmul(h, params[pre + "f1_w"]) + params[pre + "f1_b"]),
            params[pre + "f2_w"],
        ) + params[pre + "f2_b"]
        h = ag.layer_norm(
            h + ag.dropout(ffn, config.dropout, rng),
            params[pre + "ln2_g"], params[pre + "ln2_b"], config.layer_norm_eps,
        )
    return h


def head_mlm(params: dict[str, Tensor], hidden: Tensor) -> Tensor:
    """Token logits over the vocabulary; projection weight-tied to word_emb."""
    return ag.matmul(hidden, params["word_emb"].swapaxes(0, 1)) + params["mlm_bias"]


def head_cpc(params: dict[str, Tensor], hidden: Tensor) -> Tensor:
    return ag.matmul(hidden, params["cpc_w"]) + params["cpc_b"]


def head_tag(params: dict[str, Tensor], hidden: Tensor) -> Tensor:
    return ag.matmul(hidden, params["tag_w"]) + params["tag_b"]


def head_span(params: dict[str, Tensor], hidden: Tensor) -> Tensor:
    """Start/end logits, last axis of size 2."""
    return ag.matmul(hidden, params["span_w"]) + params["span_b"]


def head_cls(params: dict[str, Tensor], hidden: Tensor) -> Tensor:
    """Document logits read from the [CLS] position only."""
    first = hidden[:, 0, :] if hidden.ndim == 3 else hidden[0, :]
    return ag.matmul(
        first.reshape(-1, hidden.shape[-1]), params["cls_w"]
    ) + params["cls_b"]
