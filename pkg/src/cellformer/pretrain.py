"""The two self-supervised objectives: masked-token prediction with layout
kept intact, and cell position classification over an NxN page grid.

Sampling order matters: token masking runs first, then cell selection is
restricted to cells containing no masked token, so the position task can
never leak through a mask.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, softmax_cross_entropy
from .documents import COORD_MAX, TokenizedSequence
from .vocab import RESERVED, MASK_ID

IGNORE_LABEL = -100


def derive_rng(*parts) -> np.random.Generator:
    """Independent random stream keyed by a tuple of ints/strings.

    Stable across runs and platforms (unlike Python's salted hash).
    """
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    words = np.frombuffer(h[:16], dtype=np.uint32)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words.tolist())))


@dataclass
class PretrainConfig:
    mask_rate: float = 0.15
    mask_token_frac: float = 0.8
    random_frac: float = 0.1
    keep_frac: float = 0.1
    cell_select_rate: float = 0.15
    zero_box_frac: float = 0.9
    keep_box_frac: float = 0.1
    num_areas: int = 16
    ignore_label: int = IGNORE_LABEL
    mvlm_weight: float = 1.0
    cpc_weight: float = 1.0
    exact_count: bool = False  # fixed-count sampling instead of Bernoulli

    def __post_init__(self):
        if abs(self.mask_token_frac + self.random_frac + self.keep_frac - 1.0) > 1e-9:
            raise ValueError("mask/random/keep fractions must sum to 1")
        if abs(self.zero_box_frac + self.keep_box_frac - 1.0) > 1e-9:
            raise ValueError("zero/keep box fractions must sum to 1")
        grid = math.isqrt(self.num_areas)
        if grid * grid != self.num_areas:
            raise ValueError(f"num_areas {self.num_areas} is not a perfect square")


def area_of(box, n_areas: int) -> int:
    """Grid area index of a box's center on the sqrt(N) x sqrt(N) partition
    of the 0..1000 page, row-major from the top-left."""
    grid = math.isqrt(n_areas)
    if grid * grid != n_areas:
        raise ValueError(f"n_areas {n_areas} is not a perfect square")
    x0, y0, x1, y1 = box
    if not (0 <= x0 <= x1 <= COORD_MAX and 0 <= y0 <= y1 <= COORD_MAX):
        raise ValueError(f"invalid box {tuple(box)}")
    cx = (x0 + x1) / 2.0
    cy = (y0 + y1) / 2.0
    col = min(int(cx * grid / COORD_MAX), grid - 1)
    row = min(int(cy * grid / COORD_MAX), grid - 1)
    return row * grid + col


@dataclass
class PretrainExample:
    """One corrupted training example with both label sets applied."""

    doc_id: str
    input_ids: np.ndarray
    boxes: np.ndarray
    mvlm_labels: np.ndarray
    cpc_labels: np.ndarray
    masked_token_positions: np.ndarray
    selected_cell_indices: np.ndarray
    length: int


def sample_mvlm(
    seq: TokenizedSequence,
    cfg: PretrainConfig,
    vocab_size: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Select ~mask_rate of real tokens and rewrite them 80/10/10 as
    [MASK] / random non-reserved token / unchanged. Boxes stay untouched.

    Returns (corrupted input_ids, labels with the original id at selected
    positions and the ignore sentinel elsewhere, selected positions). At
    least one token is always selected.
    """
    n = len(seq.token_ids)
    eligible = seq.content_mask()
    if not eligible.any():
        raise ValueError(f"document {seq.doc_id} has no maskable tokens")

    if cfg.exact_count:
        idx = np.nonzero(eligible)[0]
        count = min(max(1, int(round(cfg.mask_rate * len(idx)))), len(idx))
        chosen = rng.choice(idx, size=count, replace=False)
        selected = np.zeros(n, dtype=bool)
        selected[chosen] = True
    else:
        selected = eligible & (rng.random(n) < cfg.mask_rate)

    # fixed draw counts keep the stream layout independent of the selection
    action = rng.random(n)
    random_ids = rng.integers(len(RESERVED), vocab_size, size=n)

    if not selected.any():
        idx = np.nonzero(eligible)[0]
        selected[idx[rng.integers(len(idx))]] = True

    input_ids = seq.token_ids.copy()
    to_mask = selected & (action < cfg.mask_token_frac)
    to_random = selected & (action >= cfg.mask_token_frac) & (
        action < cfg.mask_token_frac + cfg.random_frac
    )
    input_ids[to_mask] = MASK_ID
    input_ids[to_random] = random_ids[to_random]

    labels = np.full(n, cfg.ignore_label, dtype=np.int64)
    positions = np.nonzero(selected)[0]
    labels[positions] = seq.token_ids[positions]
    return input_ids, labels, positions


def sample_cpc(
    seq: TokenizedSequence,
    masked_token_positions: np.ndarray,
    cfg: PretrainConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Select ~cell_select_rate of the cells that contain no masked token;
    zero the selected cells' token boxes zero_box_frac of the time.

    Labels derive from the ORIGINAL cell box, at every token of a selected
    cell. Returns (boxes after zeroing, labels, selected cell indices).
    """
    masked_cells = set(seq.cell_index[masked_token_positions].tolist())
    masked_cells.discard(-1)
    present = np.unique(seq.cell_index[seq.cell_index >= 0])
    eligible = np.array([c for c in present.tolist() if c not in masked_cells],
                        dtype=np.int64)

    boxes = seq.boxes.copy()
    labels = np.full(len(seq.token_ids), cfg.ignore_label, dtype=np.int64)
    if len(eligible) == 0:
        return boxes, labels, np.empty(0, dtype=np.int64)

    pick = rng.random(len(eligible)) < cfg.cell_select_rate
    zero_draw = rng.random(len(eligible))
    selected = eligible[pick]
    for cell, zero_u in zip(selected, zero_draw[pick]):
        positions = seq.cell_index == cell
        labels[positions] = area_of(seq.cell_boxes[cell], cfg.num_areas)
        if zero_u < cfg.zero_box_frac:
            boxes[positions] = 0
    return boxes, labels, selected


def make_pretrain_example(
    seq: TokenizedSequence,
    cfg: PretrainConfig,
    vocab_size: int,
    rng: np.random.Generator,
) -> PretrainExample:
    """Apply both corruptions to one encoded document."""
    input_ids, mvlm_labels, positions = sample_mvlm(seq, cfg, vocab_size, rng)
    boxes, cpc_labels, cells = sample_cpc(seq, positions, cfg, rng)
    return PretrainExample(
        doc_id=seq.doc_id,
        input_ids=input_ids,
        boxes=boxes,
        mvlm_labels=mvlm_labels,
        cpc_labels=cpc_labels,
        masked_token_positions=positions,
        selected_cell_indices=cells,
        length=seq.length,
    )


def pretrain_loss(
    mlm_logits: Tensor,
    cpc_logits: Tensor | None,
    mvlm_labels: np.ndarray,
    cpc_labels: np.ndarray | None,
    cfg: PretrainConfig,
) -> tuple[Tensor, dict]:
    """Weighted sum of the two cross-entropies plus per-component metrics.

    Either component with no labeled positions contributes exactly zero.
    """
    loss = softmax_cross_entropy(mlm_logits, mvlm_labels, cfg.ignore_label)
    metrics = {"mvlm_loss": loss.item()}
    total = loss * cfg.mvlm_weight
    if cpc_logits is not None and cpc_labels is not None:
        cpc = softmax_cross_entropy(cpc_logits, cpc_labels, cfg.ignore_label)
        total = total + cpc * cfg.cpc_weight
        labeled = cpc_labels != cfg.ignore_label
        n_labeled = int(labeled.sum())
        if n_labeled:
            pred = np.argmax(cpc_logits.data, axis=-1)
            n_correct = int((pred[labeled] == cpc_labels[labeled]).sum())
        else:
            n_correct = 0
        metrics["cpc_loss"] = cpc.item()
        metrics["cpc_acc"] = n_correct / n_labeled if n_labeled else 0.0
        metrics["cpc_correct"] = n_correct
        metrics["cpc_labeled"] = n_labeled
    return total, metrics
