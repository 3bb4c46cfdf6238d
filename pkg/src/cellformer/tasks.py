"""Fine-tuning adapters for the three downstream tasks: BIES word tagging,
extractive QA over [CLS] question [SEP] document [SEP] windows, and whole-
document classification.

Each adapter trains the full encoder plus a fresh task head with plain
cross-entropy, then evaluates its own metric (word-level F1 / thresholded
normalized-Levenshtein similarity / accuracy) on a held-out split.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autograd as ag
from . import model as M
from .autograd import Tensor, backward, zero_grads
from .checkpoint import Checkpoint
from .dataio import DataError
from .documents import TokenizedSequence, encode_document, normalize_document, serialize_cells
from .metrics import TAG_LABELS, TAG_TO_ID, anls_single, extract_span, word_f1
from .model import MASK_NEG
from .optim import adam_step, init_adam
from .pretrain import IGNORE_LABEL, derive_rng
from .taskdata import QaExample
from .trainer import PRECISIONS, IndexSampler, TrainConfig, lr_at, stack_attention
from .vocab import CLS_ID, SEP_ID, PAD_ID, Vocab, detokenize, tokenize_to_ids

logger = logging.getLogger(__name__)

TASKS = ("tagging", "qa", "classification")

_TASK_HEAD = {"tagging": "tag", "qa": "span", "classification": "cls"}


def prepare_finetune_params(
    model_cfg: M.ModelConfig,
    task: str,
    init: Optional[Checkpoint],
    seed: int,
) -> dict[str, Tensor]:
    """Encoder weights from a checkpoint (or fresh), plus a fresh task head;
    pre-training heads are dropped."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
    head = _TASK_HEAD[task]
    fresh = M.init_parameters(model_cfg, derive_rng(seed, "init", task), heads=(head,))
    if init is None:
        return fresh
    encoder_names = set(M.parameter_shapes(model_cfg, heads=()))
    params: dict[str, Tensor] = {}
    for name in sorted(fresh):
        if name in encoder_names:
            params[name] = Tensor(init.arrays[name], requires_grad=True)
        else:
            params[name] = fresh[name]
    return params


# -- tagging -------------------------------------------------------------------


def tagging_token_labels(seq: TokenizedSequence, word_labels: Sequence[str]) -> np.ndarray:
    """Tag id at each word's first subword, ignore sentinel elsewhere."""
    if len(word_labels) != seq.n_words:
        raise DataError(
            f"{seq.doc_id}: {len(word_labels)} labels for {seq.n_words} words"
        )
    labels = np.full(len(seq.token_ids), IGNORE_LABEL, dtype=np.int64)
    seen: set[int] = set()
    for pos, w in enumerate(seq.word_index.tolist()):
        if w >= 0 and w not in seen:
            seen.add(w)
            labels[pos] = TAG_TO_ID[word_labels[w]]
    return labels


def predict_word_tags(
    params: dict[str, Tensor],
    model_cfg: M.ModelConfig,
    seqs: list[TokenizedSequence],
    batch_size: int,
) -> list[list[str]]:
    """Per-word predicted tags; words truncated out of the window get O."""
    out = []
    for lo in range(0, len(seqs), batch_size):
        chunk = seqs[lo:lo + batch_size]
        ids = np.stack([s.token_ids for s in chunk])
        boxes = np.stack([s.boxes for s in chunk])
        attn = stack_attention([s.length for s in chunk], model_cfg.max_len)
        hidden = M.encode(params, model_cfg, ids, boxes, attn)
        logits = M.head_tag(params, hidden).data
        pred_ids = np.argmax(logits, axis=-1)
        for s, row in zip(chunk, pred_ids):
            tags = ["O"] * s.n_words
            seen: set[int] = set()
            for pos, w in enumerate(s.word_index.tolist()):
                if w >= 0 and w not in seen:
                    seen.add(w)
                    tags[w] = TAG_LABELS[row[pos]]
            out.append(tags)
    return out


# -- extractive QA ---------------------------------------------------------------


@dataclass
class QaWindow:
    token_ids: np.ndarray
    boxes: np.ndarray
    length: int
    doc_mask: np.ndarray  # True at document-content positions
    doc_offset: int  # position of the first document token
    doc_start: int  # index into the document token stream
    window_token_ids: list[int]  # document token ids inside this window


def _document_stream(doc, vocab: Vocab, mode: str):
    """Flat (token id, word index, box) stream in serialization order."""
    cells = serialize_cells(normalize_document(doc))
    ids, word_idx, boxes = [], [], []
    w = 0
    for cell in cells:
        for wi, word in enumerate(cell.words):
            box = cell.box if mode == "cell" else cell.word_boxes[wi]
            for tid in tokenize_to_ids(word, vocab):
                ids.append(tid)
                word_idx.append(w)
                boxes.append(tuple(box))
            w += 1
    return ids, word_idx, boxes


def qa_windows(
    ex: QaExample, vocab: Vocab, model_cfg: M.ModelConfig
) -> tuple[list[QaWindow], list[int]]:
    """Stride-based windows of [CLS] question [SEP] doc-slice [SEP].

    Question tokens carry the empty box. Returns the windows and the word
    index of each document token (for span mapping)."""
    L = model_cfg.max_len
    q_ids = []
    for w in ex.question.split():
        q_ids.extend(tokenize_to_ids(w, vocab))
    doc_ids, doc_words, doc_boxes = _document_stream(
        ex.doc, vocab, model_cfg.layout_mode
    )
    room = L - 3 - len(q_ids)
    if room < 1:
        raise DataError(f"{ex.doc.doc_id}: question leaves no room for the document")
    stride = max(1, L // 4)
    starts = [0]
    while starts[-1] + room < len(doc_ids):
        starts.append(starts[-1] + stride)

    offset = 2 + len(q_ids)  # [CLS] q... [SEP] -> first doc position
    windows = []
    for start in starts:
        chunk = doc_ids[start:start + room]
        ids = np.full(L, PAD_ID, dtype=np.int64)
        boxes = np.zeros((L, 4), dtype=np.int64)
        ids[0] = CLS_ID
        ids[1:1 + len(q_ids)] = q_ids
        ids[1 + len(q_ids)] = SEP_ID
        ids[offset:offset + len(chunk)] = chunk
        for j, b in enumerate(doc_boxes[start:start + room]):
            boxes[offset + j] = b
        length = offset + len(chunk) + 1
        ids[length - 1] = SEP_ID
        doc_mask = np.zeros(L, dtype=bool)
        doc_mask[offset:offset + len(chunk)] = True
        windows.append(QaWindow(
            token_ids=ids, boxes=boxes, length=length, doc_mask=doc_mask,
            doc_offset=offset, doc_start=start, window_token_ids=chunk,
        ))
    return windows, doc_words


def qa_token_span(doc_words: list[int], span: tuple[int, int]) -> tuple[int, int]:
    """Word span -> inclusive token span in the document stream."""
    ws, we = span
    starts = [i for i, w in enumerate(doc_words) if w == ws]
    ends = [i for i, w in enumerate(doc_words) if w == we]
    if not starts or not ends:
        raise DataError(f"span {span} outside the document's {max(doc_words, default=-1) + 1} words")
    return starts[0], ends[-1]


def qa_training_window(
    ex: QaExample, vocab: Vocab, model_cfg: M.ModelConfig
) -> Optional[tuple[QaWindow, int, int]]:
    """First window containing the whole gold span, with its start/end
    positions in window coordinates; None when no window fits it."""
    if ex.span is None:
        return None
    windows, doc_words = qa_windows(ex, vocab, model_cfg)
    ts, te = qa_token_span(doc_words, ex.span)
    for win in windows:
        lo = win.doc_start
        hi = win.doc_start + len(win.window_token_ids)
        if lo <= ts and te < hi:
            return win, win.doc_offset + ts - lo, win.doc_offset + te - lo
    return None


def qa_predict_answer(
    params: dict[str, Tensor],
    model_cfg: M.ModelConfig,
    vocab: Vocab,
    windows: list[QaWindow],
    max_answer_len: int,
) -> str:
    """Best-scoring valid span across all windows, detokenized."""
    best_score = -np.inf
    best_text = ""
    for win in windows:
        attn = stack_attention([win.length], model_cfg.max_len)
        hidden = M.encode(params, model_cfg, win.token_ids[None, :],
                          win.boxes[None, :, :], attn)
        span_logits = M.head_span(params, hidden).data[0]
        start_logits, end_logits = span_logits[:, 0], span_logits[:, 1]
        try:
            s, e = extract_span(start_logits, end_logits, max_answer_len,
                                valid=win.doc_mask)
        except ValueError:
            continue
        score = float(start_logits[s] + end_logits[e])
        if score > best_score:
            best_score = score
            rel = slice(s - win.doc_offset, e - win.doc_offset + 1)
            best_text = detokenize(
                vocab.token(t) for t in win.window_token_ids[rel]
            )
    return best_text


# -- classification ---------------------------------------------------------------


def _encode_docs(docs, vocab, model_cfg) -> list[TokenizedSequence]:
    return [encode_document(d, vocab, model_cfg.max_len, model_cfg.layout_mode)
            for d in docs]


# -- the shared fine-tuning driver -------------------------------------------------


def finetune(
    task: str,
    train_examples: list,
    eval_examples: list,
    vocab: Vocab,
    model_cfg: M.ModelConfig,
    train_cfg: TrainConfig,
    init: Optional[Checkpoint] = None,
    metrics_log=None,
) -> tuple[dict[str, Tensor], dict]:
    """Train the task head + encoder on the task loss; report the task
    metric on the eval split. Deterministic given the seed."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
    if not train_examples:
        raise ValueError("empty training dataset")
    ag.set_dtype(PRECISIONS[train_cfg.precision])
    params = prepare_finetune_params(model_cfg, task, init, train_cfg.seed)
    adam = init_adam(params)

    if task == "tagging":
        seqs = _encode_docs([ex.doc for ex in train_examples], vocab, model_cfg)
        labels = [tagging_token_labels(s, ex.word_labels)
                  for s, ex in zip(seqs, train_examples)]

        def batch_loss(indices):
            ids = np.stack([seqs[i].token_ids for i in indices])
            boxes = np.stack([seqs[i].boxes for i in indices])
            attn = stack_attention([seqs[i].length for i in indices],
                                   model_cfg.max_len)
            targets = np.stack([labels[i] for i in indices])
            hidden = M.encode(params, model_cfg, ids, boxes, attn)
            logits = M.head_tag(params, hidden)
            return ag.softmax_cross_entropy(logits, targets, IGNORE_LABEL)

    elif task == "qa":
        prepared = []
        skipped = 0
        for ex in train_examples:
            built = qa_training_window(ex, vocab, model_cfg)
            if built is None:
                skipped += 1
                continue
            prepared.append(built)
        if skipped:
            logger.warning("qa: %d training examples have no window covering "
                           "their span", skipped)
        if not prepared:
            raise ValueError("no trainable QA examples")

        def batch_loss(indices):
            wins = [prepared[i][0] for i in indices]
            ids = np.stack([w.token_ids for w in wins])
            boxes = np.stack([w.boxes for w in wins])
            attn = stack_attention([w.length for w in wins], model_cfg.max_len)
            starts = np.array([prepared[i][1] for i in indices])
            ends = np.array([prepared[i][2] for i in indices])
            doc_bias = np.where(
                np.stack([w.doc_mask for w in wins]), 0.0, MASK_NEG
            ).astype(ag.get_dtype())
            hidden = M.encode(params, model_cfg, ids, boxes, attn)
            span = M.head_span(params, hidden)
            start_logits = span[:, :, 0] + Tensor(doc_bias)
            end_logits = span[:, :, 1] + Tensor(doc_bias)
            return (
                ag.softmax_cross_entropy(start_logits, starts)
                + ag.softmax_cross_entropy(end_logits, ends)
            ) * 0.5

    else:  # classification
        seqs = _encode_docs([ex.doc for ex in train_examples], vocab, model_cfg)
        cls_labels = np.array([ex.label for ex in train_examples], dtype=np.int64)

        def batch_loss(indices):
            ids = np.stack([seqs[i].token_ids for i in indices])
            boxes = np.stack([seqs[i].boxes for i in indices])
            attn = stack_attention([seqs[i].length for i in indices],
                                   model_cfg.max_len)
            hidden = M.encode(params, model_cfg, ids, boxes, attn)
            logits = M.head_cls(params, hidden)
            return ag.softmax_cross_entropy(logits, cls_labels[list(indices)])

    n = len(train_examples) if task != "qa" else len(prepared)
    sampler = IndexSampler(n, train_cfg.seed)
    for step in range(train_cfg.steps):
        indices = [i for i, _ in sampler.batch(step, train_cfg.batch_size)]
        loss = batch_loss(indices)
        zero_grads(params)
        backward(loss)
        adam_step(params, adam, lr_at(step, train_cfg))
        if metrics_log is not None:
            metrics_log.write({"step": step, "lr": lr_at(step, train_cfg),
                               "loss": loss.item()})

    report = evaluate(task, params, eval_examples, vocab, model_cfg, train_cfg)
    return params, report


def evaluate(
    task: str,
    params: dict[str, Tensor],
    eval_examples: list,
    vocab: Vocab,
    model_cfg: M.ModelConfig,
    train_cfg: TrainConfig,
) -> dict:
    """The task's metric over a labeled example list."""
    if not eval_examples:
        raise ValueError("empty evaluation dataset")
    if task == "tagging":
        seqs = _encode_docs([ex.doc for ex in eval_examples], vocab, model_cfg)
        preds = predict_word_tags(params, model_cfg, seqs, train_cfg.batch_size)
        flat_pred: list[str] = []
        flat_gold: list[str] = []
        for ex, p in zip(eval_examples, preds):
            flat_pred.extend(p)
            flat_gold.extend(ex.word_labels)
        precision, recall, f1 = word_f1(flat_pred, flat_gold)
        return {"precision": precision, "recall": recall, "f1": f1}
    if task == "qa":
        scores = []
        for ex in eval_examples:
            windows, _ = qa_windows(ex, vocab, model_cfg)
            text = qa_predict_answer(params, model_cfg, vocab, windows,
                                     train_cfg.max_answer_len)
            scores.append(anls_single(text, ex.answers))
        return {"anls": float(np.mean(scores))}
    if task == "classification":
        seqs = _encode_docs([ex.doc for ex in eval_examples], vocab, model_cfg)
        correct = 0
        for lo in range(0, len(seqs), train_cfg.batch_size):
            chunk = seqs[lo:lo + train_cfg.batch_size]
            ids = np.stack([s.token_ids for s in chunk])
            boxes = np.stack([s.boxes for s in chunk])
            attn = stack_attention([s.length for s in chunk], model_cfg.max_len)
            hidden = M.encode(params, model_cfg, ids, boxes, attn)
            pred = np.argmax(M.head_cls(params, hidden).data, axis=-1)
            gold = [ex.label for ex in eval_examples[lo:lo + train_cfg.batch_size]]
            correct += int((pred == np.asarray(gold)).sum())
        return {"accuracy": correct / len(eval_examples)}
    raise ValueError(f"unknown task {task!r}")
