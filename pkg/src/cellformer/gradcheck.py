"""Central finite-difference verification of every backward rule, composed
through the real model: the joint pre-training loss and each fine-tuning
loss on a tiny two-layer configuration.

The differencing path never touches backward(); it only re-runs the forward
closure with perturbed parameters, so it stays an independent oracle.
"""

from __future__ import annotations

import logging
import numpy as np

from . import autograd as ag
from . import model as M
from .autograd import Tensor, backward, zero_grads
from .documents import encode_document
from .pretrain import PretrainConfig, derive_rng, make_pretrain_example, pretrain_loss
from .synth import SynthConfig, gen_cls_dataset, gen_form_dataset, gen_qa_dataset, vocab_words
from .tasks import qa_training_window, tagging_token_labels
from .trainer import stack_attention
from .vocab import build_vocab
from .model import MASK_NEG

logger = logging.getLogger(__name__)

REL_TOL = 1e-4
FD_STEP = 1e-5
FD_FLOOR = 1e-8  # elements with |fd| below this are excluded from rel error
NOISE_MARGIN = 64  # headroom over one-ulp rounding per loss evaluation
ZERO_SAMPLE = 8  # random probes into parameters whose grad is entirely zero


def finite_difference_errors(
    loss_fn, params: dict[str, Tensor], seed: int = 0
) -> dict[str, tuple[float, int]]:
    """Max relative error and probe count per parameter group.

    Probes every element with a nonzero analytic gradient; parameters whose
    analytic gradient is identically zero get a random sample of probes to
    catch missing backward rules. A nonzero analytic gradient where the
    finite difference vanishes counts as a full error.

    Differencing two nearly equal losses floors the measurable |fd| at about
    eps*|loss|/(2h); below NOISE_MARGIN times that, an element's difference
    is rounding noise, so such elements are held to the absolute noise bound
    instead of the relative tolerance (a corrupted rule still fails at the
    plentiful larger-|fd| elements).
    """
    zero_grads(params)
    loss = loss_fn()
    backward(loss)
    analytic = {
        name: (np.zeros(p.shape) if p.grad is None else p.grad.copy())
        for name, p in params.items()
    }
    noise_abs = (
        NOISE_MARGIN * np.finfo(np.float64).eps
        * max(1.0, abs(loss.item())) / (2 * FD_STEP)
    )
    rel_floor = max(FD_FLOOR, noise_abs / REL_TOL)

    report: dict[str, tuple[float, int]] = {}
    for name in sorted(params):
        p = params[name]
        g = analytic[name].reshape(-1)
        flat = p.data.reshape(-1)
        nz = np.nonzero(g)[0]
        if len(nz) == 0:
            rng = derive_rng(seed, "fd-zero-probe", name)
            nz = rng.choice(len(flat), size=min(ZERO_SAMPLE, len(flat)),
                            replace=False)
        worst = 0.0
        for i in nz:
            old = flat[i]
            flat[i] = old + FD_STEP
            f_plus = loss_fn().item()
            flat[i] = old - FD_STEP
            f_minus = loss_fn().item()
            flat[i] = old
            fd = (f_plus - f_minus) / (2 * FD_STEP)
            if abs(fd) > rel_floor:
                worst = max(worst, abs(g[i] - fd) / abs(fd))
            elif abs(fd) > FD_FLOOR:
                if abs(g[i] - fd) > noise_abs:
                    worst = max(worst, 1.0)  # beyond any rounding explanation
            elif abs(g[i]) > 1e-6:
                worst = max(worst, 1.0)  # phantom gradient
        report[name] = (worst, len(nz))
    return report


def _tiny_setup(seed: int):
    synth_cfg = SynthConfig(seed=seed, num_docs=2, min_pairs=3, max_pairs=4)
    vocab = build_vocab(vocab_words(synth_cfg), max_size=256)
    model_cfg = M.ModelConfig(
        vocab_size=len(vocab), num_layers=2, num_heads=2, hidden_d=16,
        ffn_d=32, max_len=24,
    )
    return synth_cfg, vocab, model_cfg


def _check_loss(name, loss_fn, params, report, seed):
    errors = finite_difference_errors(loss_fn, params, seed=seed)
    for group, (err, n) in errors.items():
        prev = report.get(group, (0.0, 0))
        report[group] = (max(prev[0], err), prev[1] + n)
    logger.info("grad-check %s: max rel err %.2e",
                name, max(e for e, _ in errors.values()))


def run_grad_check(seed: int = 0) -> tuple[bool, dict[str, tuple[float, int]]]:
    """FD-check the composed pre-training loss and all three fine-tuning
    losses on the tiny model; returns (passed, per-group report)."""
    ag.set_dtype(np.float64)
    synth_cfg, vocab, model_cfg = _tiny_setup(seed)
    pre_cfg = PretrainConfig()
    report: dict[str, tuple[float, int]] = {}

    # joint MVLM + CPC
    tag_data = gen_form_dataset(synth_cfg, 2)
    seqs = [encode_document(ex.doc, vocab, model_cfg.max_len) for ex in tag_data]
    examples = [
        make_pretrain_example(s, pre_cfg, len(vocab), derive_rng(seed, s.doc_id, 0))
        for s in seqs
    ]
    params = M.init_parameters(model_cfg, derive_rng(seed, "p0"), heads=("mlm", "cpc"))
    ids = np.stack([e.input_ids for e in examples])
    boxes = np.stack([e.boxes for e in examples])
    attn = stack_attention([e.length for e in examples], model_cfg.max_len)
    mvlm_labels = np.stack([e.mvlm_labels for e in examples])
    cpc_labels = np.stack([e.cpc_labels for e in examples])

    def pretrain_fn():
        hidden = M.encode(params, model_cfg, ids, boxes, attn)
        loss, _ = pretrain_loss(
            M.head_mlm(params, hidden), M.head_cpc(params, hidden),
            mvlm_labels, cpc_labels, pre_cfg,
        )
        return loss

    _check_loss("mvlm+cpc", pretrain_fn, params, report, seed)

    # tagging
    params = M.init_parameters(model_cfg, derive_rng(seed, "p1"), heads=("tag",))
    tag_targets = np.stack([
        tagging_token_labels(s, ex.word_labels) for s, ex in zip(seqs, tag_data)
    ])
    plain_ids = np.stack([s.token_ids for s in seqs])
    plain_boxes = np.stack([s.boxes for s in seqs])
    plain_attn = stack_attention([s.length for s in seqs], model_cfg.max_len)

    def tagging_fn():
        hidden = M.encode(params, model_cfg, plain_ids, plain_boxes, plain_attn)
        return ag.softmax_cross_entropy(M.head_tag(params, hidden), tag_targets,
                                        pre_cfg.ignore_label)

    _check_loss("tagging", tagging_fn, params, report, seed)

    # QA span
    qa_data = gen_qa_dataset(synth_cfg, 2)
    built = [qa_training_window(ex, vocab, model_cfg) for ex in qa_data]
    built = [b for b in built if b is not None]
    if not built:
        raise RuntimeError("tiny QA setup produced no trainable window")
    params = M.init_parameters(model_cfg, derive_rng(seed, "p2"), heads=("span",))
    q_ids = np.stack([b[0].token_ids for b in built])
    q_boxes = np.stack([b[0].boxes for b in built])
    q_attn = stack_attention([b[0].length for b in built], model_cfg.max_len)
    q_bias = np.where(np.stack([b[0].doc_mask for b in built]), 0.0, MASK_NEG)
    starts = np.array([b[1] for b in built])
    ends = np.array([b[2] for b in built])

    def qa_fn():
        hidden = M.encode(params, model_cfg, q_ids, q_boxes, q_attn)
        span = M.head_span(params, hidden)
        s_logits = span[:, :, 0] + Tensor(q_bias)
        e_logits = span[:, :, 1] + Tensor(q_bias)
        return (ag.softmax_cross_entropy(s_logits, starts)
                + ag.softmax_cross_entropy(e_logits, ends)) * 0.5

    _check_loss("qa", qa_fn, params, report, seed)

    # classification
    cls_data = gen_cls_dataset(synth_cfg, 3)
    cls_seqs = [encode_document(ex.doc, vocab, model_cfg.max_len) for ex in cls_data]
    params = M.init_parameters(model_cfg, derive_rng(seed, "p3"), heads=("cls",))
    c_ids = np.stack([s.token_ids for s in cls_seqs])
    c_boxes = np.stack([s.boxes for s in cls_seqs])
    c_attn = stack_attention([s.length for s in cls_seqs], model_cfg.max_len)
    c_labels = np.array([ex.label for ex in cls_data])

    def cls_fn():
        hidden = M.encode(params, model_cfg, c_ids, c_boxes, c_attn)
        return ag.softmax_cross_entropy(M.head_cls(params, hidden), c_labels)

    _check_loss("classification", cls_fn, params, report, seed)

    passed = all(err <= REL_TOL for err, _ in report.values())
    return passed, report
