"""Training loop machinery: learning-rate schedule, stateless batch
ordering, and the joint MVLM+CPC pre-training driver.

Everything is derived from (seed, step), never from consumed global RNG
state, so a run resumed from a checkpoint replays the exact batch and
corruption sequence of an uninterrupted run.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autograd as ag
from . import model as M
from .autograd import Tensor, backward, zero_grads
from .checkpoint import Checkpoint
from .documents import RawDocument, encode_document
from .optim import adam_step, init_adam
from .pretrain import PretrainConfig, derive_rng, make_pretrain_example, pretrain_loss
from .vocab import Vocab

logger = logging.getLogger(__name__)

PRECISIONS = {"float32": np.float32, "float64": np.float64}


@dataclass
class TrainConfig:
    steps: int = 3000
    batch_size: int = 16
    lr: float = 3e-4
    warmup_frac: float = 0.05
    seed: int = 7
    eval_every: int = 250
    heldout_every: int = 50  # every k-th document is held out during pre-training
    precision: str = "float32"
    max_answer_len: int = 6  # span search width for QA fine-tuning
    stop_after: int = 0  # pause after this step (0 = run to `steps`)

    def __post_init__(self):
        if self.steps <= 0:
            raise ValueError("steps must be positive")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(PRECISIONS)}")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ValueError("warmup_frac must be in [0, 1)")
        if self.stop_after < 0 or self.stop_after > self.steps:
            raise ValueError("stop_after must be in [0, steps]")


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup over warmup_frac of the run, then linear decay to 0."""
    warmup = max(1, int(round(cfg.warmup_frac * cfg.steps)))
    if step < warmup:
        return cfg.lr * (step + 1) / warmup
    return cfg.lr * max(0, cfg.steps - step) / max(1, cfg.steps - warmup)


class IndexSampler:
    """Deterministic shuffled epochs addressed by global step, stateless
    apart from a permutation cache."""

    def __init__(self, n: int, seed: int):
        if n <= 0:
            raise ValueError("empty dataset")
        self.n = n
        self.seed = seed
        self._perms: dict[int, np.ndarray] = {}

    def _perm(self, epoch: int) -> np.ndarray:
        if epoch not in self._perms:
            self._perms[epoch] = derive_rng(self.seed, "order", epoch).permutation(self.n)
            if len(self._perms) > 8:  # keep the cache from growing with long runs
                for key in sorted(self._perms)[:-4]:
                    del self._perms[key]
        return self._perms[epoch]

    def batch(self, step: int, batch_size: int) -> list[tuple[int, int]]:
        """(example index, epoch) pairs for one step."""
        out = []
        for j in range(batch_size):
            g = step * batch_size + j
            epoch, pos = divmod(g, self.n)
            out.append((int(self._perm(epoch)[pos]), epoch))
        return out


def stack_attention(lengths: Sequence[int], max_len: int) -> np.ndarray:
    mask = np.zeros((len(lengths), max_len), dtype=bool)
    for i, n in enumerate(lengths):
        mask[i, :n] = True
    return mask


class Pretrainer:
    """Joint masked-token + cell-position pre-training over an encoded
    corpus."""

    def __init__(
        self,
        docs: list[RawDocument],
        vocab: Vocab,
        model_cfg: M.ModelConfig,
        train_cfg: TrainConfig,
        pre_cfg: PretrainConfig,
        use_cpc: bool = True,
        resume: Optional[Checkpoint] = None,
    ):
        ag.set_dtype(PRECISIONS[train_cfg.precision])
        self.vocab = vocab
        self.model_cfg = model_cfg
        self.train_cfg = train_cfg
        self.pre_cfg = pre_cfg
        self.use_cpc = use_cpc

        logger.info("encoding %d documents (%s-level layout)", len(docs),
                    model_cfg.layout_mode)
        encoded = [
            encode_document(d, vocab, model_cfg.max_len, model_cfg.layout_mode)
            for d in docs
        ]
        k = train_cfg.heldout_every
        self.heldout = [s for i, s in enumerate(encoded) if k and i % k == k - 1]
        self.train_seqs = [s for i, s in enumerate(encoded) if not (k and i % k == k - 1)]
        if not self.train_seqs:
            raise ValueError("no training documents after held-out split")

        self.sampler = IndexSampler(len(self.train_seqs), train_cfg.seed)
        heads = M.PRETRAIN_HEADS if use_cpc else ("mlm",)
        if resume is None:
            init_rng = derive_rng(train_cfg.seed, "init")
            self.params = M.init_parameters(model_cfg, init_rng, heads=heads)
            self.adam = init_adam(self.params)
            self.start_step = 0
            self.rng = derive_rng(train_cfg.seed, "trainer")
        else:
            if resume.precision != train_cfg.precision:
                raise ValueError(
                    f"cannot resume a {resume.precision} checkpoint at "
                    f"{train_cfg.precision}; precision must match exactly"
                )
            self.params = resume.parameters()
            self.adam = resume.adam if resume.adam is not None else init_adam(self.params)
            self.start_step = resume.step
            self.rng = np.random.Generator(np.random.PCG64())
            self.rng.bit_generator.state = resume.rng_state

    def _batch_examples(self, step: int):
        picks = self.sampler.batch(step, self.train_cfg.batch_size)
        examples = []
        for idx, epoch in picks:
            seq = self.train_seqs[idx]
            rng = derive_rng(self.train_cfg.seed, seq.doc_id, epoch)
            examples.append(
                make_pretrain_example(seq, self.pre_cfg, len(self.vocab), rng)
            )
        return examples

    def _forward_loss(self, examples) -> tuple[Tensor, dict]:
        ids = np.stack([e.input_ids for e in examples])
        boxes = np.stack([e.boxes for e in examples])
        attn = stack_attention([e.length for e in examples], self.model_cfg.max_len)
        mvlm_labels = np.stack([e.mvlm_labels for e in examples])
        hidden = M.encode(self.params, self.model_cfg, ids, boxes, attn)
        mlm_logits = M.head_mlm(self.params, hidden)
        if self.use_cpc:
            cpc_logits = M.head_cpc(self.params, hidden)
            cpc_labels = np.stack([e.cpc_labels for e in examples])
        else:
            cpc_logits, cpc_labels = None, None
        return pretrain_loss(mlm_logits, cpc_logits, mvlm_labels, cpc_labels,
                             self.pre_cfg)

    def evaluate_heldout(self) -> dict:
        """Deterministic corruption (epoch -1) over the held-out documents."""
        if not self.heldout:
            return {}
        losses, correct, labeled = [], 0, 0
        bs = self.train_cfg.batch_size
        for lo in range(0, len(self.heldout), bs):
            chunk = self.heldout[lo:lo + bs]
            examples = [
                make_pretrain_example(
                    s, self.pre_cfg, len(self.vocab),
                    derive_rng(self.train_cfg.seed, s.doc_id, -1),
                )
                for s in chunk
            ]
            _, metrics = self._forward_loss(examples)
            losses.append(metrics["mvlm_loss"] * len(chunk))
            if self.use_cpc:
                correct += metrics["cpc_correct"]
                labeled += metrics["cpc_labeled"]
        out = {"eval_mvlm_loss": sum(losses) / len(self.heldout)}
        if self.use_cpc:
            out["eval_cpc_acc"] = correct / labeled if labeled else 0.0
        return out

    def run(self, metrics_log=None, eval_log=None, stop_after=None) -> list[dict]:
        """Train from start_step to cfg.steps; returns the per-step records.

        `stop_after` simulates an interrupted run: the schedule still spans
        cfg.steps but the loop stops early (checkpoint and resume later)."""
        history = []
        t0 = time.time()
        last = self.train_cfg.steps if stop_after is None \
            else min(stop_after, self.train_cfg.steps)
        for step in range(self.start_step, last):
            examples = self._batch_examples(step)
            lr = lr_at(step, self.train_cfg)
            loss, metrics = self._forward_loss(examples)
            zero_grads(self.params)
            backward(loss)
            adam_step(self.params, self.adam, lr)

            record = {"step": step, "lr": lr, "mvlm_loss": metrics["mvlm_loss"]}
            if self.use_cpc:
                record["cpc_loss"] = metrics["cpc_loss"]
                record["cpc_acc"] = metrics["cpc_acc"]
            history.append(record)
            if metrics_log is not None:
                metrics_log.write(record)

            if self.train_cfg.eval_every and (step + 1) % self.train_cfg.eval_every == 0:
                ev = self.evaluate_heldout()
                ev["step"] = step
                if eval_log is not None:
                    eval_log.write(ev)
                logger.info(
                    "step %d/%d loss=%.4f %s (%.1fs)", step + 1,
                    self.train_cfg.steps, metrics["mvlm_loss"],
                    " ".join(f"{k}={v:.4f}" for k, v in ev.items() if k != "step"),
                    time.time() - t0,
                )
        return history

    def to_checkpoint(self, step: Optional[int] = None) -> Checkpoint:
        return Checkpoint(
            model_config=self.model_cfg,
            arrays={k: v.data for k, v in self.params.items()},
            vocab_tokens=list(self.vocab.id_to_token),
            step=self.train_cfg.steps if step is None else step,
            rng_state=self.rng.bit_generator.state,
            adam=self.adam,
            precision=self.train_cfg.precision,
        )
