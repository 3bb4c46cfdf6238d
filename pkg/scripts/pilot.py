"""Pipeline pilot: pretrain variants + fine-tunes, reporting the acceptance
margins. Tuning tool, not part of the test suite."""

import argparse
import json
import time

import numpy as np

from cellformer.model import ModelConfig
from cellformer.pretrain import PretrainConfig
from cellformer.synth import (
    QUESTION_WORDS, SynthConfig, gen_cls_dataset, gen_form_dataset,
    gen_pretrain_corpus, gen_qa_dataset, vocab_words,
)
from cellformer.taskdata import split_train_eval
from cellformer.tasks import finetune
from cellformer.trainer import Pretrainer, TrainConfig
from cellformer.vocab import build_vocab


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--num-docs", type=int, default=5000)
    ap.add_argument("--pretrain-steps", type=int, default=2500)
    ap.add_argument("--finetune-steps", type=int, default=400)
    ap.add_argument("--qa-steps", type=int, default=500)
    ap.add_argument("--cls-steps", type=int, default=300)
    ap.add_argument("--form-docs", type=int, default=150)
    ap.add_argument("--ft-lr", type=float, default=3e-4)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--skip", default="", help="comma list: word,no_cpc,qa,cls")
    ap.add_argument("--out", default="/tmp/pilot.json")
    args = ap.parse_args()
    skip = set(args.skip.split(","))

    t_start = time.time()
    synth = SynthConfig(seed=args.seed, num_docs=args.num_docs)
    corpus = gen_pretrain_corpus(synth)
    words = [w for d in corpus for c in d.cells for w in c.text.split()]
    words.extend(vocab_words(synth))
    words.extend(QUESTION_WORDS)
    vocab = build_vocab(words, synth.vocab_max_size)
    print(f"[{time.time()-t_start:6.1f}s] corpus {len(corpus)} docs, V={len(vocab)}")

    pre_cfg = PretrainConfig()
    train_cfg = TrainConfig(steps=args.pretrain_steps, seed=args.seed,
                            eval_every=max(100, args.pretrain_steps // 10))
    results = {"config": vars(args), "V": len(vocab)}

    def pretrain(label, layout, cpc):
        mc = ModelConfig(vocab_size=len(vocab), layout_mode=layout)
        tr = Pretrainer(corpus, vocab, mc, train_cfg, pre_cfg, use_cpc=cpc)
        hist = tr.run()
        ev = tr.evaluate_heldout()
        last50 = float(np.mean([h["mvlm_loss"] for h in hist[-50:]]))
        out = {"step0": hist[0]["mvlm_loss"], "final": hist[-1]["mvlm_loss"],
               "last50": last50, **ev}
        print(f"[{time.time()-t_start:6.1f}s] {label}: step0={out['step0']:.3f} "
              f"last50={last50:.3f} {ev}")
        results[label] = out
        return tr.to_checkpoint(), hist

    full_ckpt, full_hist = pretrain("full", "cell", True)
    word_ckpt = None
    if "word" not in skip:
        word_ckpt, word_hist = pretrain("word_level", "word", True)
        results["fig5_gap"] = results["word_level"]["last50"] - results["full"]["last50"]
    nocpc_ckpt = None
    if "no_cpc" not in skip:
        nocpc_ckpt, _ = pretrain("no_cpc", "cell", False)

    form = gen_form_dataset(synth, args.form_docs)
    tr_f, ev_f = split_train_eval(form)
    ft_cfg = TrainConfig(steps=args.finetune_steps, batch_size=8,
                         lr=args.ft_lr, seed=args.seed, eval_every=0)

    def run_ft(label, task, data_tr, data_ev, init, cfg):
        mc = init.model_config if init is not None else ModelConfig(
            vocab_size=len(vocab))
        _, rep = finetune(task, data_tr, data_ev, vocab, mc, cfg, init=init)
        print(f"[{time.time()-t_start:6.1f}s] {label}: {rep}")
        results[label] = rep

    run_ft("ft_full", "tagging", tr_f, ev_f, full_ckpt, ft_cfg)
    if nocpc_ckpt is not None:
        run_ft("ft_no_cpc", "tagging", tr_f, ev_f, nocpc_ckpt, ft_cfg)
    run_ft("ft_scratch", "tagging", tr_f, ev_f, None, ft_cfg)
    if "qa" not in skip:
        qa = gen_qa_dataset(synth, synth.num_qa_docs)
        tr_q, ev_q = split_train_eval(qa)
        qa_cfg = TrainConfig(steps=args.qa_steps, batch_size=8, lr=args.ft_lr,
                             seed=args.seed, eval_every=0)
        run_ft("ft_qa", "qa", tr_q, ev_q, full_ckpt, qa_cfg)
    if "cls" not in skip:
        cls = gen_cls_dataset(synth, 240)
        tr_c, ev_c = split_train_eval(cls)
        cls_cfg = TrainConfig(steps=args.cls_steps, batch_size=8,
                              lr=args.ft_lr, seed=args.seed, eval_every=0)
        run_ft("ft_cls", "classification", tr_c, ev_c, full_ckpt, cls_cfg)

    results["elapsed_min"] = (time.time() - t_start) / 60
    with open(args.out, "w") as fh:
        json.dump(results, fh, indent=2, default=float)
    print(f"total {results['elapsed_min']:.1f} min -> {args.out}")


if __name__ == "__main__":
    main()
