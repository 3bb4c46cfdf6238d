"""Command-line surface: corpus generation, pre-training, fine-tuning, the
ablation harness, and the gradient oracle.

Every command prints its fully resolved configuration and is deterministic
given that configuration. Exit codes: 0 success, 1 usage/config error,
2 data error, 3 gradient-check failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, apply_settings, config_lines, parse_kv_file
from .dataio import (
    DataError, MetricsLog, read_cell_jsonl, read_cls_examples, read_qa_examples,
    read_tagging_examples, write_cell_jsonl, write_cls_jsonl, write_qa_jsonl,
    write_report, write_tagging_jsonl,
)
from .documents import IngestError
from .gradcheck import REL_TOL, run_grad_check
from .model import ModelConfig
from .pretrain import PretrainConfig
from .synth import (
    QUESTION_WORDS, SynthConfig, gen_cls_dataset, gen_form_dataset,
    gen_pretrain_corpus, gen_qa_dataset, vocab_words,
)
from .taskdata import split_train_eval
from .tasks import TASKS, finetune
from .trainer import Pretrainer, TrainConfig
from .vocab import Vocab, build_vocab

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_CHECK = 3

ABLATION_VARIANTS = ("full", "no_cpc", "word_level", "no_pretrain")


class _Parser(argparse.ArgumentParser):
    # usage problems must exit 1, not argparse's default 2
    def error(self, message):
        raise ConfigError(message)


def _add_dataclass_flags(parser, cls, skip=(), seen=None):
    """One string-valued flag per dataclass field; coercion happens later in
    apply_settings so files and flags share one type path."""
    seen = seen if seen is not None else set()
    for f in dataclasses.fields(cls):
        if f.name in skip or f.name in seen:
            continue
        seen.add(f.name)
        parser.add_argument(
            "--" + f.name.replace("_", "-"),
            dest=f.name,
            default=argparse.SUPPRESS,
            metavar="V",
            help=f"{cls.__name__}.{f.name} (default {f.default!r})",
        )
    return seen


def _collect_settings(args, field_names) -> dict[str, str]:
    ns = vars(args)
    return {name: ns[name] for name in field_names if name in ns}


def _resolve(instances, args, field_names, reject=None):
    """defaults -> config file -> explicit flags."""
    if getattr(args, "config", None):
        instances = apply_settings(
            instances, parse_kv_file(args.config), str(args.config), reject
        )
    flags = _collect_settings(args, field_names)
    return apply_settings(instances, flags, "command line", reject)


def _print_config(sections: dict) -> None:
    print("resolved configuration:")
    for line in config_lines(sections):
        print("  " + line)


def _int_flag(value, name) -> int:
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"--{name} expects an integer, got {value!r}") from None


def _load_vocab(path) -> Vocab:
    try:
        return Vocab.from_lines(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise DataError(f"cannot read vocabulary {path}: {e}") from None
    except ValueError as e:
        raise DataError(f"bad vocabulary {path}: {e}") from None


# -- gen-corpus -------------------------------------------------------------


def cmd_gen_corpus(args) -> int:
    (synth_cfg,) = _resolve([SynthConfig()], args, _SYNTH_FIELDS)
    if synth_cfg.num_docs <= 0:
        raise ConfigError("num_docs must be positive")
    _print_config({"corpus": synth_cfg})

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    corpus = gen_pretrain_corpus(synth_cfg)
    n_docs = write_cell_jsonl(corpus, out / "pretrain_docs.jsonl")

    words = [w for doc in corpus for c in doc.cells for w in c.text.split()]
    words.extend(vocab_words(synth_cfg))  # lexicon floor incl. question words
    words.extend(QUESTION_WORDS)
    vocab = build_vocab(words, synth_cfg.vocab_max_size)
    (out / "vocab.txt").write_text(vocab.to_lines(), encoding="utf-8")

    form = gen_form_dataset(synth_cfg, synth_cfg.num_form_docs)
    write_cell_jsonl([ex.doc for ex in form], out / "form_docs.jsonl")
    n_form = write_tagging_jsonl(form, out / "form_labels.jsonl")

    qa = gen_qa_dataset(synth_cfg, synth_cfg.num_qa_docs)
    write_cell_jsonl([ex.doc for ex in qa], out / "qa_docs.jsonl")
    n_qa = write_qa_jsonl(qa, out / "qa_labels.jsonl")

    cls = gen_cls_dataset(synth_cfg, synth_cfg.num_cls_docs)
    write_cell_jsonl([ex.doc for ex in cls], out / "cls_docs.jsonl")
    n_cls = write_cls_jsonl(cls, out / "cls_labels.jsonl")

    print(f"pretraining documents: {n_docs}")
    print(f"vocabulary size: {len(vocab)}")
    print(f"tagging examples: {n_form}")
    print(f"qa examples: {n_qa}")
    print(f"classification examples: {n_cls}")
    return EXIT_OK


# -- pretrain ----------------------------------------------------------------


def _pretrain_configs(args, vocab):
    model_cfg = ModelConfig(vocab_size=len(vocab))
    train_cfg = TrainConfig()
    pre_cfg = PretrainConfig()
    reject = {"vocab_size": "derived from the vocabulary file"}
    model_cfg, train_cfg, pre_cfg = _resolve(
        [model_cfg, train_cfg, pre_cfg], args, _PRETRAIN_FIELDS, reject
    )
    return model_cfg, train_cfg, pre_cfg


def cmd_pretrain(args) -> int:
    vocab = _load_vocab(args.vocab)
    docs = read_cell_jsonl(args.corpus)
    model_cfg, train_cfg, pre_cfg = _pretrain_configs(args, vocab)
    use_cpc = args.cpc == "on"

    resume = None
    if args.resume:
        resume = load_checkpoint(args.resume)
        if resume.model_config != model_cfg:
            raise ConfigError(
                "checkpoint model config does not match the requested one; "
                f"checkpoint: {resume.model_config}, requested: {model_cfg}"
            )
        if resume.vocab_tokens != vocab.id_to_token:
            raise ConfigError("checkpoint vocabulary differs from --vocab")

    _print_config({"model": model_cfg, "train": train_cfg, "objectives": pre_cfg})
    print(f"cpc={args.cpc}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trainer = Pretrainer(docs, vocab, model_cfg, train_cfg, pre_cfg,
                         use_cpc=use_cpc, resume=resume)
    stop_after = train_cfg.stop_after or None
    with MetricsLog(out / "metrics.jsonl") as mlog, \
         MetricsLog(out / "eval.jsonl") as elog:
        history = trainer.run(metrics_log=mlog, eval_log=elog,
                              stop_after=stop_after)
    last_step = stop_after if stop_after is not None else train_cfg.steps
    save_checkpoint(out / "checkpoint.ckpt", trainer.to_checkpoint(step=last_step))

    final = trainer.evaluate_heldout()
    if history:
        print(f"final mvlm loss: {history[-1]['mvlm_loss']:.4f}")
    for key, value in final.items():
        print(f"{key}: {value:.4f}")
    print(f"checkpoint: {out / 'checkpoint.ckpt'}")
    return EXIT_OK


# -- finetune ----------------------------------------------------------------


def _read_task_examples(task, docs_path, labels_path):
    if task == "tagging":
        return read_tagging_examples(docs_path, labels_path)
    if task == "qa":
        return read_qa_examples(docs_path, labels_path)
    return read_cls_examples(docs_path, labels_path)


def cmd_finetune(args) -> int:
    task = args.task
    init = None
    if args.init != "none":
        init = load_checkpoint(args.init)
        vocab = Vocab(init.vocab_tokens)
        if args.vocab:
            file_vocab = _load_vocab(args.vocab)
            if file_vocab.id_to_token != vocab.id_to_token:
                raise ConfigError("--vocab differs from the checkpoint vocabulary")
        model_cfg = init.model_config
        reject = {f.name: "fixed by the checkpoint's model config"
                  for f in dataclasses.fields(ModelConfig)}
        (train_cfg,) = _resolve([TrainConfig()], args, _FINETUNE_FIELDS, reject)
    else:
        if not args.vocab:
            raise ConfigError("--vocab is required when --init none")
        vocab = _load_vocab(args.vocab)
        model_cfg = ModelConfig(vocab_size=len(vocab))
        reject = {"vocab_size": "derived from the vocabulary file"}
        model_cfg, train_cfg = _resolve(
            [model_cfg, TrainConfig()], args, _FINETUNE_FIELDS, reject
        )

    examples = _read_task_examples(task, args.docs, args.labels)
    train_set, eval_set = split_train_eval(examples)
    _print_config({"model": model_cfg, "train": train_cfg})
    print(f"task={task} train={len(train_set)} eval={len(eval_set)}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with MetricsLog(out / "metrics.jsonl") as mlog:
        params, report = finetune(task, train_set, eval_set, vocab, model_cfg,
                                  train_cfg, init=init, metrics_log=mlog)

    fields = {"task": task, "init": args.init, "seed": train_cfg.seed}
    for title, cfg in (("model", model_cfg), ("train", train_cfg)):
        for f in sorted(dataclasses.fields(cfg), key=lambda f: f.name):
            fields[f"{title}.{f.name}"] = getattr(cfg, f.name)
    fields.update(report)
    write_report(out / "report.txt", fields)

    ckpt = Checkpoint(
        model_config=model_cfg,
        arrays={k: v.data for k, v in params.items()},
        vocab_tokens=vocab.id_to_token,
        step=train_cfg.steps,
        rng_state=np.random.Generator(np.random.PCG64(train_cfg.seed))
        .bit_generator.state,
        adam=None,
        precision=train_cfg.precision,
    )
    save_checkpoint(out / "checkpoint.ckpt", ckpt)

    for key, value in report.items():
        print(f"{key}: {value:.4f}")
    print(f"report: {out / 'report.txt'}")
    return EXIT_OK


# -- ablate -------------------------------------------------------------------


def cmd_ablate(args) -> int:
    variants = tuple(v.strip() for v in args.variants.split(",") if v.strip())
    unknown = set(variants) - set(ABLATION_VARIANTS)
    if unknown:
        raise ConfigError(
            f"unknown ablation variants {sorted(unknown)}; "
            f"valid: {', '.join(ABLATION_VARIANTS)}"
        )
    if not variants:
        raise ConfigError("no ablation variants requested")

    vocab = _load_vocab(args.vocab)
    docs = read_cell_jsonl(args.corpus)
    examples = read_tagging_examples(args.form_docs, args.form_labels)
    train_set, eval_set = split_train_eval(examples)

    model_cfg = ModelConfig(vocab_size=len(vocab))
    train_cfg = TrainConfig()
    pre_cfg = PretrainConfig()
    reject = {"vocab_size": "derived from the vocabulary file",
              "steps": "use pretrain_steps / finetune_steps for ablation",
              "layout_mode": "chosen per ablation variant"}
    model_cfg, train_cfg, pre_cfg = _resolve(
        [model_cfg, train_cfg, pre_cfg], args, _PRETRAIN_FIELDS, reject
    )
    pretrain_steps = _int_flag(args.pretrain_steps, "pretrain-steps")
    finetune_steps = _int_flag(args.finetune_steps, "finetune-steps")
    _print_config({"model": model_cfg, "train": train_cfg, "objectives": pre_cfg})
    print(f"variants={','.join(variants)} pretrain_steps={pretrain_steps} "
          f"finetune_steps={finetune_steps}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    results: dict[str, dict] = {}
    histories: dict[str, list] = {}
    for variant in variants:
        vdir = out / variant
        vdir.mkdir(exist_ok=True)
        try:
            results[variant] = _run_variant(
                variant, docs, vocab, model_cfg, train_cfg, pre_cfg,
                pretrain_steps, finetune_steps, train_set, eval_set, vdir,
                histories,
            )
        except Exception as e:  # keep going; the table marks the failure
            logger.exception("variant %s failed", variant)
            results[variant] = {"status": f"failed: {e}"}

    table_lines = [f"{'variant':<14}{'f1':>8}  status"]
    for variant in variants:
        r = results[variant]
        f1 = f"{r['f1']:.4f}" if "f1" in r else "-"
        table_lines.append(f"{variant:<14}{f1:>8}  {r.get('status', 'ok')}")

    ordering_note = _ordering_note(results)
    if ordering_note:
        table_lines.append(ordering_note)
    (out / "ablation.txt").write_text("\n".join(table_lines) + "\n",
                                      encoding="utf-8")
    print("\n".join(table_lines))

    if "full" in histories and "word_level" in histories:
        series = ["step\tcell_level\tword_level"]
        for a, b in zip(histories["full"], histories["word_level"]):
            series.append(f"{a['step']}\t{a['mvlm_loss']:.6f}\t{b['mvlm_loss']:.6f}")
        (out / "mvlm_loss_series.tsv").write_text("\n".join(series) + "\n",
                                                  encoding="utf-8")
        print(f"loss series: {out / 'mvlm_loss_series.tsv'}")
    return EXIT_OK


def _run_variant(variant, docs, vocab, model_cfg, train_cfg, pre_cfg,
                 pretrain_steps, finetune_steps, train_set, eval_set, vdir,
                 histories) -> dict:
    layout = "word" if variant == "word_level" else "cell"
    vcfg = dataclasses.replace(model_cfg, layout_mode=layout)
    init = None
    fields = {"variant": variant, "seed": train_cfg.seed}
    if variant != "no_pretrain":
        t0 = time.time()
        pt_cfg = dataclasses.replace(train_cfg, steps=pretrain_steps)
        trainer = Pretrainer(docs, vocab, vcfg, pt_cfg, pre_cfg,
                             use_cpc=(variant != "no_cpc"))
        with MetricsLog(vdir / "pretrain_metrics.jsonl") as mlog:
            histories[variant] = trainer.run(metrics_log=mlog)
        init = trainer.to_checkpoint()
        save_checkpoint(vdir / "pretrain.ckpt", init)
        fields.update(trainer.evaluate_heldout())
        fields["pretrain_seconds"] = time.time() - t0

    t0 = time.time()
    ft_cfg = dataclasses.replace(train_cfg, steps=finetune_steps)
    with MetricsLog(vdir / "finetune_metrics.jsonl") as mlog:
        _, report = finetune("tagging", train_set, eval_set, vocab, vcfg,
                             ft_cfg, init=init, metrics_log=mlog)
    fields["finetune_seconds"] = time.time() - t0
    fields.update(report)
    write_report(vdir / "report.txt", fields)
    return {**report, "status": "ok"}


def _ordering_note(results: dict) -> str:
    """full >= each ablation, evaluated and flagged, never enforced."""
    if "f1" not in results.get("full", {}):
        return ""
    full = results["full"]["f1"]
    parts = []
    ok = True
    for variant in ("no_cpc", "word_level", "no_pretrain"):
        if "f1" in results.get(variant, {}):
            score = results[variant]["f1"]
            parts.append(f"{variant}({score:.4f})")
            ok &= full >= score
    if not parts:
        return ""
    return (f"# ordering full({full:.4f}) >= each of " + ", ".join(parts)
            + f": {'SATISFIED' if ok else 'VIOLATED'}")


# -- grad-check ----------------------------------------------------------------


def cmd_grad_check(args) -> int:
    passed, report = run_grad_check(seed=_int_flag(args.seed, "seed"))
    print(f"{'parameter group':<24}{'max rel err':>14}{'probes':>8}")
    for name in sorted(report):
        err, n = report[name]
        print(f"{name:<24}{err:>14.3e}{n:>8}")
    print(f"tolerance: {REL_TOL:.0e}")
    print("grad check: " + ("PASS" if passed else "FAIL"))
    return EXIT_OK if passed else EXIT_CHECK


# -- parser ---------------------------------------------------------------------


_SYNTH_FIELDS: set = set()
_PRETRAIN_FIELDS: set = set()
_FINETUNE_FIELDS: set = set()


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cellformer",
                     description="Layout-aware document LM: corpus, training, "
                                 "ablation, and verification commands.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", parents=[], help="generate the synthetic corpus",
                       add_help=True)
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--out", required=True, help="output directory")
    _SYNTH_FIELDS.update(_add_dataclass_flags(p, SynthConfig))
    p.set_defaults(handler=cmd_gen_corpus)

    p = sub.add_parser("pretrain", help="run MVLM+CPC pre-training")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--corpus", required=True, help="cell-JSONL documents")
    p.add_argument("--vocab", required=True, help="vocabulary file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--cpc", choices=("on", "off"), default="on",
                   help="train the cell-position objective")
    p.add_argument("--resume", help="checkpoint to resume from")
    seen = _add_dataclass_flags(p, ModelConfig, skip=("vocab_size",))
    seen = _add_dataclass_flags(p, TrainConfig, seen=seen)
    _PRETRAIN_FIELDS.update(_add_dataclass_flags(p, PretrainConfig, seen=seen))
    _PRETRAIN_FIELDS.update(seen)
    p.set_defaults(handler=cmd_pretrain)

    p = sub.add_parser("finetune", help="fine-tune on a task dataset")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--task", required=True, choices=TASKS)
    p.add_argument("--docs", required=True, help="cell-JSONL documents")
    p.add_argument("--labels", required=True, help="task-JSONL labels")
    p.add_argument("--init", required=True,
                   help="checkpoint path, or 'none' for random init")
    p.add_argument("--vocab", help="vocabulary file (required with --init none)")
    p.add_argument("--out", required=True, help="output directory")
    seen = _add_dataclass_flags(p, ModelConfig, skip=("vocab_size",))
    _FINETUNE_FIELDS.update(_add_dataclass_flags(p, TrainConfig, seen=seen))
    _FINETUNE_FIELDS.update(seen)
    p.set_defaults(handler=cmd_finetune)

    p = sub.add_parser("ablate", help="run the ablation matrix end to end")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--corpus", required=True, help="cell-JSONL pre-training docs")
    p.add_argument("--vocab", required=True, help="vocabulary file")
    p.add_argument("--form-docs", required=True, help="tagging cell-JSONL")
    p.add_argument("--form-labels", required=True, help="tagging labels JSONL")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--variants", default=",".join(ABLATION_VARIANTS),
                   help="comma list: " + ",".join(ABLATION_VARIANTS))
    p.add_argument("--pretrain-steps", default="1200")
    p.add_argument("--finetune-steps", default="400")
    seen = _add_dataclass_flags(p, ModelConfig,
                                skip=("vocab_size", "layout_mode"))
    seen = _add_dataclass_flags(p, TrainConfig, skip=("steps",), seen=seen)
    _add_dataclass_flags(p, PretrainConfig, seen=seen)
    p.set_defaults(handler=cmd_ablate)

    p = sub.add_parser("grad-check", help="finite-difference gradient oracle")
    p.add_argument("--seed", default="0")
    p.set_defaults(handler=cmd_grad_check)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.handler(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, IngestError, CheckpointError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
