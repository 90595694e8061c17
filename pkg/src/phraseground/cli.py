"""Command-line pipeline: gen / pretrain / train / eval / ground / stats / serve.

Every run prints one `RUN {...}` line with its full configuration and seed,
so any result can be reproduced from the log. Failures exit nonzero with a
single `error: ...` line on stderr.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import data as D
from . import scenegen as G
from . import training as TR
from .checkpoint import model_from_checkpoint, save_checkpoint
from .errors import ValidationError
from .evaluation import evaluate, ground_phrase
from .model import (
    GroundingModel,
    ModelConfig,
    build_class_index,
    prepare_query,
    prepare_sample,
)
from .nn import tensor as T
from .nn.rng import Rng


def _log_run(command: str, options: dict) -> None:
    print(f"RUN {D.canonical_json({'command': command, **options})}")


def _prepare_all(samples, scenes, vocab, class_index, cfg):
    return [prepare_sample(s, scenes[s.scene_id], vocab, class_index, cfg) for s in samples]


def _model_config(args, vocab, class_index) -> ModelConfig:
    return ModelConfig(
        vocab_size=len(vocab),
        num_classes=len(class_index),
        dim=args.dim,
        seed=args.seed,
        n_points=args.n_points,
    )


def cmd_gen(args) -> int:
    spec = G.CorpusSpec(
        n_scenes=args.scenes, n_samples=args.samples, seed=args.seed,
        hard_frac=args.hard_frac, view_dep_frac=args.viewdep_frac,
    )
    _log_run("gen", {
        "scenes": args.scenes, "samples": args.samples, "seed": args.seed,
        "hard_frac": args.hard_frac, "viewdep_frac": args.viewdep_frac,
        "out": args.out,
    })
    scenes, samples, splits = G.build_corpus(spec)
    D.save_corpus(args.out, scenes, samples, splits)
    stats = D.dataset_stats(samples)
    print(f"wrote {len(scenes)} scenes, {len(samples)} samples to {args.out} "
          f"(phrases/sentence {stats['phrases_per_sentence']})")
    return 0


def _load_and_prepare(args, vocab_source="train"):
    scenes, train, val = D.load_corpus(args.data)
    vocab = D.build_vocab(train)
    class_index = build_class_index(D.CLASS_NAMES)
    return scenes, train, val, vocab, class_index


def cmd_pretrain(args) -> int:
    _log_run("pretrain", {
        "data": args.data, "out": args.out, "epochs": args.epochs,
        "seed": args.seed, "dim": args.dim, "weak": args.weak,
    })
    scenes, train, val, vocab, class_index = _load_and_prepare(args)
    if args.weak:
        train, misses = TR.make_weak_samples(train, D.CLASS_NAMES)
        print(f"weak mode: {len(train)} samples, {misses} parse misses")
    cfg = _model_config(args, vocab, class_index)
    model = GroundingModel(cfg)
    train_preps = _prepare_all(train, scenes, vocab, class_index, cfg)
    val_preps = _prepare_all(val, scenes, vocab, class_index, cfg)
    tcfg = TR.TrainConfig(epochs=args.epochs, seed=args.seed,
                          batch_size=args.batch_size)
    classes = sorted(class_index)

    def on_best(m, report, epoch):
        save_checkpoint(args.out, m, vocab, classes)

    rows = TR.run_training(model, train_preps, val_preps, tcfg, stage="pretrain",
                           metrics_path=args.out + ".metrics.csv", on_best=on_best)
    save_checkpoint(args.out, model, vocab, classes)
    print(f"pretrained {args.epochs} epochs; final val acc_vg={rows[-1]['acc_vg']:.3f}")
    return 0


def cmd_train(args) -> int:
    _log_run("train", {
        "data": args.data, "out": args.out, "init": args.init,
        "epochs": args.epochs, "pretrain_epochs": args.pretrain_epochs,
        "seed": args.seed, "dim": args.dim,
        "no_poa": args.no_poa, "no_pretrain": args.no_pretrain,
    })
    scenes, train, val, vocab, class_index = _load_and_prepare(args)
    classes = sorted(class_index)
    warm = False
    if args.init:
        model, vocab, classes = model_from_checkpoint(args.init)
        class_index = {name: i for i, name in enumerate(classes)}
        cfg = model.cfg
        warm = True
    else:
        cfg = _model_config(args, vocab, class_index)
        model = GroundingModel(cfg)
    train_preps = _prepare_all(train, scenes, vocab, class_index, cfg)
    val_preps = _prepare_all(val, scenes, vocab, class_index, cfg)
    if not args.init and not args.no_pretrain:
        # The full recipe also optimizes the alignment map while pre-training,
        # so the low-lr fine-tune only needs to polish it.
        pre_cfg = TR.TrainConfig(epochs=args.pretrain_epochs, seed=args.seed,
                                 batch_size=args.batch_size,
                                 pretrain_poa=not args.no_poa)
        TR.run_training(model, train_preps, val_preps, pre_cfg, stage="pretrain")
        warm = True
    stage = "baseline" if args.no_poa else "finetune"
    tcfg = TR.TrainConfig(epochs=args.epochs, seed=args.seed,
                          batch_size=args.batch_size, poa_enabled=not args.no_poa)

    best = {"acc": -1.0}

    def on_best(m, report, epoch):
        best["acc"] = report.acc_vg
        save_checkpoint(args.out, m, vocab, classes)

    rows = TR.run_training(model, train_preps, val_preps, tcfg, stage=stage,
                           warm_start=warm, metrics_path=args.out + ".metrics.csv",
                           on_best=on_best)
    print(f"trained; best val acc_vg={best['acc']:.3f}, "
          f"final={rows[-1]['acc_vg']:.3f}; checkpoint {args.out}")
    return 0


def cmd_eval(args) -> int:
    _log_run("eval", {"data": args.data, "ckpt": args.ckpt, "mode": args.mode,
                      "seed": args.seed})
    model, vocab, classes = model_from_checkpoint(args.ckpt)
    class_index = {name: i for i, name in enumerate(classes)}
    scenes, train, val = D.load_corpus(args.data)
    preps = _prepare_all(val, scenes, vocab, class_index, model.cfg)
    report = evaluate(model, preps, mode=args.mode, rng=Rng(args.seed))
    print(report.to_json() if args.json else report.to_text())
    return 0


def cmd_ground(args) -> int:
    _log_run("ground", {"scene": args.scene, "ckpt": args.ckpt, "query": args.query})
    rows = D.read_jsonl(args.scene)
    if not rows:
        raise ValidationError(f"no scene found in {args.scene}")
    scene = D.scene_from_dict(rows[0], path="scenes[0]")
    model, vocab, classes = model_from_checkpoint(args.ckpt)
    tokens = D.tokenize(args.query)
    prep = prepare_query(tokens, scene, vocab, model.cfg)
    with T.no_grad():
        out = model.forward(prep)
    target = int(np.argmax(out.scores.data))
    print(f"target: id={target} label={scene.by_id(target).label}")
    for span in D.parse_all_phrases(tokens, classes):
        obj = ground_phrase(out.poa.data, range(span.start, span.end))
        phrase = " ".join(tokens[span.start:span.end])
        print(f"phrase: '{phrase}' -> id={obj} label={scene.by_id(obj).label}")
    if args.emit_poa:
        with open(args.emit_poa, "w", encoding="utf-8") as fh:
            for row in out.poa.data:
                fh.write(",".join(f"{v:.4f}" for v in row) + "\n")
        print(f"wrote alignment map to {args.emit_poa}")
    return 0


def cmd_stats(args) -> int:
    _log_run("stats", {"data": args.data})
    scenes, train, val = D.load_corpus(args.data)
    print(f"{'split':<8}{'sentences':>12}{'phrases':>12}{'per-sentence':>14}{'avg-len':>10}")
    for name, block in (("train", train), ("val", val)):
        s = D.dataset_stats(block)
        print(f"{name:<8}{s['num_sentences']:>12}{s['num_phrases']:>12}"
              f"{s['phrases_per_sentence']:>14.2f}{s['avg_phrase_len']:>10.2f}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    _log_run("serve", {"data": args.data, "store": args.store, "port": args.port})
    app = create_app(args.data, args.store)
    ui_dir = args.ui_dir or os.path.join(os.getcwd(), "frontend", "dist")
    if os.path.isdir(ui_dir):
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")
        print(f"serving annotation UI from {ui_dir} at /ui")
    uvicorn.run(app, host="127.0.0.1", port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phraseground")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    p.add_argument("--scenes", type=int, required=True)
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hard-frac", dest="hard_frac", type=float, default=0.5)
    p.add_argument("--viewdep-frac", dest="viewdep_frac", type=float, default=0.5)
    p.set_defaults(func=cmd_gen)

    def add_train_common(q):
        q.add_argument("--data", required=True)
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--dim", type=int, default=128)
        q.add_argument("--n-points", dest="n_points", type=int, default=64)
        q.add_argument("--batch-size", dest="batch_size", type=int, default=16)

    p = sub.add_parser("pretrain", help="phrase-specific pre-training")
    add_train_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--weak", action="store_true",
                   help="use only rule-parsed target phrases")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="train (optionally pretraining first)")
    add_train_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--init", default=None, help="warm-start checkpoint")
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--pretrain-epochs", dest="pretrain_epochs", type=int, default=40)
    p.add_argument("--no-poa", dest="no_poa", action="store_true")
    p.add_argument("--no-pretrain", dest="no_pretrain", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the val split")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--mode", choices=["full", "weak", "randselect"], default="full")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ground", help="ground a free-text query in one scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--emit-poa", dest="emit_poa", default=None)
    p.set_defaults(func=cmd_ground)

    p = sub.add_parser("stats", help="corpus statistics")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("serve", help="run the annotation backend")
    p.add_argument("--data", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--ui-dir", dest="ui_dir", default=None)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single-line machine-parsable exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
