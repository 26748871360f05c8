"""Command-line entry point: synth, embed, train, eval, ablate, predict.

Defaults mirror the reference hyperparameters (vocabulary 2000, batch size
32, dropout 0.2, learning rate 0.0001, loss weights 1:1:1). Every stochastic
component keys off --seed through named substreams, so identical invocations
produce byte-identical outputs. Exit codes: 0 success, 1 validation error,
2 runtime abort (e.g. divergence).
"""

import argparse
import json
import sys

import numpy as np

from . import corpus as corpus_mod
from . import text as text_mod
from .corpus import EMOTIONS, GENDERS, SynthConfig
from .errors import DivergenceError, NpdError
from .evaluation import ablate, evaluate, format_report_table
from .model import ModelVariant, load_checkpoint, save_checkpoint
from .training import ModelDims, TrainingConfig, train, write_log

VARIANT_NAMES = [v.value for v in ModelVariant]


def _add_seed(p):
    p.add_argument("--seed", type=int, default=0, help="master seed for all substreams")


def _add_embed_args(p):
    p.add_argument("--vocab-size", type=int, default=2000)
    p.add_argument("--embed-dim", type=int, default=100)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--embed-epochs", type=int, default=5)
    p.add_argument("--embed-lr", type=float, default=0.025)
    p.add_argument("--tokenizer", choices=("whitespace", "char"), default="whitespace")


def _add_train_args(p):
    p.add_argument("--lr", type=float, default=0.0001, help="learning rate mu")
    p.add_argument("--lambdas", default="1,1,1",
                   help="comma-separated loss weights lambda1,lambda2,lambda3")
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--grad-clip", type=float, default=5.0)
    p.add_argument("--hidden-dim", type=int, default=128)
    p.add_argument("--attention-dim", type=int, default=None)
    p.add_argument("--head-hidden-dim", type=int, default=None)
    p.add_argument("--lambda-rev", type=float, default=1.0)
    p.add_argument("--finetune-embeddings", action="store_true")
    p.add_argument("--train-frac", type=float, default=0.7)


def _parse_lambdas(raw):
    parts = [float(x) for x in raw.split(",")]
    if len(parts) != 3:
        raise NpdError(f"--lambdas needs 3 comma-separated values, got {raw!r}")
    return parts


def _training_config(args):
    l1, l2_, l3 = _parse_lambdas(args.lambdas)
    cfg = TrainingConfig(mu=args.lr, lambda1=l1, lambda2=l2_, lambda3=l3,
                         l2_lambda=args.l2, batch_size=args.batch_size,
                         dropout_rate=args.dropout, max_epochs=args.epochs,
                         patience=args.patience, grad_clip=args.grad_clip,
                         seed=args.seed)
    cfg.validate()
    return cfg


def _model_dims(args):
    return ModelDims(hidden_dim=args.hidden_dim, attention_dim=args.attention_dim,
                     head_hidden_dim=args.head_hidden_dim, lambda_rev=args.lambda_rev,
                     finetune_embeddings=args.finetune_embeddings)


def _prepare_splits(posts, vocab, args):
    splits = corpus_mod.split(posts, train_frac=args.train_frac, seed=args.seed)
    return tuple(corpus_mod.encode(part, vocab, args.tokenizer) for part in splits)


def _check_vocab_hash(manifest, vocab, what):
    if manifest.get("vocab_hash") and manifest["vocab_hash"] != vocab.content_hash():
        raise NpdError(f"{what}: embedding vocabulary hash {vocab.content_hash()} does "
                       f"not match checkpoint vocab hash {manifest['vocab_hash']}")


def cmd_synth(args) -> int:
    if args.config:
        cfg = SynthConfig.from_json(args.config)
    elif args.preset == "null":
        cfg = SynthConfig.null_signal()
    else:
        cfg = SynthConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    posts = corpus_mod.synthesize(cfg)
    corpus_mod.save(args.out, posts, m=cfg.m_locations)
    print(f"wrote {len(posts)} posts to {args.out}")
    return 0


def cmd_embed(args) -> int:
    posts, _ = corpus_mod.load_with_meta(args.corpus)
    token_lists = [text_mod.tokenize(p.text, args.tokenizer) for p in posts]
    vocab = text_mod.build_vocab(token_lists, args.vocab_size)
    encoded = [vocab.encode(toks) for toks in token_lists if toks]
    cfg = text_mod.SkipGramConfig(embed_dim=args.embed_dim, window=args.window,
                                  negatives_per_positive=args.negatives,
                                  epochs=args.embed_epochs, learning_rate=args.embed_lr,
                                  seed=args.seed)
    table = text_mod.train_skipgram(encoded, len(vocab), cfg)
    text_mod.save_embeddings(args.out, vocab, table)
    print(f"wrote {table.vocab_size} x {table.embed_dim} embeddings to {args.out}")
    return 0


def cmd_train(args) -> int:
    posts, m = corpus_mod.load_with_meta(args.corpus)
    vocab, table = text_mod.load_embeddings(args.embeddings)
    train_posts, dev_posts, _ = _prepare_splits(posts, vocab, args)
    cfg = _training_config(args)
    extra = {"split_seed": args.seed, "train_frac": args.train_frac,
             "corpus_size": len(posts)}
    result = train(train_posts, dev_posts, args.variant, cfg, table.matrix, m,
                   dims=_model_dims(args), vocab_hash=vocab.content_hash(),
                   tokenizer_mode=args.tokenizer, extra_manifest=extra)
    save_checkpoint(args.out, result.model)
    if args.log:
        write_log(args.log, result.log)
    best = f"best dev F1 {result.best_dev_f1:.4f} at epoch {result.best_epoch}" \
        if result.best_epoch >= 0 else "no dev evaluation"
    print(f"trained {args.variant} for {len(result.log)} epochs ({best}); "
          f"checkpoint at {args.out}")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.model)
    if args.variant and args.variant != model.variant.value:
        raise NpdError(f"requested variant {args.variant} but checkpoint holds "
                       f"{model.variant.value}")
    posts, _ = corpus_mod.load_with_meta(args.corpus)
    vocab, _ = text_mod.load_embeddings(args.embeddings)
    _check_vocab_hash(model.manifest, vocab, "eval")
    split_seed = int(model.manifest.get("split_seed", 0))
    train_frac = float(model.manifest.get("train_frac", 0.7))
    parts = corpus_mod.split(posts, train_frac=train_frac, seed=split_seed)
    chosen = {"train": 0, "dev": 1, "test": 2}[args.split]
    encoded = corpus_mod.encode(parts[chosen], vocab, model.manifest["tokenizer_mode"])
    report = evaluate(model, encoded)
    table = format_report_table([report], seed_means=False)
    sys.stdout.write(table)
    if report.gender_accuracy is not None:
        print(f"gender accuracy\t{report.gender_accuracy:.6f}")
    if report.location_accuracy is not None:
        print(f"location accuracy\t{report.location_accuracy:.6f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(table)
    return 0


def cmd_ablate(args) -> int:
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    for v in variants:
        if v not in VARIANT_NAMES:
            raise NpdError(f"unknown variant {v!r}; choose from {','.join(VARIANT_NAMES)}")
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    posts, m = corpus_mod.load_with_meta(args.corpus)
    token_lists = [text_mod.tokenize(p.text, args.tokenizer) for p in posts]
    vocab = text_mod.build_vocab(token_lists, args.vocab_size)
    sg_cfg = text_mod.SkipGramConfig(embed_dim=args.embed_dim, window=args.window,
                                     negatives_per_positive=args.negatives,
                                     epochs=args.embed_epochs, learning_rate=args.embed_lr,
                                     seed=args.seed)
    table = text_mod.train_skipgram([vocab.encode(t) for t in token_lists if t],
                                    len(vocab), sg_cfg)
    splits = _prepare_splits(posts, vocab, args)
    cfg = _training_config(args)
    reports = ablate(splits, variants, seeds, cfg, table.matrix, m,
                     dims=_model_dims(args), vocab_hash=vocab.content_hash(),
                     tokenizer_mode=args.tokenizer, jobs=args.jobs)
    out = format_report_table(reports)
    sys.stdout.write(out)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(out)
    return 0


def cmd_predict(args) -> int:
    model = load_checkpoint(args.model)
    vocab, _ = text_mod.load_embeddings(args.embeddings)
    _check_vocab_hash(model.manifest, vocab, "predict")
    mode = model.manifest["tokenizer_mode"]
    for line in sys.stdin:
        text = line.strip()
        if not text:
            continue
        tokens = text_mod.tokenize(text, mode)
        if not tokens:
            print(json.dumps({"error": "post tokenizes to an empty sequence"}))
            continue
        post = corpus_mod.TokenizedPost(ids=vocab.encode(tokens),
                                        emotion_bits=np.zeros(5, dtype=np.int64),
                                        gender_bit=0, location=0)
        fwd = model.forward([post], train_mode=False)
        present = {EMOTIONS[j]: float(fwd.emotion_probs[j].value[0, 1])
                   for j in range(len(EMOTIONS))}
        rec = {
            "tokens": tokens,
            "emotion_probabilities": present,
            "predicted_emotions": [e for e, p in present.items() if p > 0.5],
        }
        if fwd.gender_prob is not None:
            p_male = float(fwd.gender_prob.value[0, 0])
            rec["gender"] = {"male_probability": p_male,
                             "predicted": GENDERS[int(p_male > 0.5)]}
        if fwd.location_probs is not None:
            probs = fwd.location_probs.value[0]
            rec["location"] = {"predicted": int(probs.argmax()),
                               "probabilities": [float(x) for x in probs]}
        if fwd.attention:
            rec["attention"] = {name: [float(x) for x in w.value[0, : len(tokens)]]
                                for name, w in fwd.attention.items()}
        print(json.dumps(rec))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="npd",
        description="Adversarial multi-label emotion detection toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic planted-correlation corpus")
    p.add_argument("--config", help="SynthConfig JSON file")
    p.add_argument("--preset", choices=("default", "null"), default="default",
                   help="'null' removes all attribute signal from the text")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None,
                   help="override the config's seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("embed", help="pretrain skip-gram embeddings over a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    _add_embed_args(p)
    _add_seed(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train", help="train one model variant")
    p.add_argument("--corpus", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--variant", required=True, choices=VARIANT_NAMES)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="per-epoch TSV training log path")
    p.add_argument("--tokenizer", choices=("whitespace", "char"), default="whitespace")
    _add_train_args(p)
    _add_seed(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus split")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--split", choices=("train", "dev", "test"), default="test")
    p.add_argument("--variant", choices=VARIANT_NAMES,
                   help="assert the checkpoint holds this variant")
    p.add_argument("--out", help="also write the report table here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the variant x seed ablation grid")
    p.add_argument("--corpus", required=True)
    p.add_argument("--variants", required=True,
                   help=f"comma-separated subset of {','.join(VARIANT_NAMES)}")
    p.add_argument("--seeds", required=True, help="comma-separated integer seeds")
    p.add_argument("--out", help="also write the report table here")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    _add_embed_args(p)
    _add_train_args(p)
    _add_seed(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("predict", help="read posts from stdin, print predictions")
    p.add_argument("--model", required=True)
    p.add_argument("--embeddings", required=True)
    p.set_defaults(func=cmd_predict)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc.filename}", file=sys.stderr)
        return 1
    except NpdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
