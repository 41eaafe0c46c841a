"""
Command-line entry point: python -m xfer <command>
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .augment import augment_dataset
from .checkpoint import diff_checkpoints, load_checkpoint, save_checkpoint
from .config import Config
from .data import load_dataset, save_dataset
from .embeddings import load_embeddings, save_embeddings, train_sgns
from .harness import LanguageSuite, load_cell, load_grid, run_grid, size_sweep
from .model import init_model
from .pretraining import OBJECTIVES, pretrain
from .run_log import RunLog
from .seeding import derive_rng
from .synthetic import ETHIOPIC, GREEK, LATIN, SyntheticLangSpec, generate_language
from .tokenizer import encode, load_vocab, save_vocab, train_vocab
from .transfer import PRESETS, FreezePlan, fine_tune, swap_embeddings

logger = logging.getLogger(__name__)

ALPHABETS = {"latin": LATIN, "ethiopic": ETHIOPIC, "greek": GREEK}


def _read_lines(path: str) -> List[str]:
    with open(path, "r", encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f]


def _read_parallel(path: str) -> List[List[str]]:
    pairs = []
    for line in _read_lines(path):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"Parallel lines need exactly one tab: {line!r}")
        pairs.append(parts)
    return pairs


def cmd_train_tokenizer(args, config: Config) -> int:
    vocab = train_vocab(_read_lines(args.corpus), args.vocab_size or config.get_vocab_sizes()["vocab_size"], args.seed)
    save_vocab(vocab, args.out)
    return 0


def cmd_train_embeddings(args, config: Config) -> int:
    vocab = load_vocab(args.vocab)
    corpus = [encode(vocab, line, add_cls_sep=False).ids for line in _read_lines(args.corpus)]
    cfg = config.get_sgns_config(seed=args.seed)
    if args.epochs is not None:
        cfg.epochs = args.epochs
    dim = args.dim or config.section("model").get("d_model", 64)
    save_embeddings(train_sgns(corpus, vocab, dim, cfg), args.out)
    return 0


def cmd_pretrain(args, config: Config) -> int:
    vocab = load_vocab(args.vocab)
    model_cfg = config.get_model_config(len(vocab))
    params = init_model(model_cfg, args.seed, "random")
    params = params.replace(params.tensors, vocab_hash=vocab.hash)
    cfg = config.get_pretrain_config()
    if args.steps is not None:
        cfg.steps = args.steps
    corpus = [encode(vocab, line, max_len=model_cfg.max_seq_len).ids for line in _read_lines(args.corpus)]
    parallel = None
    if args.parallel:
        parallel = [(encode(vocab, src, add_cls_sep=False).ids, encode(vocab, tgt, add_cls_sep=False).ids)
                    for src, tgt in _read_parallel(args.parallel)]
    params, history = pretrain(params, corpus, args.objective, cfg, args.seed, parallel=parallel)
    save_checkpoint(params, args.out)
    if history:
        print(f"{args.objective} loss {history[0]:.4f} -> {history[-1]:.4f} over {len(history)} steps")
    return 0


def cmd_transfer(args, config: Config) -> int:
    params = load_checkpoint(args.checkpoint)
    swapped = swap_embeddings(params, load_vocab(args.vocab), load_embeddings(args.embeddings), args.seed)
    save_checkpoint(swapped, args.out)
    print(f"Changed groups: {', '.join(sorted(diff_checkpoints(params, swapped)))}")
    return 0


def cmd_finetune(args, config: Config) -> int:
    params = load_checkpoint(args.checkpoint)
    vocab = load_vocab(args.vocab)
    if params.vocab_hash != vocab.hash:
        raise ValueError("Checkpoint is bound to a different vocabulary (hash mismatch)")
    cfg = config.get_finetune_config(seed=args.seed)
    if args.lr is not None:
        cfg.lr = args.lr
    if args.epochs is not None:
        cfg.epochs = args.epochs
    plan = FreezePlan.preset(args.freeze, params)
    dev = load_dataset(args.dev) if args.dev else []
    params, history = fine_tune(params, plan, load_dataset(args.train), dev, cfg, vocab)
    save_checkpoint(params, args.out)
    if args.report:
        Path(args.report).parent.mkdir(parents=True, exist_ok=True)
        with open(args.report, "w", encoding="utf-8") as f:
            json.dump({"freeze": args.freeze, "seed": args.seed, "lr": cfg.lr, "epochs": cfg.epochs,
                       "history": history, "dev_f1": history[-1]["dev_f1"] if history else None},
                      f, indent=2, sort_keys=True)
    return 0


def cmd_augment(args, config: Config) -> int:
    vocab = load_vocab(args.vocab)
    cfg = config.get_augment_config()
    cfg.copies_per_example = args.copies
    if args.replace_prob is not None:
        cfg.replace_prob = args.replace_prob
    if args.ops:
        cfg.ops_enabled = tuple(args.ops.split(","))
    out = augment_dataset(load_dataset(args.input), load_embeddings(args.embeddings), vocab, cfg,
                          derive_rng(args.seed, "augment"))
    save_dataset(out, args.out)
    return 0


def _run_log(args) -> RunLog:
    return RunLog(str(Path(args.out) / "run_log.json"))


def cmd_experiment(args, config: Config) -> int:
    settings = config.get_harness_settings()
    if args.workers is not None:
        settings.workers = args.workers
    report = run_grid(load_grid(args.grid), LanguageSuite.build(settings), args.out, settings, _run_log(args))
    for cell in report.cells:
        print(f"{cell.cell_id}: {cell.status} mean F1 {cell.mean_f1}")
    return 0 if report.status != "error" else 1


def cmd_size_sweep(args, config: Config) -> int:
    settings = config.get_harness_settings()
    if args.workers is not None:
        settings.workers = args.workers
    sizes = [int(s) for s in args.sizes.split(",") if s]
    report = size_sweep(load_cell(args.cell), sizes, list(range(args.seeds)), None, args.out, settings,
                        _run_log(args))
    for cell in report.cells:
        print(f"{cell.cell_id}: {cell.status} mean F1 {cell.mean_f1}")
    return 0 if report.status != "error" else 1


def cmd_generate_language(args, config: Config) -> int:
    alphabet = ALPHABETS[args.alphabet]
    spec = SyntheticLangSpec(lexicon_size=args.lexicon_size, shared_grammar_seed=args.grammar_seed,
                             lexicon_seed=args.lexicon_seed, sentiment_lexicon_frac=args.sentiment_frac,
                             token_alphabet=alphabet, corpus_size=args.corpus_size, dataset_size=args.dataset_size)
    sibling = None
    if args.sibling_seed is not None:
        sibling = SyntheticLangSpec(lexicon_size=args.lexicon_size, shared_grammar_seed=args.grammar_seed,
                                    lexicon_seed=args.sibling_seed, sentiment_lexicon_frac=args.sentiment_frac,
                                    token_alphabet=ALPHABETS[args.sibling_alphabet or args.alphabet])
    language = generate_language(spec, sibling)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "corpus.txt").write_text("\n".join(language.corpus) + "\n", encoding="utf-8")
    save_dataset(language.dataset, str(out / "dataset.jsonl"))
    if language.parallel:
        (out / "parallel.tsv").write_text("\n".join(f"{a}\t{b}" for a, b in language.parallel) + "\n",
                                          encoding="utf-8")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xfer", description="Lexical transfer of small transformer encoders")
    parser.add_argument("--config", default=None, help="YAML config (default: $XFER_CONFIG or config/config.yaml)")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-tokenizer", help="Train a subword vocabulary")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab-size", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_tokenizer)

    p = sub.add_parser("train-embeddings", help="Train skip-gram token embeddings")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_embeddings)

    p = sub.add_parser("pretrain", help="Pre-train a source model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--objective", choices=OBJECTIVES, default="plm")
    p.add_argument("--parallel", default=None, help="Tab-separated parallel pairs (tlm)")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("transfer", help="Swap in target-language embeddings")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("finetune", help="Fine-tune the classifier")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--dev", default=None)
    p.add_argument("--freeze", choices=PRESETS, default="token_embeddings")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("augment", help="Augment a labeled dataset")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--copies", type=int, default=1)
    p.add_argument("--replace-prob", type=float, default=None)
    p.add_argument("--ops", default=None, help="Comma-separated operations")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("experiment", help="Run an ablation grid")
    p.add_argument("--grid", required=True)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("size-sweep", help="Sweep training-set sizes for one cell")
    p.add_argument("--cell", required=True)
    p.add_argument("--sizes", required=True, help="Comma-separated ascending sizes")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_size_sweep)

    p = sub.add_parser("generate-language", help="Write a synthetic language")
    p.add_argument("--lexicon-size", type=int, default=60)
    p.add_argument("--grammar-seed", type=int, default=0)
    p.add_argument("--lexicon-seed", type=int, default=1)
    p.add_argument("--sentiment-frac", type=float, default=0.2)
    p.add_argument("--alphabet", choices=sorted(ALPHABETS), default="latin")
    p.add_argument("--corpus-size", type=int, default=2000)
    p.add_argument("--dataset-size", type=int, default=1000)
    p.add_argument("--sibling-seed", type=int, default=None)
    p.add_argument("--sibling-alphabet", choices=sorted(ALPHABETS), default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_generate_language)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    config = Config(args.config)
    try:
        return args.func(args, config)
    except (ValueError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
