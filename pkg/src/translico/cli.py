"""``translico`` command line: one binary, one subcommand per pipeline stage."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import __version__
from .corpus import build_pairs, read_jsonl, sample_corpus, write_jsonl
from .encoder import Model
from .errors import TranslicoError
from .evaluation import REPORT_SCHEMA, analyze_scripts, centroid_rows, evaluate_pairs
from .romanizer import Romanizer, default_tables, load_rule_tables
from .scripts import ScriptTag
from .synthetic import SyntheticSpec, gen_synthetic
from .tokenizer import VOCAB_SCHEMA, Vocab, train_vocab
from .trainer import CHECKPOINT_SCHEMA, METRICS_HEADER, TrainConfig, run_ablation_grid, train, vocab_texts

log = logging.getLogger("translico")

SCHEMAS = {
    "corpus-jsonl": 1,
    "vocab-json": VOCAB_SCHEMA,
    "checkpoint": CHECKPOINT_SCHEMA,
    "metrics-csv": 1,
    "report-json": REPORT_SCHEMA,
    "centroids-csv": 1,
    "pca-csv": 1,
}


def _romanizer(args) -> Romanizer:
    tables = load_rule_tables(args.rules) if getattr(args, "rules", None) else default_tables()
    return Romanizer(tables, keep_case=getattr(args, "keep_case", False),
                     fallback=getattr(args, "fallback", "drop"))


def _write_json(obj, path: str | None) -> None:
    text = json.dumps(obj, indent=2, ensure_ascii=False) + "\n"
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------- subcommands

def cmd_romanize(args) -> int:
    rom = _romanizer(args)
    for line in sys.stdin:
        end = "\n" if line.endswith("\n") else ""
        sys.stdout.write(rom.romanize(line.rstrip("\n")) + end)
    return 0


def cmd_gen_synth(args) -> int:
    scripts = tuple(ScriptTag.parse(s) for s in args.scripts.split(","))
    spec = SyntheticSpec(args.lexicon_size, args.count, args.min_len, args.max_len, scripts, args.seed)
    train_recs, eval_recs = gen_synthetic(spec, args.eval_count if args.eval_out else 0)
    write_jsonl(args.out, train_recs)
    if args.eval_out:
        write_jsonl(args.eval_out, eval_recs)
    return 0


def cmd_build_corpus(args) -> int:
    records = read_jsonl(args.input)
    if args.fraction < 1.0:
        records = sample_corpus(records, args.fraction, args.seed)
    pairs = build_pairs(records, _romanizer(args), include_latin=not args.no_latin,
                        detect=not args.keep_script)
    write_jsonl(args.out, pairs)
    log.info("wrote %d pairs to %s", len(pairs), args.out)
    return 0


def cmd_train_vocab(args) -> int:
    vocab = train_vocab(vocab_texts(read_jsonl(args.corpus)), args.size, seed=args.seed)
    vocab.save(args.out)
    log.info("vocabulary of %d tokens written to %s", len(vocab), args.out)
    return 0


def _train_config(args) -> TrainConfig:
    cfg = TrainConfig.load(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.tcm_clean_forward:
        changes["tcm_clean_forward"] = True
    if args.threads is not None:
        changes["threads"] = args.threads
    return replace(cfg, **changes) if changes else cfg


def cmd_train(args) -> int:
    cfg = _train_config(args)
    vocab = Vocab.load(args.vocab) if args.vocab else None
    report = train(cfg, args.corpus, args.out, vocab, resume=args.resume)
    last = report.records[-1] if report.records else None
    if last is not None:
        log.info("final losses: %s", dict(zip(METRICS_HEADER, last.row())))
    return 0


def cmd_ablate(args) -> int:
    cfg = _train_config(args)
    vocab = Vocab.load(args.vocab) if args.vocab else None
    report = run_ablation_grid(cfg, args.corpus, args.out, args.eval_pairs, vocab, args.k)
    failed = [c["label"] for c in report["cells"] if c["error"]]
    if failed:
        log.error("cells failed: %s", ", ".join(failed))
        return 1
    return 0


def _load_model(args):
    model, _, _ = Model.load(args.model)
    return model, Vocab.load(args.vocab), read_jsonl(args.pairs)


def cmd_eval_retrieval(args) -> int:
    model, vocab, pairs = _load_model(args)
    ev = evaluate_pairs(model, vocab, pairs, args.k, args.layer, transliterate=args.transliterate,
                        centroid_raw=args.centroid_raw)
    out = ev.to_json()
    out["transliterated"] = args.transliterate
    _write_json(out, args.out)
    return 0


def cmd_analyze_scripts(args) -> int:
    model, vocab, pairs = _load_model(args)
    res = analyze_scripts(model, vocab, pairs, args.layer, normalize=not args.centroid_raw)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if res["centroids"] is not None:
        with open(out / "centroids.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, ["script_a", "script_b", "raw_cosine", "display"], lineterminator="\n")
            w.writeheader()
            w.writerows(centroid_rows(res["centroids"]))
    if res["pca"] is not None:
        with open(out / "pca.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sentence_id", "script", "pc1", "pc2"])
            for p, (a, b) in zip(pairs, res["pca"]):
                w.writerow([p.id, str(p.script), repr(float(a)), repr(float(b))])
    ev = evaluate_pairs(model, vocab, pairs, min(10, len(pairs)), args.layer,
                        centroid_raw=args.centroid_raw)
    _write_json({"schema": REPORT_SCHEMA, "layer": res["layer"], "alignment": ev.alignment,
                 "uniformity": ev.uniformity}, str(out / "alignment.json"))
    return 0


# ---------------------------------------------------------------- parser

class _Version(argparse.Action):
    def __init__(self, option_strings, dest, **kw):
        super().__init__(option_strings, dest, nargs=0, **kw)

    def __call__(self, parser, namespace, values, option_string=None):
        lines = [f"translico {__version__}"] + [f"{k} schema {v}" for k, v in SCHEMAS.items()]
        sys.stdout.write("\n".join(lines) + "\n")
        parser.exit(0)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="translico", description=__doc__)
    p.add_argument("--version", action=_Version, help="print package and output schema versions")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.set_defaults(fn=fn)
        return sp

    def rules(sp):
        sp.add_argument("--rules", help="rule-table file (default: shipped tables)")

    def train_flags(sp):
        sp.add_argument("--config", required=True, help="TrainConfig JSON")
        sp.add_argument("--corpus", required=True, help="pairs JSONL from build-corpus")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--vocab", help="vocabulary JSON (default: train one from the corpus)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--threads", type=int, help="BLAS threads (default from config, 1)")
        sp.add_argument("--tcm-clean-forward", action="store_true",
                        help="pool TCM vectors from an extra unmasked forward pass")

    def model_flags(sp):
        sp.add_argument("--model", required=True, help="checkpoint file")
        sp.add_argument("--vocab", required=True, help="vocabulary JSON")
        sp.add_argument("--pairs", required=True, help="pairs JSONL")
        sp.add_argument("--layer", type=int, help="pooling layer (default: the model's)")
        sp.add_argument("--centroid-raw", action="store_true",
                        help="average raw vectors instead of unit vectors for centroids")
        sp.add_argument("--threads", type=int, default=1)

    sp = add("romanize", cmd_romanize, "romanize standard input line by line")
    rules(sp)
    sp.add_argument("--keep-case", action="store_true")
    sp.add_argument("--fallback", choices=("drop", "escape"), default="drop")

    sp = add("gen-synth", cmd_gen_synth, "generate a cipher-script parallel corpus")
    sp.add_argument("--out", required=True)
    sp.add_argument("--eval-out", help="also write held-out sentences here")
    sp.add_argument("--eval-count", type=int, default=500)
    sp.add_argument("--count", type=int, default=2000)
    sp.add_argument("--lexicon-size", type=int, default=200)
    sp.add_argument("--min-len", type=int, default=4)
    sp.add_argument("--max-len", type=int, default=10)
    sp.add_argument("--scripts", default="ToyA,Latn", help="comma list from ToyA, ToyB, Latn")
    sp.add_argument("--seed", type=int, default=0)

    sp = add("build-corpus", cmd_build_corpus, "sample and pair sentences with their romanization")
    rules(sp)
    sp.add_argument("--input", required=True, help="JSONL records (translit may be null)")
    sp.add_argument("--out", required=True)
    sp.add_argument("--fraction", type=float, default=1.0, help="per language-script sample ratio")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--no-latin", action="store_true", help="drop Latin-script sentences")
    sp.add_argument("--keep-script", action="store_true", help="trust the record's script field")

    sp = add("train-vocab", cmd_train_vocab, "learn a subword vocabulary on both streams")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--size", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)

    train_flags(add("train", cmd_train, "train an encoder"))
    p_train = sub.choices["train"]
    p_train.add_argument("--resume", help="checkpoint to continue from")

    sp = add("ablate", cmd_ablate, "train and evaluate the six ablation cells")
    train_flags(sp)
    sp.add_argument("--eval-pairs", help="held-out pairs JSONL (default: the training corpus)")
    sp.add_argument("--k", type=int, default=10)

    sp = add("eval-retrieval", cmd_eval_retrieval, "top-k cross-script retrieval")
    model_flags(sp)
    sp.add_argument("--k", type=int, default=10)
    sp.add_argument("--transliterate", action="store_true", help="romanize queries before encoding")
    sp.add_argument("--out", help="report path (default: stdout)")

    sp = add("analyze-scripts", cmd_analyze_scripts, "centroid, PCA and alignment outputs")
    model_flags(sp)
    sp.add_argument("--out", required=True, help="output directory")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    threads = getattr(args, "threads", None) or 1
    try:
        with threadpool_limits(limits=threads):
            return args.fn(args)
    except (TranslicoError, OSError, ValueError) as e:
        print(f"translico {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
