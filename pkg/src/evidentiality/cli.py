"""Command-line entry point. One directory per run; the resolved config is echoed at its root.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path
from typing import Optional, Sequence

import torch

from . import __version__
from .config import ConfigError, RunConfig, echo_config, load_config
from .corpus import MalformedRecord, NotFound, Vocabulary, answer_sentence, load_corpus, save_corpus
from .evaluation import build_challenge_set, confidence_curves, evaluate_predictions, write_curves, write_report
from .inference import MODES, predict_all, train_selector, SentenceSelector
from .interpreter import ExtractionStats, evidentiality_recall_precision, extract_all, load_evidence_sets, save_evidence_sets
from .qa_model import Reader, load_checkpoint, save_checkpoint
from .setgen import SetStats, build_single_paragraph_sets, build_training_sets, example_rng
from .synthetic import generate_synthetic
from .trainer import REGULARIZERS, run_curriculum, write_log

logger = logging.getLogger("evidentiality")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3
COMMANDS = ("gen-data", "build-sets", "train", "interpret", "train-selector", "predict", "evaluate",
            "challenge-set", "confidence-curves")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="evidentiality", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML file of key: value settings")
        p.add_argument("--out", help="run directory (default runs/<command>-<config digest>)")
        p.add_argument("--seed", type=int)
        p.add_argument("--corpus", help="corpus directory holding train.jsonl and dev.jsonl")
        p.add_argument("--checkpoint")
        p.add_argument("--selector")
        p.add_argument("--evidence")
        p.add_argument("--challenge")
        p.add_argument("--predictions")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "train":
            p.add_argument("--regularizer", choices=REGULARIZERS)
            p.add_argument("--regime", choices=("multi_hop", "single_paragraph"))
        if name in ("predict", "evaluate"):
            p.add_argument("--mode", choices=MODES)
        p.add_argument("overrides", nargs="*", metavar="key=value")
    return parser


FLAG_KEYS = ("seed", "corpus", "checkpoint", "selector", "evidence", "challenge", "predictions",
             "regularizer", "regime", "mode", "out")


def resolve_config(args: argparse.Namespace) -> RunConfig:
    flags = {k: getattr(args, k) for k in FLAG_KEYS if getattr(args, k, None) is not None}
    overrides = [f"{k}={v}" for k, v in flags.items()] + list(args.overrides)
    return load_config(args.config, overrides)


def run_dir(cfg: RunConfig, command: str) -> Path:
    return Path(cfg.out) if cfg.out else Path("runs") / f"{command}-{cfg.digest()}"


# ---------------------------------------------------------------- inputs


def _need(path_value: str, key: str, what: str = "") -> Path:
    if not path_value:
        raise UsageError(f"missing {key}: set --{key} or {key}=PATH")
    path = Path(path_value) / what if what else Path(path_value)
    if not path.exists():
        raise DataError(f"missing {key} path: {path}")
    return path


def _corpus(cfg: RunConfig):
    root = _need(cfg.corpus, "corpus")
    train = load_corpus(_need(cfg.corpus, "corpus", "train.jsonl"))
    dev = load_corpus(_need(cfg.corpus, "corpus", "dev.jsonl"))
    vocab = Vocabulary.load(root / "vocab.json") if (root / "vocab.json").exists() \
        else Vocabulary.from_examples(train + dev)
    return train, dev, vocab


def _reader(cfg: RunConfig) -> Reader:
    model, vocab, _ = load_checkpoint(_need(cfg.checkpoint, "checkpoint"))
    return Reader(model, vocab, cfg.budget, cfg.max_span_len)


def _selector(cfg: RunConfig) -> Optional[SentenceSelector]:
    if cfg.mode != "selected_evidences":
        return None
    model, vocab, _ = load_checkpoint(_need(cfg.selector, "selector"))
    return SentenceSelector(model, vocab, cfg.budget)


def _sets(cfg: RunConfig, examples, seed_offset: int = 0):
    stats = SetStats()
    seed = cfg.seed + seed_offset
    if cfg.regime == "single_paragraph":
        instances = [i for ex in examples for i in build_single_paragraph_sets(ex, cfg.k_neg, example_rng(seed, ex.qid))]
        for i in instances:
            stats.counts[i.set_tag] += 1
    else:
        instances = build_training_sets(examples, cfg.k_neg, seed, stats=stats)
    return instances, stats


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- commands


def cmd_gen_data(cfg: RunConfig, out: Path) -> None:
    examples = generate_synthetic(cfg.synthetic_config(cfg.n_examples + cfg.n_dev))
    train, dev = examples[:cfg.n_examples], examples[cfg.n_examples:]
    save_corpus(out / "train.jsonl", train)
    save_corpus(out / "dev.jsonl", dev)
    Vocabulary.from_examples(examples).save(out / "vocab.json")
    _write_json(out / "summary.json", {"n_train": len(train), "n_dev": len(dev)})


def cmd_build_sets(cfg: RunConfig, out: Path) -> None:
    from .corpus import write_jsonl

    train, dev, _ = _corpus(cfg)
    summary = {}
    for name, examples, offset in (("train", train, 0), ("dev", dev, 1)):
        instances, stats = _sets(cfg, examples, offset)
        write_jsonl(out / f"{name}_sets.jsonl", (i.to_dict() for i in instances))
        summary[name] = {"counts": dict(stats.counts), "skipped": dict(stats.skipped)}
    _write_json(out / "summary.json", summary)


def cmd_train(cfg: RunConfig, out: Path) -> None:
    torch.set_num_threads(1)
    train, dev, vocab = _corpus(cfg)
    instances, _ = _sets(cfg, train)
    dev_instances, _ = _sets(cfg, dev, 1)
    tcfg = cfg.train_config()
    if cfg.regime == "single_paragraph" and cfg.regularizer != "none":
        raise UsageError("the single_paragraph regime has no evidence sets; use --regularizer none")
    result = run_curriculum(instances, vocab, cfg.encoder_config(len(vocab)), tcfg, out / "checkpoints", dev_instances)
    save_checkpoint(out / "model.pt", result.model, vocab,
                    {"ablation": tcfg.ablation, "regime": cfg.regime, "seed": cfg.seed})
    write_log(out / "train_log.csv", result.log)
    if result.evidence_sets:
        save_evidence_sets(out / "evidence_plus.jsonl", result.evidence_sets)
    _write_json(out / "summary.json", {
        "ablation": tcfg.ablation, "regime": cfg.regime,
        "final_L_total": result.log[-1]["L_total"], "final_dev_L_A": result.log[-1]["dev_L_A"],
        "counts": dict(result.counts), "n_evidence_sets": len(result.evidence_sets),
        "extraction_failures": result.extraction.n_failed,
    })


def cmd_interpret(cfg: RunConfig, out: Path) -> None:
    torch.set_num_threads(1)
    train, dev, _ = _corpus(cfg)
    reader = _reader(cfg)
    instances, _ = _sets(cfg, dev, 1)
    positives = [i for i in instances if i.set_tag == "A+"]
    stats = ExtractionStats()
    sets = extract_all(reader, positives, cfg.train_config().interpreter, stats)
    save_evidence_sets(out / "evidence.jsonl", sets)
    gold = {ex.qid: ex.gold_evidence for ex in dev}
    pr = [evidentiality_recall_precision(es, gold[es.qid]) for es in sets if gold.get(es.qid)]
    _write_json(out / "summary.json", {
        "n_extracted": stats.n_extracted, "n_failed": stats.n_failed,
        "precision": sum(p for p, _ in pr) / len(pr) if pr else None,
        "recall": sum(r for _, r in pr) / len(pr) if pr else None,
        "stopped_by": dict(Counter(es.stopped_by for es in sets)),
    })


def cmd_train_selector(cfg: RunConfig, out: Path) -> None:
    torch.set_num_threads(1)
    train, _, vocab = _corpus(cfg)
    evidence = load_evidence_sets(_need(cfg.evidence, "evidence"))
    instances, _ = _sets(cfg, train)
    counts: Counter = Counter()
    selector = train_selector(instances, evidence, vocab, cfg.encoder_config(len(vocab)), cfg.selector_config(), counts)
    save_checkpoint(out / "selector.pt", selector.model, vocab, {"seed": cfg.seed})
    _write_json(out / "summary.json", {"counts": dict(counts), "n_evidence_sets": len(evidence)})


def cmd_predict(cfg: RunConfig, out: Path) -> None:
    torch.set_num_threads(1)
    _, dev, _ = _corpus(cfg)
    predict_all(_reader(cfg), dev, cfg.mode, _selector(cfg), cfg.k, out / "predictions.jsonl")


def cmd_evaluate(cfg: RunConfig, out: Path) -> None:
    torch.set_num_threads(1)
    _, dev, _ = _corpus(cfg)
    reader = _reader(cfg)
    challenge = None
    if cfg.challenge:
        challenge = set(json.loads(_need(cfg.challenge, "challenge").read_text())["qids"])
    records = predict_all(reader, dev, cfg.mode, _selector(cfg), cfg.k, out / "predictions.jsonl")
    evidence = None
    if cfg.mode == "selected_evidences":
        evidence = {r["qid"]: [tuple(u) for u in r["selected_units"]] for r in records}
    report, rows = evaluate_predictions(records, dev, evidence, challenge)
    write_report(report, rows, out)


def cmd_challenge_set(cfg: RunConfig, out: Path) -> None:
    torch.set_num_threads(1)
    _, dev, _ = _corpus(cfg)
    qids = sorted(build_challenge_set(_reader(cfg), dev))
    _write_json(out / "challenge.json", {"n_dev": len(dev), "n_challenge": len(qids), "qids": qids})


def cmd_confidence_curves(cfg: RunConfig, out: Path) -> None:
    torch.set_num_threads(1)
    _, dev, _ = _corpus(cfg)
    curves = confidence_curves(_reader(cfg), dev)
    try:
        write_curves(curves, out / "curves.csv", out / "curves.png")
    except ImportError:
        write_curves(curves, out / "curves.csv")
    _write_json(out / "summary.json", {"mean_e_plus": curves.mean_e_plus, "mean_e_minus": curves.mean_e_minus,
                                       "gap": curves.gap, "n": len(curves.e_plus)})


HANDLERS = {
    "gen-data": cmd_gen_data, "build-sets": cmd_build_sets, "train": cmd_train, "interpret": cmd_interpret,
    "train-selector": cmd_train_selector, "predict": cmd_predict, "evaluate": cmd_evaluate,
    "challenge-set": cmd_challenge_set, "confidence-curves": cmd_confidence_curves,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        out = run_dir(cfg, args.command)
        echo_config(cfg, out)
        HANDLERS[args.command](cfg, out)
    except (ConfigError, UsageError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, MalformedRecord, NotFound, json.JSONDecodeError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except Exception as err:  # noqa: BLE001 - top-level boundary
        logger.exception("command failed")
        print(f"runtime error: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    print(out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
