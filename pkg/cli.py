"""
Command-line entry point for the entity-correction pipeline.

    python cli.py ingest
    python cli.py pretrain-kg
    python cli.py gen-data
    python cli.py mine-negatives
    python cli.py train-l1
    python cli.py build-index
    python cli.py train-l2
    python cli.py evaluate
    python cli.py sweep-theta
    python cli.py rewrite --theta 5 "play bad boy dance by lady gaga"

Every subcommand takes --config PATH, --set section.key=value and --seed N.
"""

import argparse
import json
import logging
import random
import sys
from pathlib import Path
from typing import Optional, Sequence

import torch

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent))

from ai.evaluation import (
    compare_reports,
    format_table,
    outcome_from,
    read_outcomes,
    report_records,
    subset_report,
    summarize,
    sweep_theta,
    write_outcomes,
    write_sweep_html,
)
from ai.kgpretrain import mean_reciprocal_rank, pretrain
from ai.nncore import seed_everything
from ai.pipeline import NluHypothesis
from ai.rerank import predict_span, train_l2
from ai.retrieval import build_index, recall_at_k, top_k, train_l1
from ai.synthdata import (
    SynthCounts,
    generate,
    index_surfaces_of,
    load_templates,
    mine_hard_negatives,
    read_negatives,
    read_samples,
    tag_splits,
    to_l1_samples,
    to_l2_samples,
    vocab_texts,
    write_negatives,
    write_samples,
    write_synthetic_kg,
)
from ai.textenc import Vocab
from ai.workspace import Workspace
from utils.config import RunConfig, load_config
from utils.errors import ConfigError, RewriteError
from utils.kgstore import filter_index_entities, ingest_files, save_graph
from utils.logging_setup import configure_logging
from utils.storage import RunTimer, atomic_write_text, canonical_json, file_hash, save_json, write_manifest

logger = logging.getLogger("cli")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

SAMPLE_SETS = ("l1_train", "l2_train", "friction_test", "clean_test")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ============ Subcommands ============

def cmd_ingest(ws: Workspace, args) -> int:
    cfg = ws.cfg
    out = Path(args.out) / "kg.json" if args.out else ws.store
    timer = RunTimer("ingest")
    if cfg.kg.synthetic_entities and not (args.entities or args.triples):
        entities, triples = out.parent / "entities.tsv", out.parent / "triples.tsv"
        write_synthetic_kg(entities, triples, cfg.kg.synthetic_entities, cfg.seed)
    else:
        entities = Path(args.entities or cfg.paths.entities)
        triples = Path(args.triples or cfg.paths.triples)
    kg = ingest_files(entities, triples)
    save_graph(kg, out)
    entries = filter_index_entities(kg)
    logger.info("index keeps %d of %d surface forms", len(entries), len(kg.surfaces()))
    write_manifest(ws.manifests, timer, ws.shared_hash, [entities, triples], [out],
                   dict(kg.report.as_dict(), index_surfaces=len(entries)))
    return EXIT_OK


def cmd_pretrain_kg(ws: Workspace, args) -> int:
    cfg = ws.cfg
    timer = RunTimer("pretrain-kg")
    kg = ws.kg()
    table, report = pretrain(kg, cfg.kg.dim, cfg.kg.epochs, cfg.kg.margin, cfg.kg.lr, cfg.kg.batch_size, cfg.seed)
    mrr = mean_reciprocal_rank(table, kg.triples[:500], seed=cfg.seed)
    logger.info("pretrain-kg: training-triple MRR %.4f", mrr)
    meta = ws.metadata("kg-embeddings")
    meta["config_hash"] = ws.shared_hash
    table.save(ws.kg_table, meta)
    write_manifest(ws.manifests, timer, ws.shared_hash, [ws.store], [ws.kg_table], dict(report.as_dict(), mrr=mrr))
    return EXIT_OK


def cmd_gen_data(ws: Workspace, args) -> int:
    cfg = ws.cfg
    timer = RunTimer("gen-data")
    kg = ws.kg()
    templates = load_templates(Path(cfg.paths.templates))
    d = cfg.data
    counts = SynthCounts(d.l2_train, d.clean_fraction, d.l1_train, d.friction_test, d.clean_test,
                         d.zero_shot_fraction, d.max_edit, d.few_shot_fraction)
    sets = generate(kg, index_surfaces_of(kg), templates, counts, random.Random(cfg.seed))
    sets.friction_test = tag_splits(sets.friction_test, sets.l2_train, kg)
    sets.clean_test = tag_splits(sets.clean_test, sets.l2_train, kg)

    outputs = []
    for name in SAMPLE_SETS:
        path = ws.samples(name)
        write_samples(path, getattr(sets, name))
        outputs.append(path)

    vocab = Vocab.build(vocab_texts(kg, sets.l2_train), cfg.text.min_count, cfg.text.trigram_buckets)
    vocab.save(ws.vocab_file)
    outputs.append(ws.vocab_file)
    logger.info("vocabulary: %d tokens", len(vocab))
    write_manifest(ws.manifests, timer, ws.shared_hash, [ws.store, Path(cfg.paths.templates)], outputs,
                   {name: len(getattr(sets, name)) for name in SAMPLE_SETS})
    return EXIT_OK


def _load_samples(ws: Workspace, name: str):
    return read_samples(ws.require(ws.samples(name), "gen-data"))


def cmd_mine_negatives(ws: Workspace, args) -> int:
    """Train the KG-free retriever, index with it, then mine L1 and L2 negatives."""
    cfg = ws.cfg
    timer = RunTimer("mine-negatives")
    kg = ws.kg()
    l1_samples = _load_samples(ws, "l1_train")
    l2_samples = _load_samples(ws, "l2_train")
    entries = filter_index_entities(kg)

    miner = ws.new_bi_encoder("no_kg")
    report = train_l1(miner, to_l1_samples(l1_samples, [[] for _ in l1_samples], 0), [e.surface for e in entries],
                      cfg.l1.batch_size, cfg.data.miner_epochs, cfg.l1.lr, cfg.seed)
    ws.save_model(miner, ws.miner, "miner", shared=True)
    miner = ws.miner_model()
    index = build_index(miner, entries, metadata={"checkpoint_hash": file_hash(ws.miner)})
    index.save(ws.miner_index)

    k = max(cfg.data.mining_k, cfg.l2.hard_negatives + 1)
    l1_negs, l1_report = mine_hard_negatives(miner, index, l1_samples, cfg.l1.hard_negatives, k, cfg.seed)
    l2_negs, l2_report = mine_hard_negatives(miner, index, l2_samples, cfg.l2.hard_negatives, k, cfg.seed + 1)
    write_negatives(ws.negatives("l1"), l1_negs)
    write_negatives(ws.negatives("l2"), l2_negs)
    write_manifest(ws.manifests, timer, ws.shared_hash, [ws.samples("l1_train"), ws.samples("l2_train")],
                   [ws.miner, ws.miner_index, ws.negatives("l1"), ws.negatives("l2")],
                   {"miner": report.as_dict(), "l1": l1_report.as_dict(), "l2": l2_report.as_dict()})
    return EXIT_OK


def cmd_train_l1(ws: Workspace, args) -> int:
    cfg = ws.cfg
    timer = RunTimer(f"train-l1-{ws.variant}")
    samples = _load_samples(ws, "l1_train")
    negatives = read_negatives(ws.require(ws.negatives("l1"), "mine-negatives"))
    entries = filter_index_entities(ws.kg())
    model = ws.new_bi_encoder()
    report = train_l1(model, to_l1_samples(samples, negatives, cfg.l1.hard_negatives), [e.surface for e in entries],
                      cfg.l1.batch_size, cfg.l1.epochs, cfg.l1.lr, cfg.seed)
    ws.save_model(model, ws.l1(), "l1")
    write_manifest(ws.manifests, timer, ws.config_hash, [ws.samples("l1_train"), ws.negatives("l1")], [ws.l1()],
                   report.as_dict())
    return EXIT_OK


def cmd_build_index(ws: Workspace, args) -> int:
    timer = RunTimer(f"build-index-{ws.variant}")
    model = ws.bi_encoder()
    index = build_index(model, filter_index_entities(ws.kg()),
                        metadata={"checkpoint_hash": file_hash(ws.l1()), "config_hash": ws.config_hash,
                                  "variant": ws.variant})
    index.save(ws.index())
    friction = _load_samples(ws, "friction_test")
    recall = recall_at_k(index, model, to_l1_samples(friction, [[] for _ in friction], 0), ws.cfg.l1.k)
    logger.info("build-index: friction recall@%d %.4f", ws.cfg.l1.k, recall)
    write_manifest(ws.manifests, timer, ws.config_hash, [ws.l1(), ws.store], [ws.index()],
                   {"rows": len(index), "recall_at_k": recall})
    return EXIT_OK


def cmd_train_l2(ws: Workspace, args) -> int:
    cfg = ws.cfg
    timer = RunTimer(f"train-l2-{ws.variant}")
    samples = _load_samples(ws, "l2_train")
    negatives = read_negatives(ws.require(ws.negatives("l2"), "mine-negatives"))
    model = ws.new_cross_encoder()
    report = train_l2(model, to_l2_samples(samples, negatives, cfg.l2.hard_negatives), cfg.l2.batch_size,
                      cfg.l2.epochs, cfg.l2.lr, cfg.seed, cfg.l2.lambda_rank, cfg.l2.lambda_span)
    ws.save_model(model, ws.l2(), "l2")
    write_manifest(ws.manifests, timer, ws.config_hash, [ws.samples("l2_train"), ws.negatives("l2")], [ws.l2()],
                   report.as_dict())
    return EXIT_OK


def cmd_evaluate(ws: Workspace, args) -> int:
    cfg = ws.cfg
    timer = RunTimer(f"evaluate-{ws.variant}")
    rewriter = ws.rewriter()
    friction = _load_samples(ws, "friction_test")
    clean = _load_samples(ws, "clean_test")
    theta = cfg.eval.theta if args.theta is None else args.theta

    def run(samples):
        return [outcome_from(rewriter.rewrite(s.source, theta, s.hypothesis, cfg.eval.always_trigger), s)
                for s in samples]

    friction_outcomes, clean_outcomes = run(friction), run(clean)
    outcomes_path = ws.report(f"outcomes-{ws.variant}.jsonl")
    write_outcomes(outcomes_path, friction_outcomes)

    subsets = subset_report(friction_outcomes, f"friction-{ws.variant}")
    reports = list(subsets.values()) + [summarize(clean_outcomes, f"clean-{ws.variant}", clean=True)]
    lines = [f"variant={ws.variant} theta={theta:g} always_trigger={cfg.eval.always_trigger}",
             format_table(reports), ""] + report_records(reports)

    for other in args.compare or []:
        other_path = ws.report(f"outcomes-{other}.jsonl")
        ws.require(other_path, f"evaluate with --set model.variant={other}")
        deltas = compare_reports(subsets, subset_report(read_outcomes(other_path), f"friction-{other}"))
        for subset, row in deltas.items():
            fields = " ".join(f"{k}={'-' if v is None else f'{v:+.4f}'}" for k, v in row.items())
            lines.append(f"compare={other}-{ws.variant} subset={subset} {fields}")

    text = "\n".join(lines) + "\n"
    report_path = ws.report(f"eval-{ws.variant}.txt")
    atomic_write_text(report_path, text)
    print(text, end="")
    write_manifest(ws.manifests, timer, ws.config_hash, [ws.l1(), ws.index(), ws.l2()], [report_path, outcomes_path],
                   {name: r.as_dict() for name, r in subsets.items()})
    return EXIT_OK


def cmd_sweep_theta(ws: Workspace, args) -> int:
    cfg = ws.cfg
    timer = RunTimer(f"sweep-theta-{ws.variant}")
    rewriter = ws.rewriter()
    friction = _load_samples(ws, "friction_test")
    clean = _load_samples(ws, "clean_test")
    cap = cfg.eval.clean_tr_cap if args.clean_tr_cap is None else args.clean_tr_cap
    sweep = sweep_theta(rewriter, friction, clean, cfg.eval.thetas, cap)

    json_path = ws.report(f"sweep-{ws.variant}.json")
    html_path = ws.report(f"sweep-{ws.variant}.html")
    save_json(json_path, sweep.as_dict())
    write_sweep_html(sweep, html_path)
    reports = [r for row in sweep.rows for r in (row.friction, row.clean)]
    print(format_table(reports))
    print(f"chosen theta={sweep.theta:g} feasible={sweep.feasible} clean_tr_cap={cap:g}")
    write_manifest(ws.manifests, timer, ws.config_hash, [ws.l1(), ws.index(), ws.l2()], [json_path, html_path],
                   {"theta": sweep.theta, "feasible": sweep.feasible})
    return EXIT_OK


def _format_result(result) -> str:
    record = result.as_record()
    lines = [f"triggered: {str(result.triggered).lower()}",
             f"span: {'null' if result.span.is_null else f'{result.span.start}-{result.span.end}'}"
             f" (margin {result.span.margin:.4f})",
             f"entity: {result.entity or '-'}",
             f"rewrite: {result.output_utterance}"]
    if result.rewritten_hypothesis is not None:
        lines.append(f"hypothesis: {result.rewritten_hypothesis}")
    if result.diagnostic:
        lines.append(f"diagnostic: {result.diagnostic}")
    lines.append("top-k:")
    lines.extend(f"  {i + 1:>2}. {surface}  {score:.4f}" for i, (surface, score) in enumerate(record["ranked"]))
    return "\n".join(lines)


def _read_batch(filepath: Path):
    """Lines of `utterance` or `utterance<TAB>hypothesis`."""
    utterances, hypotheses = [], []
    for line_no, line in enumerate(filepath.read_text(encoding="utf-8").splitlines(), start=1):
        utterance, _, hyp_text = line.partition("\t")
        try:
            hypotheses.append(NluHypothesis.parse(hyp_text) if hyp_text.strip() else None)
        except ValueError as exc:
            raise UsageError(f"{filepath} line {line_no}: {exc}") from None
        utterances.append(utterance)
    return utterances, hypotheses


def cmd_rewrite(ws: Workspace, args) -> int:
    cfg = ws.cfg
    rewriter = ws.rewriter()
    if args.k is not None:
        rewriter.k = args.k
    theta = cfg.eval.theta if args.theta is None else args.theta
    try:
        hypothesis = NluHypothesis.parse(args.hypothesis) if args.hypothesis else None
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    if args.batch:
        utterances, hypotheses = _read_batch(Path(args.batch))
        results = rewriter.rewrite_batch(utterances, theta, hypotheses, cfg.eval.always_trigger)
        print("\n".join(canonical_json(r.as_record()) for r in results))
        return EXIT_OK
    if not args.utterance:
        raise UsageError("rewrite needs an utterance or --batch FILE")
    print(_format_result(rewriter.rewrite(args.utterance, theta, hypothesis, cfg.eval.always_trigger)))
    return EXIT_OK


def cmd_query(ws: Workspace, args) -> int:
    index = ws.entity_index()
    model = ws.bi_encoder()
    for rank, cand in enumerate(top_k(index, args.utterance, model, args.k or ws.cfg.l1.k), start=1):
        print(f"{rank:>3}. {cand.surface}\t{cand.score:.4f}\tids={','.join(map(str, cand.ids))}")
    return EXIT_OK


def cmd_score_pair(ws: Workspace, args) -> int:
    model = ws.cross_encoder()
    theta = ws.cfg.eval.theta if args.theta is None else args.theta
    with torch.no_grad():
        tokens, _ = model.encode_pairs([args.utterance], [args.entity])
        score = float(model.rank_scores(tokens, [model.kg.lookup(args.entity)])[0])
    span = predict_span(model, args.utterance, args.entity, theta, ws.cfg.l2.max_span_len)
    words = args.utterance.split()
    span_text = "" if span.is_null else " ".join(words[span.start - 1:span.end])
    print(json.dumps({"rank_score": score, "span": [span.start, span.end], "null": span.is_null,
                      "margin": span.margin, "span_text": span_text}))
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "pretrain-kg": cmd_pretrain_kg,
    "gen-data": cmd_gen_data,
    "mine-negatives": cmd_mine_negatives,
    "train-l1": cmd_train_l1,
    "build-index": cmd_build_index,
    "train-l2": cmd_train_l2,
    "evaluate": cmd_evaluate,
    "sweep-theta": cmd_sweep_theta,
    "rewrite": cmd_rewrite,
    "query": cmd_query,
    "score-pair": cmd_score_pair,
}


# ============ Argument parsing ============

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="run config JSON")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. l1.epochs=3")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--log-level", default=None)
    common.add_argument("--log-file", type=Path, default=None)
    common.add_argument("--quiet", action="store_true", help="no progress bars")

    parser = _Parser(prog="cli.py", description="Knowledge-graph entity correction for query rewriting")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", parents=[common], help="ingest entity and triple files")
    p.add_argument("--entities", default=None)
    p.add_argument("--triples", default=None)
    p.add_argument("--out", default=None, help="store directory (default: <workspace>/store)")

    for name, text in (("pretrain-kg", "pretrain KG embeddings"),
                       ("gen-data", "generate the synthetic corpus and vocabulary"),
                       ("mine-negatives", "train the KG-free retriever and mine hard negatives"),
                       ("train-l1", "train the bi-encoder"),
                       ("build-index", "encode the entity index"),
                       ("train-l2", "train the cross-encoder")):
        sub.add_parser(name, parents=[common], help=text)

    p = sub.add_parser("evaluate", parents=[common], help="metrics on the friction and clean test sets")
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--compare", nargs="*", default=None, metavar="VARIANT",
                   help="variants whose evaluate outcomes to compare against")

    p = sub.add_parser("sweep-theta", parents=[common], help="choose the null threshold")
    p.add_argument("--clean-tr-cap", type=float, default=None)

    p = sub.add_parser("rewrite", parents=[common], help="rewrite one utterance or a file of them")
    p.add_argument("utterance", nargs="?", default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--hypothesis", default=None, help="'Domain | Intent | Slot: value ...'")
    p.add_argument("--batch", default=None, help="file with one utterance per line, optionally TAB hypothesis")

    p = sub.add_parser("query", parents=[common], help="top-k retrieval for an utterance")
    p.add_argument("utterance")
    p.add_argument("--k", type=int, default=None)

    p = sub.add_parser("score-pair", parents=[common], help="L2 score and span for one pair")
    p.add_argument("utterance")
    p.add_argument("entity")
    p.add_argument("--theta", type=float, default=None)
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse, configure, dispatch. Returns the process exit code."""
    try:
        args = build_parser().parse_args(argv)
        cfg: RunConfig = load_config(args.config, args.overrides, args.seed)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    configure_logging(args.log_level or cfg.log_level, args.log_file, args.quiet)
    logger.info("%s with config %s", args.command, canonical_json(cfg.to_dict()))
    seed_everything(cfg.seed)

    try:
        return COMMANDS[args.command](Workspace(cfg), args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return EXIT_USAGE
    except RewriteError as exc:
        logger.error("%s", exc)
        return EXIT_DATA
    except (OSError, ValueError) as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return EXIT_DATA


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
