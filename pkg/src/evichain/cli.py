"""Command-line surface: extract, train-scorer, answer, eval, fixture.

Stages communicate through files (evidence -> predictions -> report) so each
is independently testable and ablations stay stage-local.  A flat JSON config
file can hold any pipeline setting; command-line flags override it.  Every
error path exits nonzero after printing a single 'error: ...' line.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .compete import LinearVerifier
from .corpus import DatasetError, FixtureError, load_dataset, make_fixture_suite, save_dataset
from .embed import load_embeddings, save_embeddings
from .evaluate import write_methods_csv
from .pipeline import (
    ABLATIONS,
    EXTRACTION_METHODS,
    PipelineSettings,
    compare_methods,
    evaluate_evidence,
    evaluate_qa,
    fixture_embedding_table,
    read_evidence_file,
    read_predictions_file,
    run_answer,
    run_extraction,
    train_verifier,
    write_evidence_file,
    write_predictions_file,
)
from .scorers import ScorerError

SETTING_KEYS = (
    "mode",
    "topk",
    "one_off_scorer",
    "max_steps",
    "beam_width",
    "lam",
    "rerank",
    "verifier",
    "margin",
    "learning_rate",
    "epochs",
    "seed",
    "workers",
    "sidecar_cmd",
    "external_timeout",
    "external_fallback",
    "bm25_k1",
    "bm25_b",
)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        config = json.load(fh)
    if not isinstance(config, dict):
        raise ValueError(f"config file {path}: expected a flat JSON object")
    return config


def _build_settings(args: argparse.Namespace, config: dict) -> PipelineSettings:
    values: dict = {}
    for key in SETTING_KEYS:
        if key in config:
            values[key] = config[key]
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    ablate = set(config.get("ablate", []))
    for entry in getattr(args, "ablate", None) or []:
        ablate.update(part for part in entry.split(",") if part)
    values["ablate"] = frozenset(ablate)
    if "lam" in values:
        values["lam"] = float(values["lam"])
    return PipelineSettings(**values)


def _path_arg(args: argparse.Namespace, config: dict, key: str, required: bool = True) -> str | None:
    value = getattr(args, key, None) or config.get(key)
    if value is None and required:
        raise ValueError(f"missing required input {key!r} (flag --{key.replace('_', '-')} or config key)")
    return value


def _load_inputs(args, config):
    dataset = _path_arg(args, config, "dataset")
    embeddings = _path_arg(args, config, "embeddings")
    passages, questions = load_dataset(dataset)
    table = load_embeddings(embeddings)
    return passages, questions, table


def cmd_fixture(args: argparse.Namespace) -> int:
    passages, questions = make_fixture_suite(
        n_questions=args.questions,
        seed=args.seed or 0,
        multi_evidence_fraction=args.multi_evidence_fraction,
        contradictory_fraction=args.contradictory_fraction,
        min_sentences=args.min_sentences,
        max_sentences=args.max_sentences,
        tokens_per_sentence=args.tokens_per_sentence,
        trap_token_overlap=args.trap_overlap,
    )
    save_dataset(args.out, passages, questions)
    table = fixture_embedding_table(passages, questions, dim=args.dim)
    save_embeddings(args.embeddings_out, table)
    print(
        f"wrote {len(passages)} passages / {len(questions)} questions to {args.out}; "
        f"{len(table)} vectors (dim {table.dim}) to {args.embeddings_out}"
    )
    return 0


def cmd_extract(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    settings = _build_settings(args, config)
    passages, questions, table = _load_inputs(args, config)
    records = run_extraction(passages, questions, table, settings)
    write_evidence_file(args.out, records)
    print(f"wrote {len(records)} evidence records to {args.out}")
    return 0


def cmd_train_scorer(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    settings = _build_settings(args, config)
    passages, questions, table = _load_inputs(args, config)
    records = read_evidence_file(args.evidence)
    verifier, trace = train_verifier(passages, questions, records, table, settings)
    verifier.save(args.out)
    print(
        f"trained {verifier.objective} verifier on {len(questions)} questions: "
        f"loss {trace[0]:.6f} -> {trace[-1]:.6f}; wrote {args.out}"
    )
    return 0


def cmd_answer(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    settings = _build_settings(args, config)
    passages, questions, table = _load_inputs(args, config)
    records = read_evidence_file(args.evidence)
    if settings.verifier == "external":
        verifier = None
    else:
        verifier_path = args.verifier_file or config.get("verifier_file")
        if verifier_path is None:
            raise ValueError("missing required input 'verifier_file' (flag --verifier-file)")
        verifier = LinearVerifier.load(verifier_path)
    predictions = run_answer(passages, questions, records, verifier, table, settings)
    write_predictions_file(args.out, predictions)
    print(f"wrote {len(predictions)} predictions to {args.out}")
    return 0


def _report_json(evidence, qa) -> dict:
    report: dict = {}
    if evidence is None:
        report["evidence"] = None
        report["evidence_notice"] = "no options carry gold evidence; evidence metrics skipped"
    else:
        report["evidence"] = evidence.to_dict()
    report["qa"] = qa.to_dict()
    return report


def _emit_report(report: dict, out_path: str | None) -> None:
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if out_path:
        Path(out_path).write_text(text + "\n", encoding="utf-8")


def cmd_eval(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    settings = _build_settings(args, config)
    passages, questions, table = _load_inputs(args, config)

    if args.methods:
        names = [m for entry in args.methods for m in entry.split(",") if m]
        rows, results = compare_methods(passages, questions, table, names, settings)
        report = {
            name: _report_json(res["evidence"], res["qa"]) for name, res in results.items()
        }
        _emit_report(report, args.report_out)
        if args.csv:
            write_methods_csv(rows, args.csv)
            print(f"wrote {len(rows)} method rows to {args.csv}", file=sys.stderr)
        return 0

    if not args.evidence or not args.predictions:
        raise ValueError("eval needs --evidence and --predictions (or --methods)")
    records = read_evidence_file(args.evidence)
    predictions = read_predictions_file(args.predictions)
    evidence_report = evaluate_evidence(questions, records)
    qa_report = evaluate_qa(questions, predictions)
    report = _report_json(evidence_report, qa_report)
    _emit_report(report, args.report_out)
    if args.csv:
        label = args.method_label or settings.mode
        row = {
            "method": label,
            "P": f"{evidence_report.macro_precision:.4f}" if evidence_report else "",
            "R": f"{evidence_report.macro_recall:.4f}" if evidence_report else "",
            "F1": f"{evidence_report.macro_f1:.4f}" if evidence_report else "",
            "Acc": f"{qa_report.accuracy:.4f}",
        }
        write_methods_csv([row], args.csv)
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat JSON config file; flags override its keys")
    parser.add_argument("--dataset", help="dataset JSONL path")
    parser.add_argument("--embeddings", help="word2vec-style text embeddings path")
    parser.add_argument("--mode", choices=EXTRACTION_METHODS, help="extraction method")
    parser.add_argument("--topk", type=int, help="k for one_off_topk mode")
    parser.add_argument("--one-off-scorer", dest="one_off_scorer", choices=["cosine", "bm25"])
    parser.add_argument("--max-steps", dest="max_steps", type=int)
    parser.add_argument("--beam-width", dest="beam_width", type=int)
    parser.add_argument("--lambda", dest="lam", type=float, help="soft-mask weight-gap scale")
    parser.add_argument("--rerank", choices=["cosine", "external"])
    parser.add_argument("--verifier", choices=["linear", "external"])
    parser.add_argument("--margin", type=float)
    parser.add_argument("--learning-rate", dest="learning_rate", type=float)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--sidecar-cmd", dest="sidecar_cmd", help="external scorer command line")
    parser.add_argument(
        "--ablate",
        action="append",
        metavar="|".join(sorted(ABLATIONS)),
        help="ablation flags (repeatable or comma-separated)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evichain",
        description="Iterative evidence extraction, adaptive integration, and option competition.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fixture", help="generate a synthetic dataset and matching embeddings")
    p.add_argument("--out", required=True)
    p.add_argument("--embeddings-out", dest="embeddings_out", required=True)
    p.add_argument("--questions", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--multi-evidence-fraction", type=float, default=0.5)
    p.add_argument("--contradictory-fraction", type=float, default=0.5)
    p.add_argument("--min-sentences", type=int, default=6)
    p.add_argument("--max-sentences", type=int, default=8)
    p.add_argument("--tokens-per-sentence", type=int, default=4)
    p.add_argument("--trap-overlap", type=float, default=0.75)
    p.add_argument("--dim", type=int, default=None)
    p.set_defaults(func=cmd_fixture)

    p = sub.add_parser("extract", help="select evidence for every option")
    _add_common(p)
    p.add_argument("--out", required=True, help="evidence JSONL output")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train-scorer", help="train the linear verifier on extracted evidence")
    _add_common(p)
    p.add_argument("--evidence", required=True)
    p.add_argument("--out", required=True, help="verifier JSON output")
    p.set_defaults(func=cmd_train_scorer)

    p = sub.add_parser("answer", help="score options against evidence and pick answers")
    _add_common(p)
    p.add_argument("--evidence", required=True)
    p.add_argument("--verifier-file", dest="verifier_file", help="trained verifier JSON")
    p.add_argument("--out", required=True, help="predictions JSONL output")
    p.set_defaults(func=cmd_answer)

    p = sub.add_parser("eval", help="report evidence P/R/F1 and QA accuracy")
    _add_common(p)
    p.add_argument("--evidence")
    p.add_argument("--predictions")
    p.add_argument("--methods", action="append", help="run these methods end to end (comma list)")
    p.add_argument("--method-label", dest="method_label")
    p.add_argument("--csv", help="Table-style CSV output (method, P, R, F1, Acc)")
    p.add_argument("--report-out", dest="report_out", help="also write the JSON report here")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DatasetError, FixtureError, ScorerError, ValueError, OSError) as exc:
        message = " ".join(str(exc).splitlines())
        print(f"error: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
