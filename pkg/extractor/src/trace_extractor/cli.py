"""CLI: `trace-extract traces` and `trace-extract generate`."""

from __future__ import annotations

import argparse
import sys

from trace_extractor.extract import (
    ExtractionJob,
    extract_traces,
    generate_predictions,
    write_jsonl,
)


def _job_from_args(args: argparse.Namespace) -> ExtractionJob:
    return ExtractionJob(
        model_id=args.model,
        dataset_path=args.dataset,
        batch_size=args.batch_size,
        device=args.device,
        cis_enabled=args.cis,
        max_new_tokens=args.max_new_tokens,
    )


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--model", required=True, help="model directory or hub id")
    parser.add_argument("--dataset", required=True, help="dataset JSONL")
    parser.add_argument("--out", required=True)
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--max-new-tokens", type=int, default=16)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trace-extract",
        description="Per-token likelihood traces and zero-shot predictions from causal LMs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("traces", help="teacher-forced trace JSONL")
    _add_common(p)
    cis = p.add_mutually_exclusive_group()
    cis.add_argument("--cis", dest="cis", action="store_true", default=True,
                     help="rescore each next token under a deleted prefix (default)")
    cis.add_argument("--no-cis", dest="cis", action="store_false",
                     help="skip the n-1 extra forward passes per example")
    p.set_defaults(func=_cmd_traces)

    p = sub.add_parser("generate", help="greedy zero-shot predictions JSONL")
    _add_common(p)
    p.set_defaults(func=_cmd_generate, cis=False)
    return parser


def _cmd_traces(args: argparse.Namespace) -> int:
    rows, stats = extract_traces(_job_from_args(args))
    write_jsonl(rows, args.out)
    print(
        f"wrote {len(rows)} traces to {args.out} "
        f"({stats['sequences_scored']} sequences scored for "
        f"{stats['tokens_total']} tokens)"
    )
    return 0


def _cmd_generate(args: argparse.Namespace) -> int:
    rows = generate_predictions(_job_from_args(args))
    write_jsonl(rows, args.out)
    failures = sum(1 for row in rows if "error" in row)
    print(f"wrote {len(rows)} predictions to {args.out} ({failures} failures)")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
