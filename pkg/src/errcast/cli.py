"""Command-line interface.

Subcommands: validate, trace-toy, trace-remote, featurize, train, eval,
ablate, synth, report. Any stage failure exits nonzero with the stage name.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from errcast import corpus as corpus_mod
from errcast import features as features_mod
from errcast import learn as learn_mod
from errcast import pipeline as pipeline_mod
from errcast import remote as remote_mod
from errcast import toy_lm as toy_mod
from errcast import trace as trace_mod
from errcast.measures import CwsConfig
from errcast.pipeline import ExperimentConfig, StageError
from errcast.synth import SyntheticSpec, make_synthetic
from errcast.util import fmt10


def _fail(stage: str, exc: Exception) -> int:
    print(f"error in stage {stage!r}: {exc}", file=sys.stderr)
    return 2


def _cmd_validate(args: argparse.Namespace) -> int:
    traces = trace_mod.read_traces(args.traces)
    total = 0
    for tr in traces:
        for violation in trace_mod.validate_trace(tr):
            print(f"{tr.example_id}: {violation}")
            total += 1
    print(f"{len(traces)} traces checked, {total} violations")
    return 0 if total == 0 else 1


def _cmd_trace_toy(args: argparse.Namespace) -> int:
    try:
        records = corpus_mod.load_dataset(args.dataset)
    except Exception as exc:
        return _fail("load_dataset", exc)
    try:
        model = None
        if args.model:
            model = toy_mod.load_model(args.model)
        elif args.train_corpus:
            text = Path(args.train_corpus).read_text(encoding="utf-8")
            prompts = [corpus_mod.build_prompt(rec) for rec in records]
            vocab = sorted(set(text) | {ch for p in prompts for ch in p})
            model = toy_mod.train_bigram([text], vocab=vocab, alpha=args.alpha)
        traces = pipeline_mod.trace_with_toy_lm(records, model, alpha=args.alpha)
    except Exception as exc:
        return _fail("trace_toy", exc)
    trace_mod.write_traces(traces, args.out)
    if args.save_model and model is not None:
        toy_mod.save_model(model, args.save_model)
    print(f"wrote {len(traces)} traces to {args.out}")
    return 0


def _cmd_trace_remote(args: argparse.Namespace) -> int:
    try:
        records = corpus_mod.load_dataset(args.dataset)
    except Exception as exc:
        return _fail("load_dataset", exc)
    endpoint = remote_mod.RemoteEndpoint(
        base_url=args.endpoint,
        model=args.model,
        timeout=args.timeout,
        concurrency=args.concurrency,
    )
    prompts = []
    try:
        for rec in records:
            prompt = corpus_mod.build_prompt(rec)
            prompts.append(
                remote_mod.RemotePrompt(
                    rec.id, prompt, pipeline_mod.sentence_char_range(prompt, rec.sentence)
                )
            )
        traces = remote_mod.fetch_remote_traces(endpoint, prompts, top_logprobs=args.top_logprobs)
    except Exception as exc:
        return _fail("trace_remote", exc)
    trace_mod.write_traces(traces, args.out)
    print(f"wrote {len(traces)} traces to {args.out}")
    return 0


def _cmd_featurize(args: argparse.Namespace) -> int:
    try:
        records = corpus_mod.load_dataset(args.dataset)
        traces = trace_mod.read_traces(args.traces)
        ids, names, X = pipeline_mod.featurize_corpus(
            records, traces, args.feature_set, args.gamma
        )
    except Exception as exc:
        return _fail("featurize", exc)
    out_dir = Path(args.out_dir)
    features_mod.write_features_csv(out_dir / "features.csv", ids, names, X)
    features_mod.write_manifest_json(out_dir / "manifest.json", names)
    print(f"wrote {len(ids)} x {len(names)} feature matrix to {out_dir / 'features.csv'}")
    return 0


def _labels_for(args: argparse.Namespace, records) -> list:
    if getattr(args, "errors", None):
        return corpus_mod.read_error_labels(args.errors)
    if getattr(args, "predictions", None):
        raw = corpus_mod.read_predictions(args.predictions)
        parsed = {rec.id: corpus_mod.parse_prediction(raw[rec.id], rec) for rec in records}
        labels, accuracy = corpus_mod.label_errors(records, parsed)
        print(f"labeled {len(labels)} rows, task accuracy {fmt10(accuracy)}")
        return labels
    raise ValueError("provide --errors or --predictions")


def _cmd_train(args: argparse.Namespace) -> int:
    try:
        ids, names, X = features_mod.read_features_csv(args.features)
        records = corpus_mod.load_dataset(args.dataset) if args.dataset else None
        if args.errors:
            labels = corpus_mod.read_error_labels(args.errors)
        else:
            if records is None:
                raise ValueError("--predictions requires --dataset")
            labels = _labels_for(args, records)
        e = pipeline_mod.align_labels(ids, labels)
    except Exception as exc:
        return _fail("load", exc)
    try:
        model, standardizer, report = learn_mod.fit_single(
            X, e, args.classifier, seed=args.seed, tau=args.tau
        )
    except Exception as exc:
        return _fail("train", exc)
    learn_mod.save_artifact(args.out, model, standardizer, names, args.tau)
    print(
        f"trained {args.classifier} (seed {args.seed}); held-out error-F1 "
        f"{fmt10(report.error_f1)}; artifact at {args.out}"
    )
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    if args.model:
        try:
            if not args.features or not args.errors:
                raise ValueError("--model scoring needs --features and --errors")
            ids, names, X = features_mod.read_features_csv(args.features)
            artifact = learn_mod.load_artifact(args.model)
            p = learn_mod.score_with_artifact(artifact, names, X)
            preds = learn_mod.decide(p, artifact.tau)
            labels = corpus_mod.read_error_labels(args.errors)
            e = pipeline_mod.align_labels(ids, labels)
            report = learn_mod.evaluate(preds, e)
        except Exception as exc:
            return _fail("score", exc)
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(
            json.dumps(pipeline_mod._round_report(report.to_dict()), indent=2, sort_keys=True)
            + "\n",
            encoding="utf-8",
        )
        pipeline_mod.emit_report([("artifact", report)], out_dir, stem="report")
        print(f"error-F1 {fmt10(report.error_f1)}; report in {out_dir}")
        return 0

    try:
        config = _config_from_args(args)
    except Exception as exc:
        return _fail("config", exc)
    try:
        report = pipeline_mod.cli_run(config)
    except StageError as exc:
        return _fail(exc.stage, exc.cause)
    print(f"error-F1 {fmt10(report.error_f1)}; outputs in {config.output_dir}")
    return 0


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    if args.config:
        return ExperimentConfig.from_json(args.config)
    if not args.dataset or not args.out_dir:
        raise ValueError("--dataset and --out-dir are required without --config")
    return ExperimentConfig(
        dataset=args.dataset,
        output_dir=args.out_dir,
        errors=args.errors,
        predictions=args.predictions,
        trace_source=args.trace_source,
        traces=args.traces,
        toy_model=args.toy_model,
        endpoint=args.endpoint,
        remote_model=args.remote_model,
        feature_set=args.feature_set,
        classifier=args.classifier,
        cws_gamma=args.gamma,
        tau=args.tau,
        seeds=tuple(args.seeds),
    )


def _cmd_ablate(args: argparse.Namespace) -> int:
    try:
        records = corpus_mod.load_dataset(args.dataset)
        traces = trace_mod.read_traces(args.traces)
        labels = _labels_for(args, records)
        ids, names, X = pipeline_mod.featurize_corpus(records, traces, "full", args.gamma)
        e = pipeline_mod.align_labels(ids, labels)
    except Exception as exc:
        return _fail("featurize", exc)
    try:
        results = pipeline_mod.run_ablation_grid(
            names, X, e, classifier=args.classifier, seeds=tuple(args.seeds), tau=args.tau
        )
    except Exception as exc:
        return _fail("ablate", exc)
    deltas = pipeline_mod.ablation_deltas(results)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "full_error_f1": pipeline_mod.round10(results["full"].error_f1),
        "deltas": deltas,
        "reports": {k: pipeline_mod._round_report(v.to_dict()) for k, v in results.items()},
    }
    (out_dir / "ablation.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    rows = [("full", results["full"])] + [(m, results[m]) for m in pipeline_mod.ABLATABLE_MEASURES]
    pipeline_mod.emit_report(rows, out_dir, stem="ablation")
    for measure in pipeline_mod.ABLATABLE_MEASURES:
        print(f"drop {measure}: delta error-F1 {fmt10(deltas[measure])}")
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    try:
        spec = SyntheticSpec(
            n_examples=args.n,
            vocab_size=args.vocab_size,
            span_length=args.span_length,
            spike_magnitude=args.magnitude,
            error_coupling=args.rho,
            sentence_length=args.sentence_length,
        )
        records, traces, labels = make_synthetic(spec, seed=args.seed)
    except Exception as exc:
        return _fail("synth", exc)
    out_dir = Path(args.out_dir)
    corpus_mod.write_dataset(records, out_dir / "dataset.jsonl")
    trace_mod.write_traces(traces, out_dir / "traces.jsonl")
    corpus_mod.write_error_labels(labels, out_dir / "errors.jsonl")
    (out_dir / "synth_spec.json").write_text(
        json.dumps({**spec.__dict__, "seed": args.seed}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    print(f"wrote {len(records)} synthetic examples to {out_dir}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    rows = []
    try:
        for path in args.inputs:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
            report_obj = payload.get("report", payload)
            name = payload.get("config", {}).get("feature_set") or Path(path).stem
            rows.append((name, learn_mod.EvalReport.from_dict(report_obj)))
    except Exception as exc:
        return _fail("read_reports", exc)
    txt_path, csv_path = pipeline_mod.emit_report(rows, args.out_dir, stem=args.stem)
    print(Path(txt_path).read_text(encoding="utf-8"))
    print(f"tables written to {txt_path} and {csv_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="errcast",
        description="Anticipate language-model errors from input-side token likelihoods.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a trace JSONL against the schema invariants")
    p.add_argument("traces")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("trace-toy", help="score dataset prompts with the toy bigram model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", help="bigram model JSON (default: train on the prompts)")
    p.add_argument("--train-corpus", help="plain-text file to train the bigram model on")
    p.add_argument("--save-model", help="write the trained bigram model JSON here")
    p.add_argument("--alpha", type=float, default=1.0)
    p.set_defaults(func=_cmd_trace_toy)

    p = sub.add_parser("trace-remote", help="score dataset prompts against a logprobs endpoint")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--endpoint", required=True, help="base URL of a completions API")
    p.add_argument("--model", help="remote model name")
    p.add_argument("--top-logprobs", type=int, default=5)
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--concurrency", type=int, default=4)
    p.set_defaults(func=_cmd_trace_remote)

    p = sub.add_parser("featurize", help="build a feature matrix from dataset + traces")
    p.add_argument("--dataset", required=True)
    p.add_argument("--traces", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--feature-set", default="full", choices=pipeline_mod.FEATURE_SETS)
    p.add_argument("--gamma", type=float, default=1.0)
    p.set_defaults(func=_cmd_featurize)

    p = sub.add_parser("train", help="fit a classifier on a feature CSV")
    p.add_argument("--features", required=True)
    p.add_argument("--errors", help="error labels JSONL")
    p.add_argument("--predictions", help="raw predictions JSONL (needs --dataset)")
    p.add_argument("--dataset")
    p.add_argument("--classifier", default="logreg", choices=("logreg", "mlp"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="run the multi-seed protocol end to end")
    p.add_argument("--config", help="ExperimentConfig JSON; overrides the flags")
    p.add_argument("--dataset")
    p.add_argument("--errors")
    p.add_argument("--predictions")
    p.add_argument("--trace-source", default="file", choices=("file", "toy", "remote"))
    p.add_argument("--traces")
    p.add_argument("--toy-model")
    p.add_argument("--endpoint")
    p.add_argument("--remote-model")
    p.add_argument("--feature-set", default="full", choices=pipeline_mod.FEATURE_SETS)
    p.add_argument("--classifier", default="logreg", choices=("logreg", "mlp"))
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--out-dir")
    p.add_argument("--model", help="score an existing artifact instead of refitting")
    p.add_argument("--features", help="feature CSV (artifact-scoring mode)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="ablation grid over the four measures")
    p.add_argument("--dataset", required=True)
    p.add_argument("--traces", required=True)
    p.add_argument("--errors")
    p.add_argument("--predictions")
    p.add_argument("--classifier", default="logreg", choices=("logreg", "mlp"))
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("synth", help="generate a synthetic dataset/trace/label triple")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--vocab-size", type=int, default=16)
    p.add_argument("--span-length", type=int, default=5)
    p.add_argument("--magnitude", type=float, default=8.0)
    p.add_argument("--rho", type=float, default=0.9)
    p.add_argument("--sentence-length", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("report", help="side-by-side table from report JSON files")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--stem", default="comparison")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
