"""End-to-end orchestration: trace acquisition, featurization, training, reports.

A run is described by an ExperimentConfig; cli_run executes the stages and
writes features, manifest, model artifact, and reports. Stage failures are
wrapped with the stage name so the CLI can exit meaningfully.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from errcast import corpus as corpus_mod
from errcast import features as features_mod
from errcast import learn as learn_mod
from errcast import remote as remote_mod
from errcast import toy_lm as toy_mod
from errcast import trace as trace_mod
from errcast.corpus import ErrorLabel, ExampleRecord
from errcast.measures import CwsConfig, Measure
from errcast.synth import SyntheticSpec, make_synthetic
from errcast.trace import TokenTrace
from errcast.util import fmt10, round10

FEATURE_SETS = (
    "full",
    "sentence",
    "baseline:logprob",
    "baseline:maxprob",
    "baseline:odd",
    "baseline:combined",
)


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str
    output_dir: str
    errors: str | None = None
    predictions: str | None = None
    trace_source: str = "file"
    traces: str | None = None
    toy_model: str | None = None
    endpoint: str | None = None
    remote_model: str | None = None
    top_logprobs: int = 5
    feature_set: str = "full"
    classifier: str = "logreg"
    cws_gamma: float = 1.0
    tau: float = 0.5
    seeds: tuple[int, ...] = (0, 1, 2)
    split_ratio: float = 0.8

    def __post_init__(self) -> None:
        if self.feature_set not in FEATURE_SETS:
            raise ValueError(f"unknown feature set {self.feature_set!r}")
        if self.classifier not in ("logreg", "mlp"):
            raise ValueError(f"unknown classifier {self.classifier!r}")
        if self.trace_source not in ("file", "toy", "remote"):
            raise ValueError(f"unknown trace source {self.trace_source!r}")

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        if "seeds" in obj:
            obj["seeds"] = tuple(int(s) for s in obj["seeds"])
        return cls(**obj)

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "output_dir": self.output_dir,
            "errors": self.errors,
            "predictions": self.predictions,
            "trace_source": self.trace_source,
            "traces": self.traces,
            "toy_model": self.toy_model,
            "endpoint": self.endpoint,
            "remote_model": self.remote_model,
            "top_logprobs": self.top_logprobs,
            "feature_set": self.feature_set,
            "classifier": self.classifier,
            "cws_gamma": self.cws_gamma,
            "tau": self.tau,
            "seeds": list(self.seeds),
            "split_ratio": self.split_ratio,
        }


def sentence_char_range(prompt: str, sentence: str) -> tuple[int, int]:
    start = prompt.find(sentence)
    if start < 0:
        raise ValueError("sentence does not occur in prompt")
    return start, start + len(sentence)


def trace_with_toy_lm(
    records: Sequence[ExampleRecord],
    model: toy_mod.BigramModel | None = None,
    alpha: float = 1.0,
) -> list[TokenTrace]:
    """Score each record's prompt with a bigram model (trained on the prompts
    themselves when none is given)."""
    prompts = [corpus_mod.build_prompt(rec) for rec in records]
    if model is None:
        model = toy_mod.train_bigram(prompts, alpha=alpha)
    traces = []
    for rec, prompt in zip(records, prompts):
        start, end = sentence_char_range(prompt, rec.sentence)
        traces.append(
            toy_mod.trace_prompt(
                model, prompt, sentence_range=(start, end - 1), example_id=rec.id
            )
        )
    return traces


def reconstruct_prompt_text(trace: TokenTrace) -> str:
    """Rebuild the prompt string a trace was produced from via char offsets."""
    if not trace.tokens:
        return ""
    total = max(tok.char_span[1] for tok in trace.tokens)
    buffer = [" "] * total
    for i, tok in enumerate(trace.tokens):
        start, end = tok.char_span
        if end - start != len(tok.token_text):
            raise ValueError(
                f"trace {trace.example_id!r}: token {i} text length does not match its span"
            )
        buffer[start:end] = tok.token_text
    return "".join(buffer)


def expression_prompt_span(rec: ExampleRecord, trace: TokenTrace) -> tuple[int, int]:
    """Map the record's sentence-relative expression span into prompt coords."""
    if rec.expression_char_span is None:
        raise ValueError(f"record {rec.id!r} has no expression span")
    prompt_text = reconstruct_prompt_text(trace)
    sentence_start = prompt_text.find(rec.sentence)
    if sentence_start < 0:
        raise ValueError(
            f"record {rec.id!r}: sentence not found in the trace's prompt text"
        )
    start, end = rec.expression_char_span
    return sentence_start + start, sentence_start + end


def featurize_corpus(
    records: Sequence[ExampleRecord],
    traces: Sequence[TokenTrace],
    feature_set: str = "full",
    cws_gamma: float = 1.0,
    workers: int = 0,
) -> tuple[list[str], tuple[str, ...], np.ndarray]:
    """Pair records with traces by id and build the chosen feature matrix."""
    if feature_set not in FEATURE_SETS:
        raise ValueError(f"unknown feature set {feature_set!r}")
    by_id = {tr.example_id: tr for tr in traces}
    missing = [rec.id for rec in records if rec.id not in by_id]
    if missing:
        raise ValueError(f"no trace for example ids {missing[:5]} (and possibly more)")
    config = CwsConfig(gamma=cws_gamma)

    def one(rec: ExampleRecord):
        tr = by_id[rec.id]
        if feature_set == "full":
            return features_mod.build_full_features(tr, expression_prompt_span(rec, tr), config)
        if feature_set == "sentence":
            return features_mod.build_sentence_features(tr, config)
        return features_mod.build_baselines(tr)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            vectors = list(pool.map(one, records))
    else:
        vectors = [one(rec) for rec in records]

    if feature_set in ("full", "sentence"):
        return features_mod.feature_matrix(vectors)
    which = feature_set.split(":", 1)[1]
    return features_mod.baseline_matrix(vectors, which)


def align_labels(
    ids: Sequence[str], labels: Sequence[ErrorLabel]
) -> np.ndarray:
    by_id = {lab.example_id: lab.e for lab in labels}
    missing = [rid for rid in ids if rid not in by_id]
    if missing:
        raise ValueError(f"no error label for example ids {missing[:5]}")
    return np.asarray([by_id[rid] for rid in ids], dtype=int)


def _report_row(name: str, report: learn_mod.EvalReport) -> dict:
    return {
        "name": name,
        "error_f1": round10(report.error_f1),
        "error_precision": round10(report.error_precision),
        "error_recall": round10(report.error_recall),
        "accuracy": round10(report.accuracy),
    }


def emit_report(
    reports: Sequence[tuple[str, learn_mod.EvalReport]],
    out_dir: str | Path,
    stem: str = "comparison",
) -> tuple[Path, Path]:
    """Write aligned text and CSV comparison tables; deltas are vs row one."""
    if not reports:
        raise ValueError("nothing to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [_report_row(name, rep) for name, rep in reports]
    reference = rows[0]["error_f1"]
    for row in rows:
        row["delta_error_f1"] = round10(row["error_f1"] - reference)

    csv_path = out_dir / f"{stem}.csv"
    columns = ["name", "error_f1", "delta_error_f1", "error_precision", "error_recall", "accuracy"]
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(fmt10(row[c]) if c != "name" else str(row[c]) for c in columns) + "\n")

    txt_path = out_dir / f"{stem}.txt"
    name_width = max(len(str(row["name"])) for row in rows)
    name_width = max(name_width, len("feature set"))
    lines = [
        f"{'feature set':<{name_width}}  {'err-F1':>10}  {'delta':>10}  "
        f"{'err-P':>10}  {'err-R':>10}  {'acc':>10}"
    ]
    for row in rows:
        delta = row["delta_error_f1"]
        delta_text = f"{delta:+.2f}" if row is not rows[0] else "--"
        lines.append(
            f"{row['name']:<{name_width}}  {row['error_f1']:>10.2f}  {delta_text:>10}  "
            f"{row['error_precision']:>10.2f}  {row['error_recall']:>10.2f}  "
            f"{row['accuracy']:>10.2f}"
        )
    txt_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return txt_path, csv_path


def _load_labels(config: ExperimentConfig, records: Sequence[ExampleRecord]) -> list[ErrorLabel]:
    if config.errors:
        return corpus_mod.read_error_labels(config.errors)
    if config.predictions:
        raw = corpus_mod.read_predictions(config.predictions)
        parsed = {
            rec.id: corpus_mod.parse_prediction(raw[rec.id], rec) for rec in records if rec.id in raw
        }
        labels, _ = corpus_mod.label_errors(records, parsed)
        return labels
    raise ValueError("either an errors file or a predictions file is required")


def acquire_traces(config: ExperimentConfig, records: Sequence[ExampleRecord]) -> list[TokenTrace]:
    if config.trace_source == "file":
        if not config.traces:
            raise ValueError("trace_source 'file' requires a traces path")
        return trace_mod.read_traces(config.traces)
    if config.trace_source == "toy":
        model = toy_mod.load_model(config.toy_model) if config.toy_model else None
        return trace_with_toy_lm(records, model)
    endpoint = remote_mod.RemoteEndpoint(
        base_url=config.endpoint or "", model=config.remote_model
    )
    prompts = []
    for rec in records:
        prompt = corpus_mod.build_prompt(rec)
        prompts.append(
            remote_mod.RemotePrompt(rec.id, prompt, sentence_char_range(prompt, rec.sentence))
        )
    return remote_mod.fetch_remote_traces(endpoint, prompts, top_logprobs=config.top_logprobs)


def cli_run(config: ExperimentConfig) -> learn_mod.EvalReport:
    """Run the full experiment; write features, manifest, artifact, reports."""
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    try:
        records = corpus_mod.load_dataset(config.dataset)
    except Exception as exc:
        raise StageError("load_dataset", exc) from exc
    try:
        traces = acquire_traces(config, records)
    except Exception as exc:
        raise StageError("acquire_traces", exc) from exc
    try:
        labels = _load_labels(config, records)
    except Exception as exc:
        raise StageError("load_labels", exc) from exc
    try:
        ids, names, X = featurize_corpus(records, traces, config.feature_set, config.cws_gamma)
        e = align_labels(ids, labels)
    except Exception as exc:
        raise StageError("featurize", exc) from exc

    features_mod.write_features_csv(out_dir / "features.csv", ids, names, X)
    features_mod.write_manifest_json(out_dir / "manifest.json", names)

    try:
        report = learn_mod.run_protocol(
            X,
            e,
            model_kind=config.classifier,
            seeds=config.seeds,
            ratio=config.split_ratio,
            tau=config.tau,
        )
        model, standardizer, _ = learn_mod.fit_single(
            X, e, config.classifier, seed=config.seeds[0], ratio=config.split_ratio, tau=config.tau
        )
    except Exception as exc:
        raise StageError("train", exc) from exc

    try:
        learn_mod.save_artifact(out_dir / "model.json", model, standardizer, names, config.tau)
        payload = {"config": config.to_dict(), "report": _round_report(report.to_dict())}
        (out_dir / "report.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        emit_report([(config.feature_set, report)], out_dir, stem="report")
    except Exception as exc:
        raise StageError("emit_report", exc) from exc
    return report


def _round_report(obj):
    if isinstance(obj, float):
        return round10(obj)
    if isinstance(obj, list):
        return [_round_report(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _round_report(v) for k, v in obj.items()}
    return obj


ABLATABLE_MEASURES = tuple(m.value for m in (Measure.SPR, Measure.H, Measure.CWS, Measure.CIS))


def ablation_matrix(
    names: Sequence[str], X: np.ndarray, drop_measure: str
) -> tuple[tuple[str, ...], np.ndarray]:
    """Drop all columns (value and validity) tagged with a measure."""
    drop = drop_measure.lower()
    if drop not in ABLATABLE_MEASURES:
        raise ValueError(f"unknown measure {drop_measure!r}")
    keep = [
        i
        for i, name in enumerate(names)
        if features_mod.measure_of_feature(name) != drop
    ]
    if len(keep) == len(names):
        raise ValueError(f"measure {drop_measure!r} not present in feature columns")
    return tuple(names[i] for i in keep), X[:, keep]


def run_ablation_grid(
    names: Sequence[str],
    X: np.ndarray,
    e: np.ndarray,
    classifier: str = "logreg",
    seeds: Sequence[int] = (0, 1, 2),
    tau: float = 0.5,
) -> dict[str, learn_mod.EvalReport]:
    """Full run plus one run per dropped measure; keys 'full' and measure tags."""
    results = {"full": learn_mod.run_protocol(X, e, classifier, seeds=seeds, tau=tau)}
    for measure in ABLATABLE_MEASURES:
        _, X_drop = ablation_matrix(names, X, measure)
        results[measure] = learn_mod.run_protocol(X_drop, e, classifier, seeds=seeds, tau=tau)
    return results


def ablation_deltas(results: dict[str, learn_mod.EvalReport]) -> dict[str, float]:
    """Delta = ablated - full, per dropped measure (negative means the
    measure was load-bearing)."""
    full = results["full"].error_f1
    return {
        measure: round10(rep.error_f1 - full)
        for measure, rep in results.items()
        if measure != "full"
    }


def run_synthetic_comparison(
    spec: SyntheticSpec,
    generator_seed: int = 0,
    seeds: Sequence[int] = (0, 1, 2),
    classifier: str = "logreg",
    feature_sets: Sequence[str] = (
        "full",
        "sentence",
        "baseline:logprob",
        "baseline:maxprob",
        "baseline:odd",
    ),
) -> dict[str, learn_mod.EvalReport]:
    """Generate one synthetic corpus and evaluate each feature set on it."""
    records, traces, labels = make_synthetic(spec, seed=generator_seed)
    results: dict[str, learn_mod.EvalReport] = {}
    for feature_set in feature_sets:
        ids, _, X = featurize_corpus(records, traces, feature_set)
        e = align_labels(ids, labels)
        results[feature_set] = learn_mod.run_protocol(X, e, classifier, seeds=seeds)
    return results
