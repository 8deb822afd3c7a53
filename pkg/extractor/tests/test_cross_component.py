"""Schema-compatibility: the consumer pipeline ingests extractor output
through its CLI alone, with no shared code."""

import json
import subprocess
import sys

import pytest

from trace_extractor.cli import main as extractor_main


def _errcast(*args):
    return subprocess.run(
        [sys.executable, "-m", "errcast.cli", *args],
        capture_output=True,
        text=True,
    )


@pytest.fixture(scope="module")
def extractor_outputs(constant_model_dir, fixture_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("xcomp")
    traces = out / "traces.jsonl"
    preds = out / "predictions.jsonl"
    assert extractor_main(
        [
            "traces",
            "--model", str(constant_model_dir),
            "--dataset", str(fixture_dataset),
            "--out", str(traces),
        ]
    ) == 0
    assert extractor_main(
        [
            "generate",
            "--model", str(constant_model_dir),
            "--dataset", str(fixture_dataset),
            "--out", str(preds),
            "--max-new-tokens", "4",
        ]
    ) == 0
    return traces, preds


def test_traces_pass_validate_with_zero_violations(extractor_outputs):
    traces, _ = extractor_outputs
    result = _errcast("validate", str(traces))
    assert result.returncode == 0, result.stdout + result.stderr
    assert "0 violations" in result.stdout


def test_pipeline_consumes_traces_and_predictions(extractor_outputs, fixture_dataset, tmp_path):
    traces, preds = extractor_outputs
    out_dir = tmp_path / "run"
    result = _errcast(
        "eval",
        "--dataset", str(fixture_dataset),
        "--traces", str(traces),
        "--predictions", str(preds),
        "--feature-set", "sentence",
        "--classifier", "logreg",
        "--seeds", "0", "1", "2",
        "--out-dir", str(out_dir),
    )
    assert result.returncode == 0, result.stdout + result.stderr
    report = json.loads((out_dir / "report.json").read_text())
    assert "error_f1" in report["report"]
    assert (out_dir / "features.csv").exists()
    assert (out_dir / "report.txt").exists()


def test_full_feature_set_consumes_real_tokenizer_spans(extractor_outputs, fixture_dataset, tmp_path):
    traces, preds = extractor_outputs
    out_dir = tmp_path / "full_run"
    result = _errcast(
        "eval",
        "--dataset", str(fixture_dataset),
        "--traces", str(traces),
        "--predictions", str(preds),
        "--feature-set", "full",
        "--seeds", "0",
        "--out-dir", str(out_dir),
    )
    assert result.returncode == 0, result.stdout + result.stderr
    header = (out_dir / "features.csv").read_text().splitlines()[0]
    assert header.split(",")[1] == "spr.sentence.mean"
    assert len(header.split(",")) == 1 + 178
