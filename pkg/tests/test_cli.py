import json

import pytest

from errcast.cli import main
from errcast.corpus import write_dataset
from errcast.features import read_features_csv
from errcast.toy_lm import save_model, train_bigram
from errcast.trace import read_traces, write_traces
from errcast.util import write_jsonl


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    code = main(
        [
            "synth",
            "--n", "80",
            "--sentence-length", "24",
            "--span-length", "4",
            "--seed", "3",
            "--out-dir", str(out),
        ]
    )
    assert code == 0
    return out


def test_synth_writes_triple(synth_dir):
    for name in ("dataset.jsonl", "traces.jsonl", "errors.jsonl", "synth_spec.json"):
        assert (synth_dir / name).exists()


def test_validate_clean_traces(synth_dir, capsys):
    assert main(["validate", str(synth_dir / "traces.jsonl")]) == 0
    out = capsys.readouterr().out
    assert "0 violations" in out


def test_validate_flags_bad_trace(tmp_path, capsys):
    bad = {
        "example_id": "bad",
        "sentence_token_range": [0, 0],
        "tokens": [
            {"text": "x", "span": [0, 1], "surprisal": 0.05, "entropy": None,
             "kl_ref": None, "max_prob": 0.5, "oddball": None, "cis_next": None}
        ],
    }
    path = tmp_path / "bad.jsonl"
    write_jsonl(path, [bad])
    assert main(["validate", str(path)]) == 1
    assert "below -log2(max_prob)" in capsys.readouterr().out


def test_featurize_then_train_then_eval(synth_dir, tmp_path):
    feat_dir = tmp_path / "features"
    assert main(
        [
            "featurize",
            "--dataset", str(synth_dir / "dataset.jsonl"),
            "--traces", str(synth_dir / "traces.jsonl"),
            "--feature-set", "full",
            "--out-dir", str(feat_dir),
        ]
    ) == 0
    ids, names, X = read_features_csv(feat_dir / "features.csv")
    assert len(ids) == 80 and len(names) == 178
    manifest = json.loads((feat_dir / "manifest.json").read_text())
    assert len(manifest) == 178

    model_path = tmp_path / "model.json"
    assert main(
        [
            "train",
            "--features", str(feat_dir / "features.csv"),
            "--errors", str(synth_dir / "errors.jsonl"),
            "--classifier", "logreg",
            "--out", str(model_path),
        ]
    ) == 0
    assert model_path.exists()

    eval_dir = tmp_path / "eval"
    assert main(
        [
            "eval",
            "--model", str(model_path),
            "--features", str(feat_dir / "features.csv"),
            "--errors", str(synth_dir / "errors.jsonl"),
            "--out-dir", str(eval_dir),
        ]
    ) == 0
    report = json.loads((eval_dir / "report.json").read_text())
    assert 0.0 <= report["error_f1"] <= 100.0


def test_featurize_deterministic_bytes(synth_dir, tmp_path):
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        assert main(
            [
                "featurize",
                "--dataset", str(synth_dir / "dataset.jsonl"),
                "--traces", str(synth_dir / "traces.jsonl"),
                "--out-dir", str(d),
            ]
        ) == 0
    assert (dirs[0] / "features.csv").read_bytes() == (dirs[1] / "features.csv").read_bytes()
    assert (dirs[0] / "manifest.json").read_bytes() == (dirs[1] / "manifest.json").read_bytes()


def test_eval_protocol_from_traces(synth_dir, tmp_path):
    out = tmp_path / "run"
    assert main(
        [
            "eval",
            "--dataset", str(synth_dir / "dataset.jsonl"),
            "--traces", str(synth_dir / "traces.jsonl"),
            "--errors", str(synth_dir / "errors.jsonl"),
            "--feature-set", "sentence",
            "--seeds", "0", "1",
            "--out-dir", str(out),
        ]
    ) == 0
    for name in ("features.csv", "manifest.json", "model.json", "report.json", "report.txt"):
        assert (out / name).exists()
    payload = json.loads((out / "report.json").read_text())
    assert payload["config"]["feature_set"] == "sentence"
    assert payload["report"]["seeds"] == [0, 1]


def test_eval_reports_are_reproducible(synth_dir, tmp_path):
    out = tmp_path / "run"
    argv = [
        "eval",
        "--dataset", str(synth_dir / "dataset.jsonl"),
        "--traces", str(synth_dir / "traces.jsonl"),
        "--errors", str(synth_dir / "errors.jsonl"),
        "--feature-set", "baseline:combined",
        "--seeds", "0",
        "--out-dir", str(out),
    ]
    assert main(argv) == 0
    first = {
        name: (out / name).read_bytes()
        for name in ("report.json", "features.csv", "model.json", "report.csv")
    }
    assert main(argv) == 0
    for name, blob in first.items():
        assert (out / name).read_bytes() == blob


def test_eval_baseline_single_column(synth_dir, tmp_path):
    out = tmp_path / "odd"
    assert main(
        [
            "eval",
            "--dataset", str(synth_dir / "dataset.jsonl"),
            "--traces", str(synth_dir / "traces.jsonl"),
            "--errors", str(synth_dir / "errors.jsonl"),
            "--feature-set", "baseline:odd",
            "--seeds", "0",
            "--out-dir", str(out),
        ]
    ) == 0
    _, names, X = read_features_csv(out / "features.csv")
    assert names == ("baseline.max_oddballness",)
    assert X.shape[1] == 1


def test_ablate_emits_deltas(synth_dir, tmp_path, capsys):
    out = tmp_path / "ablation"
    assert main(
        [
            "ablate",
            "--dataset", str(synth_dir / "dataset.jsonl"),
            "--traces", str(synth_dir / "traces.jsonl"),
            "--errors", str(synth_dir / "errors.jsonl"),
            "--seeds", "0",
            "--out-dir", str(out),
        ]
    ) == 0
    payload = json.loads((out / "ablation.json").read_text())
    assert set(payload["deltas"]) == {"spr", "h", "cws", "cis"}
    for measure, delta in payload["deltas"].items():
        expected = payload["reports"][measure]["error_f1"] - payload["full_error_f1"]
        assert abs(delta - expected) < 1e-6
    assert "drop spr" in capsys.readouterr().out


def test_report_table(synth_dir, tmp_path, capsys):
    run_dirs = []
    for fs in ("sentence", "baseline:combined"):
        out = tmp_path / fs.replace(":", "_")
        assert main(
            [
                "eval",
                "--dataset", str(synth_dir / "dataset.jsonl"),
                "--traces", str(synth_dir / "traces.jsonl"),
                "--errors", str(synth_dir / "errors.jsonl"),
                "--feature-set", fs,
                "--seeds", "0",
                "--out-dir", str(out),
            ]
        ) == 0
        run_dirs.append(out)
    table_dir = tmp_path / "tables"
    assert main(
        [
            "report",
            str(run_dirs[0] / "report.json"),
            str(run_dirs[1] / "report.json"),
            "--out-dir", str(table_dir),
        ]
    ) == 0
    text = (table_dir / "comparison.txt").read_text()
    assert "sentence" in text and "baseline:combined" in text
    csv_text = (table_dir / "comparison.csv").read_text()
    assert csv_text.splitlines()[0].startswith("name,error_f1,delta_error_f1")


def test_trace_toy_roundtrip(tmp_path, idiom_record):
    data = tmp_path / "data.jsonl"
    write_dataset([idiom_record], data)
    out = tmp_path / "traces.jsonl"
    model_out = tmp_path / "bigram.json"
    assert main(
        ["trace-toy", "--dataset", str(data), "--out", str(out)]
    ) == 0
    traces = read_traces(out)
    assert len(traces) == 1
    assert main(["validate", str(out)]) == 0
    first, last = traces[0].sentence_token_range
    prompt_text = "".join(t.token_text for t in traces[0].tokens)
    assert prompt_text[first : last + 1] == idiom_record.sentence


def test_trace_toy_trains_from_corpus_file(tmp_path, idiom_record):
    data = tmp_path / "data.jsonl"
    write_dataset([idiom_record], data)
    corpus = tmp_path / "corpus.txt"
    corpus.write_text("the quick brown fox kicked the bucket over and over", encoding="utf-8")
    out = tmp_path / "traces.jsonl"
    assert main(
        ["trace-toy", "--dataset", str(data), "--out", str(out),
         "--train-corpus", str(corpus), "--save-model", str(tmp_path / "m.json")]
    ) == 0
    assert (tmp_path / "m.json").exists()
    assert main(["validate", str(out)]) == 0


def test_eval_with_toy_trace_source(tmp_path, idiom_record):
    import time

    from errcast.corpus import ErrorLabel, write_error_labels, ExampleRecord

    records = []
    labels = []
    sentences = [
        ("He kicked the bucket.", 3, 20),
        ("She spilled the beans.", 4, 21),
        ("They broke the ice.", 5, 18),
        ("We hit the sack now.", 3, 15),
    ]
    for j in range(16):
        sentence, start, end = sentences[j % len(sentences)]
        records.append(
            ExampleRecord(
                id=f"t{j}", sentence=sentence, task_kind="idiom", gold_label="i",
                expression_char_span=(start, end),
            )
        )
        labels.append(ErrorLabel(f"t{j}", "i" if j % 2 else "l", j % 2 == 0))
    data = tmp_path / "data.jsonl"
    write_dataset(records, data)
    errors = tmp_path / "errors.jsonl"
    write_error_labels(labels, errors)
    out = tmp_path / "toyrun"
    t0 = time.perf_counter()
    assert main(
        [
            "eval",
            "--dataset", str(data),
            "--errors", str(errors),
            "--trace-source", "toy",
            "--feature-set", "sentence",
            "--seeds", "0",
            "--out-dir", str(out),
        ]
    ) == 0
    assert time.perf_counter() - t0 < 60.0
    assert (out / "report.json").exists()


def test_trace_toy_with_pretrained_model(tmp_path, idiom_record):
    data = tmp_path / "data.jsonl"
    write_dataset([idiom_record], data)
    from errcast.corpus import build_prompt

    model = train_bigram([build_prompt(idiom_record)])
    model_path = tmp_path / "model.json"
    save_model(model, model_path)
    out = tmp_path / "traces.jsonl"
    assert main(
        ["trace-toy", "--dataset", str(data), "--out", str(out), "--model", str(model_path)]
    ) == 0
    assert len(read_traces(out)) == 1


def test_stage_error_names_stage(tmp_path, capsys):
    missing = tmp_path / "nope.jsonl"
    code = main(
        ["eval", "--dataset", str(missing), "--out-dir", str(tmp_path / "x")]
    )
    assert code == 2
    assert "load_dataset" in capsys.readouterr().err
