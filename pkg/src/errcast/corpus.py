"""Dataset ingestion, zero-shot prompt assembly, answer parsing, error labeling.

A dataset row pairs a context sentence with a task instruction and a gold
label; the annotated expression span (when present) marks the region of
likely misreading. Prompts are fixed zero-shot templates per task kind.
"""

from __future__ import annotations

import csv
import json
import re
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from errcast.util import read_jsonl, write_jsonl

TASK_KINDS = ("idiom", "metaphor", "metonymy", "multiple_choice")

#: Label alphabets for the fixed-alphabet tasks.
LABEL_ALPHABETS = {
    "idiom": ("i", "l"),
    "metaphor": ("m", "l"),
    "metonymy": ("m", "l"),
}

#: Sentinel returned by parse_prediction when no label can be extracted.
#: It is a value, not an error: downstream labeling policies decide its fate.
UNPARSEABLE = "<unparseable>"

_PROMPT_TEMPLATES = {
    "idiom": (
        "Is the expression '{expression}' used figuratively or literally in the "
        "sentence: {sentence} Answer 'i' for figurative, 'l' for literal.  "
        "Put your answer after 'output: '."
    ),
    "metaphor": (
        "Is the word '{expression}' used metaphorically or literally in the "
        "sentence: {sentence} Answer 'm' for metaphorical, 'l' for literal.  "
        "Put your answer after 'output: '."
    ),
    "metonymy": (
        "Is the word '{expression}' used metonymically or literally in the "
        "sentence: {sentence} Answer 'm' for metonymical, 'l' for literal.  "
        "Put your answer after 'output: '."
    ),
}

_MC_HEADER = "The following are multiple choice questions."
_MC_OPTIONS = "Your options are:"

_OUTPUT_MARKER = re.compile(r"output\s*:", re.IGNORECASE)
_FIRST_TOKEN = re.compile(r"[A-Za-z0-9]+")


@dataclass(frozen=True)
class ExampleRecord:
    """One dataset instance: sentence, optional expression span, task, gold."""

    id: str
    sentence: str
    task_kind: str
    gold_label: str
    expression_char_span: tuple[int, int] | None = None
    instruction: str | None = None
    choices: tuple[str, ...] | None = None

    def expression_text(self) -> str:
        if self.expression_char_span is None:
            raise ValueError(f"record {self.id!r} has no expression span")
        start, end = self.expression_char_span
        return self.sentence[start:end]

    def label_alphabet(self) -> tuple[str, ...]:
        if self.task_kind == "multiple_choice":
            return tuple(self.choices or ())
        return LABEL_ALPHABETS[self.task_kind]


@dataclass(frozen=True)
class ErrorLabel:
    """Gold-vs-predicted outcome for one example; e=1 means the model erred."""

    example_id: str
    predicted: str
    e: int


def normalize_label(text: str) -> str:
    """Lowercase, collapse whitespace, strip surrounding punctuation."""
    collapsed = re.sub(r"\s+", " ", text.strip().lower())
    return collapsed.strip(string.punctuation + string.whitespace)


def _validate_record(rec: ExampleRecord, where: str) -> None:
    if rec.task_kind not in TASK_KINDS:
        raise ValueError(f"{where}: field 'task': unknown task kind {rec.task_kind!r}")
    if rec.expression_char_span is not None:
        start, end = rec.expression_char_span
        if not (0 <= start < end <= len(rec.sentence)):
            raise ValueError(
                f"{where}: field 'expression': span [{start}, {end}) out of bounds "
                f"for sentence of length {len(rec.sentence)}"
            )
    if rec.task_kind == "multiple_choice":
        if not rec.choices:
            raise ValueError(f"{where}: field 'choices': required for multiple_choice")
        if rec.gold_label not in rec.choices:
            raise ValueError(
                f"{where}: field 'gold': {rec.gold_label!r} is not one of the choices"
            )
    else:
        alphabet = LABEL_ALPHABETS[rec.task_kind]
        if normalize_label(rec.gold_label) not in alphabet:
            raise ValueError(
                f"{where}: field 'gold': {rec.gold_label!r} not in alphabet {alphabet}"
            )


def _record_from_obj(obj: dict, where: str) -> ExampleRecord:
    for field_name in ("id", "sentence", "task", "gold"):
        if field_name not in obj or obj[field_name] is None:
            raise ValueError(f"{where}: field {field_name!r}: missing")
    span = None
    if obj.get("expression") is not None:
        expr = obj["expression"]
        try:
            span = (int(expr["start"]), int(expr["end"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{where}: field 'expression': malformed ({exc})") from exc
    choices = None
    if obj.get("choices") is not None:
        choices = tuple(str(c) for c in obj["choices"])
    rec = ExampleRecord(
        id=str(obj["id"]),
        sentence=str(obj["sentence"]),
        task_kind=str(obj["task"]),
        gold_label=str(obj["gold"]),
        expression_char_span=span,
        instruction=None if obj.get("instruction") is None else str(obj["instruction"]),
        choices=choices,
    )
    _validate_record(rec, where)
    return rec


def load_dataset(path: str | Path, format: str | None = None) -> list[ExampleRecord]:
    """Load dataset rows from JSONL or CSV, preserving order.

    Malformed rows raise ValueError naming the row and offending field.
    """
    path = Path(path)
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "jsonl"
    if format not in ("jsonl", "csv"):
        raise ValueError(f"unknown dataset format {format!r}")
    records: list[ExampleRecord] = []
    if format == "jsonl":
        for lineno, obj in read_jsonl(path):
            records.append(_record_from_obj(obj, f"{path}: row {lineno}"))
    else:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            for rowno, row in enumerate(reader, start=1):
                obj: dict = {
                    "id": row.get("id"),
                    "sentence": row.get("sentence"),
                    "task": row.get("task"),
                    "gold": row.get("gold"),
                    "instruction": row.get("instruction") or None,
                }
                span_text = (row.get("expression") or "").strip()
                if span_text:
                    parts = span_text.split(":")
                    if len(parts) != 2:
                        raise ValueError(
                            f"{path}: row {rowno}: field 'expression': "
                            f"expected 'start:end', got {span_text!r}"
                        )
                    obj["expression"] = {"start": parts[0], "end": parts[1]}
                else:
                    obj["expression"] = None
                choices_text = (row.get("choices") or "").strip()
                obj["choices"] = json.loads(choices_text) if choices_text else None
                records.append(_record_from_obj(obj, f"{path}: row {rowno}"))
    return records


def write_dataset(records: Iterable[ExampleRecord], path: str | Path) -> None:
    """Write records as dataset JSONL (inverse of load_dataset)."""
    rows = []
    for rec in records:
        span = None
        if rec.expression_char_span is not None:
            span = {"start": rec.expression_char_span[0], "end": rec.expression_char_span[1]}
        rows.append(
            {
                "id": rec.id,
                "sentence": rec.sentence,
                "expression": span,
                "task": rec.task_kind,
                "instruction": rec.instruction,
                "gold": rec.gold_label,
                "choices": list(rec.choices) if rec.choices is not None else None,
            }
        )
    write_jsonl(path, rows)


def _choice_letter(index: int) -> str:
    return string.ascii_uppercase[index]


def build_prompt(rec: ExampleRecord) -> str:
    """Render the zero-shot prompt for a record.

    The context sentence must appear verbatim exactly once in the result so
    that trace producers can locate it by character offset.
    """
    if not rec.sentence:
        raise ValueError(f"record {rec.id!r}: empty sentence")
    if rec.task_kind == "multiple_choice":
        if not rec.instruction:
            raise ValueError(f"record {rec.id!r}: multiple_choice requires an instruction")
        if not rec.choices:
            raise ValueError(f"record {rec.id!r}: multiple_choice requires choices")
        option_lines = "\n".join(
            f"{_choice_letter(i)}. {choice}" for i, choice in enumerate(rec.choices)
        )
        prompt = f"{_MC_HEADER}\n{rec.instruction}\n{_MC_OPTIONS}\n{option_lines}"
    else:
        if rec.expression_char_span is None:
            raise ValueError(f"record {rec.id!r}: task {rec.task_kind!r} requires an expression span")
        prompt = _PROMPT_TEMPLATES[rec.task_kind].format(
            expression=rec.expression_text(), sentence=rec.sentence
        )
    occurrences = prompt.count(rec.sentence)
    if occurrences != 1:
        raise ValueError(
            f"record {rec.id!r}: sentence occurs {occurrences} times in the prompt, expected 1"
        )
    return prompt


def parse_prediction(raw_output: str, rec: ExampleRecord) -> str:
    """Extract the predicted label from a model generation.

    Takes the text after the last 'output:' marker (case-insensitive). For
    the fixed-alphabet tasks the first alphanumeric token must be a member
    of the task alphabet. Multiple-choice falls back to matching the whole
    output when the marker is absent; match order is exact choice string,
    then choice letter. Returns UNPARSEABLE when nothing matches.
    """
    markers = list(_OUTPUT_MARKER.finditer(raw_output))
    candidate = raw_output[markers[-1].end():] if markers else None

    if rec.task_kind != "multiple_choice":
        if candidate is None:
            return UNPARSEABLE
        match = _FIRST_TOKEN.search(candidate)
        if match is None:
            return UNPARSEABLE
        token = match.group(0).lower()
        return token if token in rec.label_alphabet() else UNPARSEABLE

    choices = rec.choices or ()
    text = candidate if candidate is not None else raw_output
    normalized = normalize_label(text)
    for choice in choices:
        if normalized == normalize_label(choice):
            return choice
    match = _FIRST_TOKEN.search(text)
    if match is not None:
        token = match.group(0).lower()
        if len(token) == 1 and token.isalpha():
            index = ord(token) - ord("a")
            if 0 <= index < len(choices):
                return choices[index]
    return UNPARSEABLE


def label_errors(
    records: Sequence[ExampleRecord],
    predictions: Mapping[str, str],
    unparseable_policy: str = "count_as_error",
) -> tuple[list[ErrorLabel], float]:
    """Compare predictions with gold labels; return labels and accuracy.

    Under count_as_error an unparseable prediction scores e=1; under drop
    such rows are excluded from both the labels and the accuracy.
    """
    if unparseable_policy not in ("count_as_error", "drop"):
        raise ValueError(f"unknown unparseable_policy {unparseable_policy!r}")
    record_ids = [rec.id for rec in records]
    missing = [rid for rid in record_ids if rid not in predictions]
    extra = set(predictions) - set(record_ids)
    if missing or extra:
        raise ValueError(
            f"prediction ids do not align with records "
            f"(missing={sorted(missing)[:5]}, extra={sorted(extra)[:5]})"
        )
    labels: list[ErrorLabel] = []
    for rec in records:
        predicted = predictions[rec.id]
        if predicted == UNPARSEABLE:
            if unparseable_policy == "drop":
                continue
            labels.append(ErrorLabel(rec.id, predicted, 1))
            continue
        err = int(normalize_label(predicted) != normalize_label(rec.gold_label))
        labels.append(ErrorLabel(rec.id, predicted, err))
    if not labels:
        raise ValueError("no rows left after dropping unparseable predictions")
    accuracy = sum(1 - lab.e for lab in labels) / len(labels)
    return labels, accuracy


def write_error_labels(labels: Iterable[ErrorLabel], path: str | Path) -> None:
    write_jsonl(
        path,
        ({"example_id": lab.example_id, "predicted": lab.predicted, "e": lab.e} for lab in labels),
    )


def read_error_labels(path: str | Path) -> list[ErrorLabel]:
    labels = []
    for lineno, obj in read_jsonl(path):
        try:
            labels.append(ErrorLabel(str(obj["example_id"]), str(obj["predicted"]), int(obj["e"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}: line {lineno}: malformed error label ({exc})") from exc
    return labels


def read_predictions(path: str | Path) -> dict[str, str]:
    """Read a predictions JSONL of {"example_id", "raw_output"} objects."""
    preds: dict[str, str] = {}
    for lineno, obj in read_jsonl(path):
        if "example_id" not in obj or "raw_output" not in obj:
            raise ValueError(f"{path}: line {lineno}: expected example_id and raw_output")
        preds[str(obj["example_id"])] = str(obj["raw_output"])
    return preds
