"""Dataset reading and zero-shot prompt assembly.

Mirrors the consumer pipeline's wire contract: the dataset JSONL schema and
the fixed task prompt templates are shared interfaces between the two
packages, duplicated here so the extractor stays importable on its own.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass
from pathlib import Path

TEMPLATES = {
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


@dataclass(frozen=True)
class Example:
    id: str
    sentence: str
    task: str
    gold: str
    expression_span: tuple[int, int] | None
    instruction: str | None
    choices: tuple[str, ...] | None


def load_examples(path: str | Path) -> list[Example]:
    examples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            span = None
            if obj.get("expression") is not None:
                span = (int(obj["expression"]["start"]), int(obj["expression"]["end"]))
            choices = None
            if obj.get("choices") is not None:
                choices = tuple(str(c) for c in obj["choices"])
            try:
                examples.append(
                    Example(
                        id=str(obj["id"]),
                        sentence=str(obj["sentence"]),
                        task=str(obj["task"]),
                        gold=str(obj["gold"]),
                        expression_span=span,
                        instruction=obj.get("instruction"),
                        choices=choices,
                    )
                )
            except KeyError as exc:
                raise ValueError(f"{path}: line {lineno}: missing field {exc}") from exc
    return examples


def build_prompt(example: Example) -> str:
    if example.task == "multiple_choice":
        if not example.instruction or not example.choices:
            raise ValueError(f"example {example.id!r}: multiple_choice needs instruction and choices")
        options = "\n".join(
            f"{string.ascii_uppercase[i]}. {c}" for i, c in enumerate(example.choices)
        )
        return (
            "The following are multiple choice questions.\n"
            f"{example.instruction}\nYour options are:\n{options}"
        )
    if example.task not in TEMPLATES:
        raise ValueError(f"example {example.id!r}: unknown task {example.task!r}")
    if example.expression_span is None:
        raise ValueError(f"example {example.id!r}: task {example.task!r} needs an expression span")
    start, end = example.expression_span
    return TEMPLATES[example.task].format(
        expression=example.sentence[start:end], sentence=example.sentence
    )
