"""Per-token likelihood traces: schema, validation, and span-to-token mapping.

A trace decouples language-model scoring from feature computation: any
producer (toy bigram model, served API, local checkpoint) emits the same
JSONL schema, with nulls marking scalars the producer could not provide.
All log quantities are base 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from errcast.util import read_jsonl, write_jsonl

LOG_BASE = 2

#: Scalar fields a producer may supply, keyed by availability-mask name.
TRACE_FIELDS = {
    "surprisal": "surprisal_bits",
    "entropy": "entropy_bits",
    "kl": "kl_to_reference_bits",
    "maxprob": "max_prob",
    "oddball": "oddball_sum",
    "cis": "cis_second_term_bits",
}

_EPS = 1e-9


@dataclass(frozen=True)
class TokenStep:
    """Likelihood scalars for one token position; None means unavailable."""

    token_text: str
    char_span: tuple[int, int]
    surprisal_bits: float | None
    entropy_bits: float | None = None
    kl_to_reference_bits: float | None = None
    max_prob: float | None = None
    oddball_sum: float | None = None
    cis_second_term_bits: float | None = None

    def availability(self) -> frozenset[str]:
        return frozenset(
            name for name, attr in TRACE_FIELDS.items() if getattr(self, attr) is not None
        )


@dataclass(frozen=True)
class TokenTrace:
    """Ordered token steps for one prompt plus the sentence's token range.

    sentence_token_range is inclusive on both ends.
    """

    example_id: str
    tokens: tuple[TokenStep, ...]
    sentence_token_range: tuple[int, int]

    def sentence_indices(self) -> tuple[int, ...]:
        first, last = self.sentence_token_range
        return tuple(range(first, last + 1))


def validate_trace(trace: TokenTrace) -> list[str]:
    """Return every invariant violation with its token index; [] means ok."""
    violations: list[str] = []
    n = len(trace.tokens)
    first, last = trace.sentence_token_range
    if not (0 <= first <= last < n):
        violations.append(
            f"sentence_token_range [{first}, {last}] outside token range [0, {n})"
        )
    prev_end: int | None = None
    for i, tok in enumerate(trace.tokens):
        start, end = tok.char_span
        if start >= end:
            violations.append(f"token {i}: empty or inverted char span [{start}, {end})")
        if prev_end is not None and start < prev_end:
            violations.append(f"token {i}: char span [{start}, {end}) overlaps previous")
        prev_end = end
        if tok.surprisal_bits is not None and tok.surprisal_bits < -_EPS:
            violations.append(f"token {i}: surprisal {tok.surprisal_bits} < 0")
        if tok.entropy_bits is not None and tok.entropy_bits < -_EPS:
            violations.append(f"token {i}: entropy {tok.entropy_bits} < 0")
        if tok.kl_to_reference_bits is not None and tok.kl_to_reference_bits < -_EPS:
            violations.append(f"token {i}: kl_ref {tok.kl_to_reference_bits} < 0")
        if tok.max_prob is not None and not (0.0 < tok.max_prob <= 1.0 + 1e-12):
            violations.append(f"token {i}: max_prob {tok.max_prob} outside (0, 1]")
        if tok.oddball_sum is not None and not (-1e-12 <= tok.oddball_sum <= 1.0 + _EPS):
            violations.append(f"token {i}: oddball_sum {tok.oddball_sum} outside [0, 1]")
        if tok.surprisal_bits is not None and tok.max_prob is not None and tok.max_prob > 0:
            # p_observed <= max_prob, so surprisal >= -log2(max_prob)
            floor = -math.log2(tok.max_prob)
            if tok.surprisal_bits < floor - 1e-6:
                violations.append(
                    f"token {i}: surprisal {tok.surprisal_bits} below -log2(max_prob) {floor}"
                )
    return violations


def map_span(trace: TokenTrace, char_span: tuple[int, int]) -> tuple[int, ...]:
    """Token indices whose char span overlaps [start, end).

    Overlap rather than containment: subword tokenizers split annotated
    words, and a span edge may land mid-token.
    """
    start, end = char_span
    if start >= end:
        raise ValueError(f"empty char span [{start}, {end})")
    indices = tuple(
        i
        for i, tok in enumerate(trace.tokens)
        if tok.char_span[0] < end and tok.char_span[1] > start
    )
    if not indices:
        raise ValueError(
            f"char span [{start}, {end}) maps to no tokens "
            f"(annotation/tokenization mismatch in {trace.example_id!r})"
        )
    return indices


@dataclass(frozen=True)
class GranularitySets:
    """The four token-index sets features aggregate over."""

    sentence: tuple[int, ...]
    expression: tuple[int, ...]
    boundary: tuple[int, ...]
    context: tuple[int, ...]

    def as_dict(self) -> dict[str, tuple[int, ...]]:
        return {
            "sentence": self.sentence,
            "expression": self.expression,
            "boundary": self.boundary,
            "context": self.context,
        }


def granularity_index_sets(
    trace: TokenTrace, expr_indices: Sequence[int]
) -> GranularitySets:
    """Derive sentence/expression/boundary/context index sets.

    Boundary is the one token on each side of the expression, clipped to the
    sentence; context is the sentence with the expression removed. Empty
    boundary or context sets are permitted (callers flag them downstream).
    """
    sentence = trace.sentence_indices()
    sentence_set = set(sentence)
    expr = tuple(sorted(set(expr_indices)))
    if not expr:
        raise ValueError("expression index set is empty")
    if not set(expr) <= sentence_set:
        raise ValueError(
            f"expression indices {sorted(set(expr) - sentence_set)} fall outside "
            f"the sentence token range {trace.sentence_token_range}"
        )
    boundary = tuple(
        sorted({expr[0] - 1, expr[-1] + 1} & sentence_set)
    )
    context = tuple(i for i in sentence if i not in set(expr))
    return GranularitySets(sentence=sentence, expression=expr, boundary=boundary, context=context)


def _step_to_obj(step: TokenStep) -> dict:
    return {
        "text": step.token_text,
        "span": [step.char_span[0], step.char_span[1]],
        "surprisal": step.surprisal_bits,
        "entropy": step.entropy_bits,
        "kl_ref": step.kl_to_reference_bits,
        "max_prob": step.max_prob,
        "oddball": step.oddball_sum,
        "cis_next": step.cis_second_term_bits,
    }


def _step_from_obj(obj: dict, where: str) -> TokenStep:
    try:
        span = (int(obj["span"][0]), int(obj["span"][1]))
        return TokenStep(
            token_text=str(obj["text"]),
            char_span=span,
            surprisal_bits=None if obj.get("surprisal") is None else float(obj["surprisal"]),
            entropy_bits=None if obj.get("entropy") is None else float(obj["entropy"]),
            kl_to_reference_bits=None if obj.get("kl_ref") is None else float(obj["kl_ref"]),
            max_prob=None if obj.get("max_prob") is None else float(obj["max_prob"]),
            oddball_sum=None if obj.get("oddball") is None else float(obj["oddball"]),
            cis_second_term_bits=None if obj.get("cis_next") is None else float(obj["cis_next"]),
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ValueError(f"{where}: malformed token step ({exc})") from exc


def write_traces(traces: Iterable[TokenTrace], path: str | Path) -> None:
    write_jsonl(
        path,
        (
            {
                "example_id": tr.example_id,
                "sentence_token_range": [tr.sentence_token_range[0], tr.sentence_token_range[1]],
                "tokens": [_step_to_obj(tok) for tok in tr.tokens],
            }
            for tr in traces
        ),
    )


def read_traces(path: str | Path) -> list[TokenTrace]:
    traces = []
    for lineno, obj in read_jsonl(path):
        where = f"{path}: line {lineno}"
        try:
            rng = (int(obj["sentence_token_range"][0]), int(obj["sentence_token_range"][1]))
            tokens = tuple(
                _step_from_obj(tok, f"{where}: token {i}") for i, tok in enumerate(obj["tokens"])
            )
        except (KeyError, TypeError, IndexError) as exc:
            raise ValueError(f"{where}: malformed trace ({exc})") from exc
        traces.append(
            TokenTrace(example_id=str(obj["example_id"]), tokens=tokens, sentence_token_range=rng)
        )
    return traces
