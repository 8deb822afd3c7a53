"""Feature vectors over measure series: aggregates, span features, baselines.

The full vector is a stable 89-entry manifest: 4 measures x 4 granularities
x 4 aggregators (64), four span-shape features per measure (16), one
surprisal contrast ratio, and normalized min/max positions per measure (8).
Every entry carries a validity flag; invalid entries are zero-valued and the
flags themselves become 0/1 classifier features so matrices stay
rectangular.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from errcast.measures import (
    CwsConfig,
    Measure,
    MeasureSeries,
    MeasureUnavailableError,
    series_from_trace,
)
from errcast.trace import GranularitySets, TokenTrace, granularity_index_sets, map_span
from errcast.util import fmt10

FEATURE_MEASURES = (Measure.SPR, Measure.H, Measure.CWS, Measure.CIS)
GRANULARITIES = ("sentence", "expression", "boundary", "context")
AGGREGATORS = ("mean", "max", "min", "std")
SENTENCE_AGGREGATORS = ("mean", "max")

CONTRAST_EPSILON = 1e-6


@dataclass(frozen=True)
class FeatureName:
    name: str
    kind: str
    measure: str | None
    granularity: str | None = None
    aggregator: str | None = None


def _build_full_manifest() -> tuple[FeatureName, ...]:
    entries: list[FeatureName] = []
    for m in FEATURE_MEASURES:
        for g in GRANULARITIES:
            for a in AGGREGATORS:
                entries.append(FeatureName(f"{m.value}.{g}.{a}", "aggregate", m.value, g, a))
    for kind in ("mono_decrease", "spike_count", "boundary_shift", "peak_in_span"):
        for m in FEATURE_MEASURES:
            entries.append(FeatureName(f"{m.value}.{kind}", kind, m.value))
    entries.append(FeatureName("spr.contrast_ratio", "contrast_ratio", "spr"))
    for m in FEATURE_MEASURES:
        entries.append(FeatureName(f"{m.value}.p_min", "p_min", m.value))
        entries.append(FeatureName(f"{m.value}.p_max", "p_max", m.value))
    return tuple(entries)


FULL_MANIFEST: tuple[FeatureName, ...] = _build_full_manifest()
FULL_MANIFEST_NAMES: tuple[str, ...] = tuple(entry.name for entry in FULL_MANIFEST)

SENTENCE_MANIFEST: tuple[FeatureName, ...] = tuple(
    FeatureName(f"{m.value}.sentence.{a}", "aggregate", m.value, "sentence", a)
    for m in FEATURE_MEASURES
    for a in SENTENCE_AGGREGATORS
)
SENTENCE_MANIFEST_NAMES: tuple[str, ...] = tuple(entry.name for entry in SENTENCE_MANIFEST)

BASELINE_NAMES = (
    "baseline.mean_log_prob",
    "baseline.mean_max_token_prob",
    "baseline.max_oddballness",
)


@dataclass(frozen=True)
class FeatureVector:
    example_id: str
    values: tuple[float, ...]
    manifest: tuple[str, ...]
    validity: tuple[bool, ...]

    def __post_init__(self) -> None:
        if not (len(self.values) == len(self.manifest) == len(self.validity)):
            raise ValueError("values, manifest, and validity lengths differ")

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.manifest, self.values))


@dataclass(frozen=True)
class BaselineVector:
    """The three scalar input-likelihood baselines over the sentence."""

    example_id: str
    mean_log_prob: float
    mean_max_token_prob: float
    max_oddballness: float
    validity: tuple[bool, bool, bool] = (True, True, True)

    @property
    def values(self) -> tuple[float, float, float]:
        return (self.mean_log_prob, self.mean_max_token_prob, self.max_oddballness)


def _available(series: MeasureSeries, indices: Sequence[int]) -> list[int]:
    return [i for i in indices if series.available[i]]


def aggregate(
    series: MeasureSeries, index_set: Sequence[int], op: str
) -> tuple[float, bool]:
    """Aggregate a series over an index set; empty sets yield (0.0, invalid).

    std is the population standard deviation; a singleton set has std 0.
    """
    if op not in AGGREGATORS:
        raise ValueError(f"unknown aggregator {op!r}")
    usable = _available(series, index_set)
    if not usable:
        return 0.0, False
    vals = series.values[usable]
    if op == "mean":
        return float(vals.mean()), True
    if op == "max":
        return float(vals.max()), True
    if op == "min":
        return float(vals.min()), True
    return float(vals.std()), True


def monotonic_decrease(series: MeasureSeries, expr_indices: Sequence[int]) -> tuple[int, bool]:
    """1 iff the measure strictly decreases across the ordered span.

    A singleton span is vacuously decreasing. Requires every span position
    to be available.
    """
    expr = sorted(expr_indices)
    if not expr:
        raise ValueError("expression index set is empty")
    if any(not series.available[i] for i in expr):
        return 0, False
    vals = [series.values[i] for i in expr]
    decreasing = all(vals[k] > vals[k + 1] for k in range(len(vals) - 1))
    return int(decreasing), True


def spike_count(
    series: MeasureSeries, expr_indices: Sequence[int], sentence_indices: Sequence[int]
) -> tuple[int, bool]:
    """Number of in-span local maxima against both sentence neighbors.

    Span positions missing a sentence neighbor (or any of the three values)
    are skipped rather than counted.
    """
    sentence = set(sentence_indices)
    expr = sorted(expr_indices)
    if not _available(series, expr):
        return 0, False
    count = 0
    for i in expr:
        if (i - 1) not in sentence or (i + 1) not in sentence:
            continue
        if not (series.available[i - 1] and series.available[i] and series.available[i + 1]):
            continue
        if series.values[i] > series.values[i - 1] and series.values[i] > series.values[i + 1]:
            count += 1
    return count, True


def boundary_shift(
    series: MeasureSeries, expr_indices: Sequence[int], sentence_indices: Sequence[int]
) -> tuple[float, bool]:
    """Measure change from the span's final token to the token after it.

    Invalid when the span ends the sentence or either value is unavailable.
    """
    expr = sorted(expr_indices)
    if not expr:
        raise ValueError("expression index set is empty")
    end = expr[-1]
    post = end + 1
    if post not in set(sentence_indices):
        return 0.0, False
    if not (series.available[end] and series.available[post]):
        return 0.0, False
    return float(series.values[post] - series.values[end]), True


def peak_in_span(
    series: MeasureSeries, expr_indices: Sequence[int], sentence_indices: Sequence[int]
) -> tuple[int, bool]:
    """1 iff the sentence-wide maximum (first occurrence on ties) is in-span."""
    usable = _available(series, sentence_indices)
    if not usable:
        return 0, False
    best = max(usable, key=lambda i: (series.values[i], -i))
    return int(best in set(expr_indices)), True


def contrast_ratio(
    spr_series: MeasureSeries,
    expr_indices: Sequence[int],
    sentence_indices: Sequence[int],
    epsilon: float = CONTRAST_EPSILON,
) -> tuple[float, bool]:
    """Peak in-span surprisal relative to total out-of-span surprisal."""
    expr = set(expr_indices)
    usable_expr = _available(spr_series, sorted(expr))
    if not usable_expr:
        return 0.0, False
    peak = max(float(spr_series.values[i]) for i in usable_expr)
    rest = [i for i in sentence_indices if i not in expr]
    rest_sum = sum(float(spr_series.values[i]) for i in _available(spr_series, rest))
    return peak / (rest_sum + epsilon), True


def extreme_positions(
    series: MeasureSeries, sentence_indices: Sequence[int]
) -> tuple[tuple[float, float], bool]:
    """Normalized 1-based positions of the sentence min and max.

    Ties resolve to the first occurrence; positions divide by the full
    sentence length so values lie in (0, 1].
    """
    sentence = list(sentence_indices)
    if not sentence:
        raise ValueError("sentence index set is empty")
    usable = _available(series, sentence)
    if not usable:
        return (0.0, 0.0), False
    lo = min(usable, key=lambda i: (series.values[i], i))
    hi = max(usable, key=lambda i: (series.values[i], -i))
    n = len(sentence)
    first = sentence[0]
    return ((lo - first + 1) / n, (hi - first + 1) / n), True


def _series_or_none(
    trace: TokenTrace, measure: Measure, cws_config: CwsConfig | None
) -> MeasureSeries | None:
    try:
        return series_from_trace(trace, measure, cws_config)
    except MeasureUnavailableError:
        return None


def build_full_features(
    trace: TokenTrace,
    expr_char_span: tuple[int, int],
    cws_config: CwsConfig | None = None,
) -> FeatureVector:
    """Assemble the 89-entry span-localized feature vector for one trace.

    expr_char_span is in prompt coordinates. Measures the trace cannot
    supply produce invalid-flagged zeros; the vector stays full length.
    """
    expr_indices = map_span(trace, expr_char_span)
    sets = granularity_index_sets(trace, expr_indices)
    series = {m: _series_or_none(trace, m, cws_config) for m in FEATURE_MEASURES}

    values: list[float] = []
    validity: list[bool] = []

    def push(result: tuple[float, bool] | None) -> None:
        if result is None:
            values.append(0.0)
            validity.append(False)
        else:
            values.append(float(result[0]))
            validity.append(bool(result[1]))

    by_granularity = sets.as_dict()
    for m in FEATURE_MEASURES:
        s = series[m]
        for g in GRANULARITIES:
            idx = by_granularity[g]
            for a in AGGREGATORS:
                push(None if s is None or not idx else aggregate(s, idx, a))
    for m in FEATURE_MEASURES:
        s = series[m]
        push(None if s is None else monotonic_decrease(s, sets.expression))
    for m in FEATURE_MEASURES:
        s = series[m]
        push(None if s is None else spike_count(s, sets.expression, sets.sentence))
    for m in FEATURE_MEASURES:
        s = series[m]
        push(None if s is None else boundary_shift(s, sets.expression, sets.sentence))
    for m in FEATURE_MEASURES:
        s = series[m]
        push(None if s is None else peak_in_span(s, sets.expression, sets.sentence))
    spr = series[Measure.SPR]
    push(None if spr is None else contrast_ratio(spr, sets.expression, sets.sentence))
    for m in FEATURE_MEASURES:
        s = series[m]
        if s is None:
            push(None)
            push(None)
        else:
            (p_min, p_max), ok = extreme_positions(s, sets.sentence)
            push((p_min, ok))
            push((p_max, ok))

    return FeatureVector(
        example_id=trace.example_id,
        values=tuple(values),
        manifest=FULL_MANIFEST_NAMES,
        validity=tuple(validity),
    )


def build_sentence_features(
    trace: TokenTrace, cws_config: CwsConfig | None = None
) -> FeatureVector:
    """The 8-entry sentence-level restriction: mean and max per measure."""
    sentence = trace.sentence_indices()
    values: list[float] = []
    validity: list[bool] = []
    for m in FEATURE_MEASURES:
        s = _series_or_none(trace, m, cws_config)
        for a in SENTENCE_AGGREGATORS:
            if s is None:
                values.append(0.0)
                validity.append(False)
            else:
                val, ok = aggregate(s, sentence, a)
                values.append(val)
                validity.append(ok)
    return FeatureVector(
        example_id=trace.example_id,
        values=tuple(values),
        manifest=SENTENCE_MANIFEST_NAMES,
        validity=tuple(validity),
    )


def build_baselines(trace: TokenTrace) -> BaselineVector:
    """The three scalar baselines computed over the sentence tokens.

    mean_max_token_prob skips the last sentence position (causal shifting
    leaves it without a successor in the producer's scoring pass).
    """
    sentence = list(trace.sentence_indices())
    logp_vals = [
        -trace.tokens[i].surprisal_bits
        for i in sentence
        if trace.tokens[i].surprisal_bits is not None
    ]
    maxp_positions = sentence[:-1]
    maxp_vals = [
        trace.tokens[i].max_prob for i in maxp_positions if trace.tokens[i].max_prob is not None
    ]
    odd_vals = [
        trace.tokens[i].oddball_sum for i in sentence if trace.tokens[i].oddball_sum is not None
    ]
    mean_log_prob = float(np.mean(logp_vals)) if logp_vals else 0.0
    mean_max = float(np.mean(maxp_vals)) if maxp_vals else 0.0
    max_odd = float(np.max(odd_vals)) if odd_vals else 0.0
    return BaselineVector(
        example_id=trace.example_id,
        mean_log_prob=mean_log_prob,
        mean_max_token_prob=mean_max,
        max_oddballness=max_odd,
        validity=(bool(logp_vals), bool(maxp_vals), bool(odd_vals)),
    )


def measure_of_feature(name: str) -> str:
    """The measure tag a feature name belongs to (its leading component)."""
    return name.split(".", 1)[0]


def ablate(vector: FeatureVector, drop_measure: str, missing_ok: bool = False) -> FeatureVector:
    """Remove every manifest entry tagged with the given measure."""
    tags = {m.value for m in FEATURE_MEASURES}
    drop = drop_measure.lower()
    if drop not in tags:
        raise ValueError(f"unknown measure {drop_measure!r}; expected one of {sorted(tags)}")
    keep = [i for i, name in enumerate(vector.manifest) if measure_of_feature(name) != drop]
    if len(keep) == len(vector.manifest) and not missing_ok:
        raise ValueError(f"measure {drop_measure!r} not present in manifest")
    return FeatureVector(
        example_id=vector.example_id,
        values=tuple(vector.values[i] for i in keep),
        manifest=tuple(vector.manifest[i] for i in keep),
        validity=tuple(vector.validity[i] for i in keep),
    )


def feature_matrix(vectors: Sequence[FeatureVector]) -> tuple[list[str], tuple[str, ...], np.ndarray]:
    """Stack vectors into (ids, column names, X) with validity flag columns.

    Columns are the manifest values followed by one 0/1 column per entry
    (name suffixed with _valid) so classifiers can exploit missingness.
    """
    if not vectors:
        raise ValueError("no feature vectors to stack")
    manifest = vectors[0].manifest
    for vec in vectors:
        if vec.manifest != manifest:
            raise ValueError(
                f"manifest mismatch for {vec.example_id!r}: feature matrices must be rectangular"
            )
    ids = [vec.example_id for vec in vectors]
    names = tuple(manifest) + tuple(f"{name}_valid" for name in manifest)
    rows = [
        list(vec.values) + [float(flag) for flag in vec.validity] for vec in vectors
    ]
    return ids, names, np.asarray(rows, dtype=float)


def baseline_matrix(
    vectors: Sequence[BaselineVector], which: str = "combined"
) -> tuple[list[str], tuple[str, ...], np.ndarray]:
    """Stack baseline vectors; `which` picks one scalar or all three jointly."""
    columns = {
        "logprob": (0,),
        "maxprob": (1,),
        "odd": (2,),
        "combined": (0, 1, 2),
    }
    if which not in columns:
        raise ValueError(f"unknown baseline {which!r}; expected one of {sorted(columns)}")
    cols = columns[which]
    ids = [vec.example_id for vec in vectors]
    names = tuple(BASELINE_NAMES[c] for c in cols)
    rows = [[vec.values[c] for c in cols] for vec in vectors]
    return ids, names, np.asarray(rows, dtype=float)


def write_features_csv(
    path: str | Path, ids: Sequence[str], names: Sequence[str], matrix: np.ndarray
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["example_id", *names])
        for rid, row in zip(ids, matrix):
            writer.writerow([rid, *(fmt10(v) for v in row)])


def read_features_csv(path: str | Path) -> tuple[list[str], tuple[str, ...], np.ndarray]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "example_id":
            raise ValueError(f"{path}: expected a feature CSV with an example_id column")
        names = tuple(header[1:])
        ids = []
        rows = []
        for row in reader:
            ids.append(row[0])
            rows.append([float(v) for v in row[1:]])
    return ids, names, np.asarray(rows, dtype=float)


def manifest_entries(names: Sequence[str]) -> list[dict]:
    """Sidecar manifest records for a set of feature columns."""
    lookup = {entry.name: entry for entry in FULL_MANIFEST + SENTENCE_MANIFEST}
    entries = []
    for i, name in enumerate(names):
        base = name[: -len("_valid")] if name.endswith("_valid") else name
        entry = lookup.get(base)
        record = {
            "name": name,
            "index": i,
            "measure": entry.measure if entry else None,
            "granularity": entry.granularity if entry else None,
        }
        if entry and entry.kind == "aggregate":
            record["aggregator"] = entry.aggregator
        else:
            record["feature_kind"] = entry.kind if entry else "baseline"
        if name.endswith("_valid"):
            record["feature_kind"] = "validity_flag"
            record["flags"] = base
        entries.append(record)
    return entries


def write_manifest_json(path: str | Path, names: Sequence[str]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest_entries(names), indent=2) + "\n", encoding="utf-8")
