"""Synthetic error-prediction experiments with planted likelihood signals.

Every example gets a surprisal spike; its placement (inside vs outside the
annotated span) follows the error label with coupling probability rho, so
span-localized features see a clean location signal. Error-configured rows
additionally get a mild sentence-wide entropy lift buried in per-example
entropy noise, giving sentence-level features a weaker view of the same
coupling. The three scalar baselines see neither: the spike treatment is
identical for both classes and none of the baseline scalars involves
entropy. Spurious kl_ref spikes at random positions keep the CWS channel
from simply mirroring the surprisal spike. All injected components scale
with spike_magnitude, so magnitude 0 produces a pure null experiment.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, replace

import numpy as np

from errcast.corpus import ErrorLabel, ExampleRecord
from errcast.toy_lm import BigramModel, sample_text, trace_prompt, train_bigram
from errcast.trace import TokenStep, TokenTrace

_SYMBOL_POOL = string.ascii_lowercase + string.ascii_uppercase + string.digits

#: Injected-signal shape relative to spike_magnitude.
ENTROPY_LIFT_FRACTION = 0.05
ENTROPY_NOISE_FRACTION = 0.025
KL_POLLUTION_RATE = 2.0
SPIKE_JITTER = 0.25


@dataclass(frozen=True)
class SyntheticSpec:
    """Scale and signal strength of a synthetic experiment."""

    n_examples: int = 2000
    vocab_size: int = 16
    span_length: int = 5
    spike_magnitude: float = 8.0
    error_coupling: float = 0.9
    sentence_length: int = 32

    def __post_init__(self) -> None:
        if self.n_examples < 10:
            raise ValueError("need at least 10 examples")
        if not 2 <= self.vocab_size <= len(_SYMBOL_POOL):
            raise ValueError(f"vocab_size must be in [2, {len(_SYMBOL_POOL)}]")
        if self.span_length < 1:
            raise ValueError("span_length must be >= 1")
        if self.sentence_length < self.span_length + 3:
            raise ValueError("sentence must leave room around the span")
        if self.spike_magnitude < 0:
            raise ValueError("spike_magnitude must be nonnegative")
        if not 0.5 <= self.error_coupling <= 1.0:
            raise ValueError("error coupling must lie in [0.5, 1]")


def _training_model(spec: SyntheticSpec, rng: np.random.Generator) -> BigramModel:
    symbols = _SYMBOL_POOL[: spec.vocab_size]
    corpus = [
        "".join(rng.choice(list(symbols), size=60)) for _ in range(32)
    ]
    return train_bigram(corpus, vocab=tuple(symbols))


def _spike_step(step: TokenStep, added_bits: float) -> TokenStep:
    """Raise surprisal at one position, keeping the trace invariants satisfiable.

    The observed token became rare, so max_prob moves to a plausible winner
    mass and oddballness absorbs the surplus above the observed probability.
    """
    new_spr = (step.surprisal_bits or 0.0) + added_bits
    p_new = 2.0 ** (-new_spr)
    max_prob = max(step.max_prob or p_new, min(0.5, 1.0 - p_new))
    max_prob = min(max(max_prob, p_new), 1.0)
    oddball = min(1.0, max(step.oddball_sum or 0.0, max_prob - p_new))
    return replace(step, surprisal_bits=new_spr, max_prob=max_prob, oddball_sum=oddball)


def make_synthetic(
    spec: SyntheticSpec, seed: int = 0
) -> tuple[list[ExampleRecord], list[TokenTrace], list[ErrorLabel]]:
    """Generate (dataset, traces, gold error labels), deterministic by seed."""
    rng = np.random.default_rng(seed)
    model = _training_model(spec, rng)
    magnitude = spec.spike_magnitude
    lift = ENTROPY_LIFT_FRACTION * magnitude
    noise = ENTROPY_NOISE_FRACTION * magnitude

    records: list[ExampleRecord] = []
    traces: list[TokenTrace] = []
    labels: list[ErrorLabel] = []
    length = spec.sentence_length
    for j in range(spec.n_examples):
        example_id = f"syn-{j:05d}"
        text = sample_text(model, length, rng)
        span_start = int(rng.integers(1, length - spec.span_length))
        span = (span_start, span_start + spec.span_length)
        trace = trace_prompt(model, text, (0, length - 1), example_id=example_id)

        is_error = bool(rng.random() < 0.5)
        coupled = bool(rng.random() < spec.error_coupling)
        error_configured = is_error if coupled else not is_error

        steps = list(trace.tokens)
        if magnitude > 0:
            if error_configured:
                spike_pos = int(rng.integers(span[0], span[1]))
            else:
                outside = [i for i in range(length) if not span[0] <= i < span[1]]
                spike_pos = int(outside[rng.integers(0, len(outside))])
            jitter = 1.0 + SPIKE_JITTER * (2.0 * rng.random() - 1.0)
            steps[spike_pos] = _spike_step(steps[spike_pos], magnitude * jitter)

            offset = float(rng.normal(0.0, noise)) + (lift if error_configured else 0.0)
            steps = [
                replace(s, entropy_bits=max(0.0, (s.entropy_bits or 0.0) + offset))
                for s in steps
            ]

            n_pollution = int(rng.poisson(KL_POLLUTION_RATE))
            if n_pollution > 0:
                positions = rng.choice(length, size=min(n_pollution, length), replace=False)
                for pos in positions:
                    bump = float(rng.exponential(magnitude))
                    step = steps[pos]
                    steps[pos] = replace(
                        step, kl_to_reference_bits=(step.kl_to_reference_bits or 0.0) + bump
                    )

        traces.append(replace(trace, tokens=tuple(steps)))
        records.append(
            ExampleRecord(
                id=example_id,
                sentence=text,
                task_kind="idiom",
                gold_label="i",
                expression_char_span=span,
            )
        )
        predicted = "i" if not is_error else "l"
        labels.append(ErrorLabel(example_id=example_id, predicted=predicted, e=int(is_error)))
    return records, traces, labels
