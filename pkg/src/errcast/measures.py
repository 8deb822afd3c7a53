"""Tokenwise information measures over next-token distributions.

Four primary measures -- surprisal (SPR), entropy (H), confidence-weighted
surprisal (CWS), contextual influence score (CIS) -- plus the per-position
max probability and oddballness used by the scalar baselines. Everything is
in bits (log base 2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from errcast.trace import TokenTrace

_LN2 = math.log(2.0)


class Measure(str, Enum):
    SPR = "spr"
    H = "h"
    CWS = "cws"
    CIS = "cis"
    MAXP = "maxp"
    ODD = "odd"


class MeasureUnavailableError(ValueError):
    """The trace does not carry the scalars a measure needs."""


@dataclass(frozen=True)
class CwsConfig:
    """Penalty weight and the peaked reference distribution for CWS.

    The reference assigns q_mass_observed to the observed token and spreads
    q_mass_rest uniformly over the remaining vocabulary.
    """

    gamma: float = 1.0
    q_mass_observed: float = 0.9
    q_mass_rest: float = 0.1

    def __post_init__(self) -> None:
        if self.gamma < 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")
        if abs(self.q_mass_observed + self.q_mass_rest - 1.0) > 1e-12:
            raise ValueError("reference masses must sum to 1")


@dataclass(frozen=True)
class MeasureSeries:
    """Per-position values of one measure, with per-position availability."""

    measure: Measure
    values: np.ndarray
    available: np.ndarray

    def __post_init__(self) -> None:
        if len(self.values) != len(self.available):
            raise ValueError("values and availability lengths differ")

    def __len__(self) -> int:
        return len(self.values)


def surprisal(p_observed: float, clamp: float | None = None) -> float:
    """-log2 of the observed token's probability.

    p <= 0 is an error unless a clamp floor is supplied (lossy external
    traces sometimes round tiny probabilities to zero).
    """
    if p_observed <= 0.0:
        if clamp is None:
            raise ValueError(f"probability must be positive, got {p_observed}")
        p_observed = clamp
    if p_observed > 1.0 + 1e-12:
        raise ValueError(f"probability must be <= 1, got {p_observed}")
    return -math.log2(min(p_observed, 1.0))


def _check_distribution(dist: np.ndarray) -> np.ndarray:
    dist = np.asarray(dist, dtype=float)
    if dist.ndim != 1 or len(dist) == 0:
        raise ValueError("distribution must be a nonempty 1-d vector")
    if np.any(dist < 0):
        raise ValueError("distribution has negative entries")
    total = float(dist.sum())
    if abs(total - 1.0) > 1e-6:
        raise ValueError(f"distribution sums to {total}, not 1")
    return dist


def entropy(dist: np.ndarray) -> float:
    """Shannon entropy of a next-token distribution, in bits (0*log0 := 0)."""
    dist = _check_distribution(dist)
    positive = dist[dist > 0]
    return float(-np.sum(positive * np.log2(positive)))


def reference_distribution(size: int, observed_index: int, config: CwsConfig | None = None) -> np.ndarray:
    config = config or CwsConfig()
    if size < 2:
        raise ValueError("reference distribution undefined for vocabulary size < 2")
    if not (0 <= observed_index < size):
        raise ValueError(f"observed index {observed_index} out of range for size {size}")
    q = np.full(size, config.q_mass_rest / (size - 1), dtype=float)
    q[observed_index] = config.q_mass_observed
    return q


def kl_to_reference(dist: np.ndarray, observed_index: int, config: CwsConfig | None = None) -> float:
    """D_KL(P || Q) against the peaked reference, in bits.

    Q has full support, so no division blowup; zero-P terms contribute 0.
    """
    dist = _check_distribution(dist)
    q = reference_distribution(len(dist), observed_index, config)
    mask = dist > 0
    p = dist[mask]
    return float(np.sum(p * (np.log2(p) - np.log2(q[mask]))))


def cws(p_observed: float, kl_bits: float, config: CwsConfig | None = None) -> float:
    """Surprisal plus gamma times the KL penalty."""
    config = config or CwsConfig()
    if not (math.isfinite(p_observed) and math.isfinite(kl_bits)):
        raise ValueError("cws inputs must be finite")
    return surprisal(p_observed) + config.gamma * kl_bits


def cis(logp_next_full_prefix: float, logp_next_deleted_prefix: float) -> float:
    """Conditional PMI: how much the current token helps predict the next.

    Both terms are signed log2 probabilities of the next token, scored under
    the full prefix and under the prefix with the current token deleted.
    """
    return logp_next_full_prefix - logp_next_deleted_prefix


def oddballness(dist: np.ndarray, observed_index: int) -> float:
    """Total surplus probability assigned to tokens beating the observed one."""
    dist = _check_distribution(dist)
    if not (0 <= observed_index < len(dist)):
        raise ValueError(f"observed index {observed_index} out of range")
    return float(np.sum(np.maximum(dist - dist[observed_index], 0.0)))


def nats_to_bits(x: float) -> float:
    return x / _LN2


def series_from_trace(
    trace: TokenTrace, measure: Measure, cws_config: CwsConfig | None = None
) -> MeasureSeries:
    """Assemble one measure's per-position series from stored trace scalars.

    CWS is recomputed from stored surprisal and kl_ref so gamma stays a
    consumer-side knob. CIS at position i combines the negated surprisal at
    i+1 (the full-prefix term) with the stored deleted-prefix term; the last
    position has no successor and is always unavailable.
    """
    measure = Measure(measure)
    n = len(trace.tokens)
    values = np.zeros(n, dtype=float)
    available = np.zeros(n, dtype=bool)

    if measure in (Measure.SPR, Measure.H, Measure.MAXP, Measure.ODD):
        attr = {
            Measure.SPR: "surprisal_bits",
            Measure.H: "entropy_bits",
            Measure.MAXP: "max_prob",
            Measure.ODD: "oddball_sum",
        }[measure]
        for i, tok in enumerate(trace.tokens):
            raw = getattr(tok, attr)
            if raw is not None:
                values[i] = raw
                available[i] = True
        if not available.any():
            raise MeasureUnavailableError(
                f"trace {trace.example_id!r}: {measure.value} unavailable "
                f"(no token carries {attr})"
            )
        return MeasureSeries(measure, values, available)

    if measure is Measure.CWS:
        config = cws_config or CwsConfig()
        for i, tok in enumerate(trace.tokens):
            if tok.surprisal_bits is not None and tok.kl_to_reference_bits is not None:
                values[i] = tok.surprisal_bits + config.gamma * tok.kl_to_reference_bits
                available[i] = True
        if not available.any():
            raise MeasureUnavailableError(
                f"trace {trace.example_id!r}: cws unavailable "
                "(needs both surprisal and kl_ref)"
            )
        return MeasureSeries(measure, values, available)

    # CIS: first term is the negated surprisal stored at position i+1; the
    # stored cis_next at position i is the deleted-prefix term.
    for i in range(n - 1):
        second = trace.tokens[i].cis_second_term_bits
        next_surprisal = trace.tokens[i + 1].surprisal_bits
        if second is not None and next_surprisal is not None:
            values[i] = cis(-next_surprisal, second)
            available[i] = True
    if not available.any():
        raise MeasureUnavailableError(
            f"trace {trace.example_id!r}: cis unavailable (no token carries cis_next)"
        )
    return MeasureSeries(Measure.CIS, values, available)
