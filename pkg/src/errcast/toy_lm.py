"""Deterministic add-one-smoothed bigram model over a small symbol vocabulary.

Every next-token distribution is exactly computable, which makes the model
the correctness oracle for the measures and the generator for synthetic
experiments. It never answers tasks; synthetic error labels come from the
experiment harness, not from model predictions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from errcast.measures import (
    CwsConfig,
    entropy,
    kl_to_reference,
    oddballness,
)
from errcast.trace import TokenStep, TokenTrace

#: Reserved start-of-sequence symbol; its count row conditions the first token.
START_SYMBOL = "\x02"

MAX_VOCAB = 256


@dataclass
class BigramModel:
    vocab: tuple[str, ...]
    counts: np.ndarray
    alpha: float = 1.0
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.vocab = tuple(self.vocab)
        if not 0 < len(self.vocab) <= MAX_VOCAB:
            raise ValueError(f"vocabulary size must be in [1, {MAX_VOCAB}]")
        if START_SYMBOL not in self.vocab:
            raise ValueError("vocabulary must include the reserved start symbol")
        if self.alpha <= 0:
            raise ValueError(f"smoothing alpha must be positive, got {self.alpha}")
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (len(self.vocab), len(self.vocab)):
            raise ValueError("counts must be a |V| x |V| matrix")
        if np.any(self.counts < 0):
            raise ValueError("counts must be nonnegative")
        self.index = {sym: i for i, sym in enumerate(self.vocab)}
        if len(self.index) != len(self.vocab):
            raise ValueError("vocabulary symbols must be unique")

    def symbol_index(self, symbol: str) -> int:
        try:
            return self.index[symbol]
        except KeyError:
            raise ValueError(f"unknown symbol {symbol!r}") from None

    def row_distribution(self, symbol: str) -> np.ndarray:
        i = self.symbol_index(symbol)
        row = self.counts[i].astype(float)
        return (row + self.alpha) / (row.sum() + self.alpha * len(self.vocab))


def train_bigram(
    texts: Iterable[str],
    vocab: Sequence[str] | None = None,
    alpha: float = 1.0,
) -> BigramModel:
    """Count character transitions (with a start row) over the given texts."""
    texts = list(texts)
    if vocab is None:
        symbols = sorted({ch for text in texts for ch in text})
        if START_SYMBOL in symbols:
            raise ValueError("corpus must not contain the reserved start symbol")
        vocab = (START_SYMBOL, *symbols)
    else:
        vocab = tuple(vocab)
        if START_SYMBOL not in vocab:
            vocab = (START_SYMBOL, *vocab)
    index = {sym: i for i, sym in enumerate(vocab)}
    counts = np.zeros((len(vocab), len(vocab)), dtype=np.int64)
    for text in texts:
        prev = START_SYMBOL
        for ch in text:
            if ch not in index:
                raise ValueError(f"symbol {ch!r} not in vocabulary")
            counts[index[prev], index[ch]] += 1
            prev = ch
    return BigramModel(vocab=vocab, counts=counts, alpha=alpha)


def next_distribution(model: BigramModel, prefix: Sequence[str]) -> np.ndarray:
    """Distribution over the vocabulary given a prefix (bigram: last symbol only)."""
    last = prefix[-1] if len(prefix) > 0 else START_SYMBOL
    return model.row_distribution(last)


def trace_prompt(
    model: BigramModel,
    text: Sequence[str],
    sentence_range: tuple[int, int] | None = None,
    example_id: str = "",
    cws_config: CwsConfig | None = None,
) -> TokenTrace:
    """Score a symbol sequence, filling every trace scalar exactly.

    The deleted-prefix CIS term at position i rescores token i+1 under the
    prefix without token i; for a bigram that is the distribution already
    used at step i, evaluated at token i+1.
    """
    symbols = list(text)
    if not symbols:
        raise ValueError("cannot trace an empty prompt")
    n = len(symbols)
    if sentence_range is None:
        sentence_range = (0, n - 1)
    steps: list[TokenStep] = []
    offset = 0
    for i, sym in enumerate(symbols):
        dist = next_distribution(model, symbols[:i])
        obs = model.symbol_index(sym)
        p_obs = float(dist[obs])
        cis_next: float | None = None
        if i + 1 < n:
            nxt = model.symbol_index(symbols[i + 1])
            cis_next = math.log2(float(dist[nxt]))
        steps.append(
            TokenStep(
                token_text=sym,
                char_span=(offset, offset + len(sym)),
                surprisal_bits=-math.log2(p_obs),
                entropy_bits=entropy(dist),
                kl_to_reference_bits=kl_to_reference(dist, obs, cws_config),
                max_prob=float(dist.max()),
                oddball_sum=oddballness(dist, obs),
                cis_second_term_bits=cis_next,
            )
        )
        offset += len(sym)
    return TokenTrace(
        example_id=example_id, tokens=tuple(steps), sentence_token_range=sentence_range
    )


def sample_text(
    model: BigramModel,
    length: int,
    rng: np.random.Generator,
    exclude: Sequence[str] = (START_SYMBOL,),
) -> str:
    """Weighted random walk through the bigram graph, skipping excluded symbols."""
    excluded = {model.symbol_index(sym) for sym in exclude}
    keep = np.array([i for i in range(len(model.vocab)) if i not in excluded])
    if keep.size == 0:
        raise ValueError("nothing left to sample after exclusions")
    out: list[str] = []
    prev = START_SYMBOL
    for _ in range(length):
        dist = model.row_distribution(prev)[keep]
        dist = dist / dist.sum()
        choice = int(rng.choice(keep, p=dist))
        out.append(model.vocab[choice])
        prev = model.vocab[choice]
    return "".join(out)


def save_model(model: BigramModel, path: str | Path) -> None:
    payload = {
        "vocab": list(model.vocab),
        "counts": model.counts.tolist(),
        "alpha": model.alpha,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload), encoding="utf-8")


def load_model(path: str | Path) -> BigramModel:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return BigramModel(
        vocab=tuple(payload["vocab"]),
        counts=np.asarray(payload["counts"], dtype=np.int64),
        alpha=float(payload["alpha"]),
    )
