"""Teacher-forced trace extraction and greedy prediction generation.

One forward pass over the prompt yields the full next-token distribution at
every position (surprisal, entropy, KL to the peaked reference, max
probability, oddballness, all in bits). The deleted-prefix CIS term at
position i rescans token i+1 under the prefix with token i removed -- n-1
extra scored sequences per example, batched. Deletion happens at the token
level; re-tokenizing a mutated string would change alignment.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from transformers import AutoModelForCausalLM, AutoTokenizer

from trace_extractor.prompts import Example, build_prompt, load_examples

_LN2 = math.log(2.0)


@dataclass(frozen=True)
class ExtractionJob:
    model_id: str
    dataset_path: str
    batch_size: int = 8
    device: str = "cpu"
    cis_enabled: bool = True
    max_new_tokens: int = 16

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")


def _load(job: ExtractionJob):
    tokenizer = AutoTokenizer.from_pretrained(job.model_id)
    if not tokenizer.is_fast:
        raise ValueError(
            f"tokenizer for {job.model_id!r} has no offset mapping; "
            "a fast tokenizer is required to recover character spans"
        )
    model = AutoModelForCausalLM.from_pretrained(job.model_id)
    model.eval()
    model.to(job.device)
    return tokenizer, model


def _forward_batches(model, sequences, pad_id, device, batch_size, stats):
    """Last-position logits for each variable-length id sequence.

    Halves the batch on OOM before giving up.
    """
    out = []
    start = 0
    size = batch_size
    while start < len(sequences):
        chunk = sequences[start : start + size]
        max_len = max(len(seq) for seq in chunk)
        ids = torch.full((len(chunk), max_len), pad_id, dtype=torch.long)
        mask = torch.zeros((len(chunk), max_len), dtype=torch.long)
        for k, seq in enumerate(chunk):
            ids[k, : len(seq)] = torch.tensor(seq, dtype=torch.long)
            mask[k, : len(seq)] = 1
        try:
            with torch.no_grad():
                logits = model(input_ids=ids.to(device), attention_mask=mask.to(device)).logits
        except RuntimeError as exc:
            if "out of memory" in str(exc).lower() and size > 1:
                size = max(1, size // 2)
                continue
            raise
        for k, seq in enumerate(chunk):
            out.append(logits[k, len(seq) - 1].float().cpu())
        stats["sequences_scored"] += len(chunk)
        start += size
    return out


def _reference_logq(vocab_size, observed, device=None):
    logq = torch.full((vocab_size,), math.log(0.1 / (vocab_size - 1)))
    logq[observed] = math.log(0.9)
    return logq


def _score_example(example: Example, tokenizer, model, job: ExtractionJob, stats) -> dict:
    prompt = build_prompt(example)
    enc = tokenizer(prompt, return_offsets_mapping=True, add_special_tokens=False)
    token_ids = enc["input_ids"]
    offsets = enc["offset_mapping"]
    if not token_ids:
        raise ValueError(f"example {example.id!r}: prompt tokenized to nothing")
    for i, (start, end) in enumerate(offsets):
        if start >= end:
            raise ValueError(f"example {example.id!r}: token {i} has an empty char span")

    bos = tokenizer.bos_token_id
    model_ids = ([bos] if bos is not None else []) + list(token_ids)
    off = 1 if bos is not None else 0

    with torch.no_grad():
        logits = model(input_ids=torch.tensor([model_ids], device=job.device)).logits[0]
    logits = logits.float().cpu()
    stats["sequences_scored"] += 1
    stats["tokens_total"] += len(token_ids)

    n = len(token_ids)
    vocab_size = logits.shape[-1]
    steps: list[dict] = []
    for i in range(n):
        row = i + off - 1
        if row < 0:
            steps.append({"surprisal": None, "entropy": None, "kl_ref": None,
                          "max_prob": None, "oddball": None})
            continue
        logp = torch.log_softmax(logits[row], dim=-1)
        p = logp.exp()
        obs = token_ids[i]
        p_obs = p[obs]
        entropy_bits = float(-(p * logp).sum()) / _LN2
        logq = _reference_logq(vocab_size, obs)
        kl_bits = float((p * (logp - logq)).sum()) / _LN2
        oddball = float(torch.clamp(p - p_obs, min=0.0).sum())
        steps.append(
            {
                "surprisal": -float(logp[obs]) / _LN2,
                "entropy": max(entropy_bits, 0.0),
                "kl_ref": max(kl_bits, 0.0),
                "max_prob": float(p.max()),
                "oddball": min(max(oddball, 0.0), 1.0),
            }
        )

    cis_next: list[float | None] = [None] * n
    if job.cis_enabled and n > 1:
        prefixes = []
        targets = []
        positions = []
        for i in range(n - 1):
            prefix = model_ids[: i + off]
            if not prefix:
                continue
            prefixes.append(prefix)
            targets.append(token_ids[i + 1])
            positions.append(i)
        pad_id = tokenizer.pad_token_id
        if pad_id is None:
            pad_id = bos if bos is not None else 0
        last_logits = _forward_batches(
            model, prefixes, pad_id, job.device, job.batch_size, stats
        )
        for pos, target, row_logits in zip(positions, targets, last_logits):
            logp = torch.log_softmax(row_logits, dim=-1)
            cis_next[pos] = float(logp[target]) / _LN2

    sentence_start = prompt.find(example.sentence)
    if sentence_start < 0:
        raise ValueError(f"example {example.id!r}: sentence not found in prompt")
    sentence_end = sentence_start + len(example.sentence)
    covering = [
        i for i, (s, e) in enumerate(offsets) if s < sentence_end and e > sentence_start
    ]
    if not covering:
        raise ValueError(f"example {example.id!r}: no tokens cover the sentence span")

    tokens = []
    for i in range(n):
        start, end = offsets[i]
        tokens.append(
            {
                "text": prompt[start:end],
                "span": [int(start), int(end)],
                "surprisal": steps[i]["surprisal"],
                "entropy": steps[i]["entropy"],
                "kl_ref": steps[i]["kl_ref"],
                "max_prob": steps[i]["max_prob"],
                "oddball": steps[i]["oddball"],
                "cis_next": cis_next[i],
            }
        )
    return {
        "example_id": example.id,
        "sentence_token_range": [covering[0], covering[-1]],
        "tokens": tokens,
    }


def extract_traces(job: ExtractionJob) -> tuple[list[dict], dict]:
    """Score every dataset example; returns (trace rows, cost stats)."""
    tokenizer, model = _load(job)
    examples = load_examples(job.dataset_path)
    stats = {"sequences_scored": 0, "tokens_total": 0}
    rows = [_score_example(ex, tokenizer, model, job, stats) for ex in examples]
    return rows, stats


def generate_predictions(job: ExtractionJob) -> list[dict]:
    """Greedy zero-shot answers, raw text stored verbatim.

    A failed generation yields an error record for that example; the run
    continues.
    """
    tokenizer, model = _load(job)
    examples = load_examples(job.dataset_path)
    pad_id = tokenizer.pad_token_id
    if pad_id is None:
        pad_id = tokenizer.bos_token_id if tokenizer.bos_token_id is not None else 0
    rows = []
    for example in examples:
        try:
            prompt = build_prompt(example)
            enc = tokenizer(prompt, return_tensors="pt", add_special_tokens=False)
            input_ids = enc["input_ids"]
            if tokenizer.bos_token_id is not None:
                bos_col = torch.full((1, 1), tokenizer.bos_token_id, dtype=torch.long)
                input_ids = torch.cat([bos_col, input_ids], dim=1)
            input_ids = input_ids.to(job.device)
            with torch.no_grad():
                out = model.generate(
                    input_ids,
                    attention_mask=torch.ones_like(input_ids),
                    max_new_tokens=job.max_new_tokens,
                    do_sample=False,
                    pad_token_id=pad_id,
                )
            new_tokens = out[0, input_ids.shape[1] :]
            raw = tokenizer.decode(new_tokens, skip_special_tokens=True)
            rows.append({"example_id": example.id, "raw_output": raw})
        except Exception as exc:  # noqa: BLE001 - per-example fault isolation
            rows.append({"example_id": example.id, "error": str(exc)})
    return rows


def write_jsonl(rows: list[dict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False))
            fh.write("\n")
