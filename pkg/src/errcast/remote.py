"""Fetch per-token likelihood traces from a completions-with-logprobs endpoint.

Speaks the classic OpenAI-style completions protocol (echo + logprobs) and
converts natural-log values to bits. Endpoints differ in what they expose;
availability masks record exactly what arrived. Entropy, KL, and CIS need
full distributions and are never available from a top-k endpoint;
oddballness is exact whenever the observed token ranks within the returned
top-k (every heavier token is then visible).
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import requests

from errcast.trace import TokenStep, TokenTrace

logger = logging.getLogger("errcast.remote")

_RETRYABLE_STATUS = {429, 500, 502, 503, 504}
_LN2 = math.log(2.0)


@dataclass(frozen=True)
class RemoteEndpoint:
    base_url: str
    model: str | None = None
    api_key: str | None = None
    timeout: float = 30.0
    max_retries: int = 3
    backoff: float = 0.5
    concurrency: int = 4

    def resolved_key(self) -> str | None:
        return self.api_key or os.environ.get("ERRCAST_API_KEY") or os.environ.get("OPENAI_API_KEY")


@dataclass(frozen=True)
class RemotePrompt:
    example_id: str
    text: str
    sentence_char_span: tuple[int, int]


class EndpointCapabilityError(RuntimeError):
    """The endpoint does not return the logprobs the trace schema needs."""


def _post_with_retries(
    endpoint: RemoteEndpoint,
    body: dict,
    session: requests.Session,
    sleep: Callable[[float], None],
) -> dict:
    url = endpoint.base_url.rstrip("/") + "/completions"
    headers = {"Content-Type": "application/json"}
    key = endpoint.resolved_key()
    if key:
        headers["Authorization"] = f"Bearer {key}"
    last_error: Exception | None = None
    for attempt in range(endpoint.max_retries + 1):
        if attempt > 0:
            sleep(endpoint.backoff * (2 ** (attempt - 1)))
        try:
            logger.debug("request %s", json.dumps(body, ensure_ascii=False))
            response = session.post(url, json=body, headers=headers, timeout=endpoint.timeout)
        except requests.RequestException as exc:
            last_error = exc
            logger.debug("transport failure on attempt %d: %s", attempt, exc)
            continue
        logger.debug("response %d %s", response.status_code, response.text[:2000])
        if response.status_code in _RETRYABLE_STATUS:
            last_error = RuntimeError(f"HTTP {response.status_code}: {response.text[:200]}")
            continue
        if response.status_code >= 400:
            raise RuntimeError(f"endpoint error {response.status_code}: {response.text[:500]}")
        return response.json()
    raise RuntimeError(f"endpoint unreachable after {endpoint.max_retries + 1} attempts") from last_error


def _require_logprobs(payload: dict) -> dict:
    try:
        choice = payload["choices"][0]
    except (KeyError, IndexError, TypeError) as exc:
        raise EndpointCapabilityError("response carries no choices") from exc
    logprobs = choice.get("logprobs")
    if not logprobs or logprobs.get("token_logprobs") is None:
        raise EndpointCapabilityError(
            "endpoint does not return per-token logprobs; cannot build traces"
        )
    return logprobs


def _trace_from_logprobs(prompt: RemotePrompt, logprobs: dict) -> TokenTrace:
    tokens = logprobs.get("tokens") or []
    token_logprobs = logprobs.get("token_logprobs") or []
    offsets = logprobs.get("text_offset") or []
    tops = logprobs.get("top_logprobs") or [None] * len(tokens)
    if not (len(tokens) == len(token_logprobs) == len(offsets)):
        raise ValueError(f"example {prompt.example_id!r}: ragged logprobs arrays")
    steps: list[TokenStep] = []
    for i, (text, lp, off) in enumerate(zip(tokens, token_logprobs, offsets)):
        start = int(off)
        end = start + len(text)
        if prompt.text[start:end] != text:
            raise ValueError(
                f"example {prompt.example_id!r}: token {i} offsets misaligned with prompt text "
                f"({prompt.text[start:end]!r} != {text!r})"
            )
        top = tops[i] if i < len(tops) else None
        surprisal_bits = None if lp is None else -float(lp) / _LN2
        max_prob: float | None = None
        oddball: float | None = None
        if top:
            top_values = [float(v) for v in top.values()]
            max_prob = math.exp(max(top_values))
            if lp is not None and float(lp) >= min(top_values) - 1e-9:
                p_obs = math.exp(float(lp))
                oddball = sum(max(0.0, math.exp(v) - p_obs) for v in top_values)
        steps.append(
            TokenStep(
                token_text=text,
                char_span=(start, end),
                surprisal_bits=surprisal_bits,
                max_prob=max_prob,
                oddball_sum=oddball,
            )
        )
    span_start, span_end = prompt.sentence_char_span
    covering = [
        i for i, s in enumerate(steps) if s.char_span[0] < span_end and s.char_span[1] > span_start
    ]
    if not covering:
        raise ValueError(
            f"example {prompt.example_id!r}: sentence char span "
            f"[{span_start}, {span_end}) covers no returned tokens"
        )
    return TokenTrace(
        example_id=prompt.example_id,
        tokens=tuple(steps),
        sentence_token_range=(covering[0], covering[-1]),
    )


def fetch_remote_traces(
    endpoint: RemoteEndpoint,
    prompts: Sequence[RemotePrompt],
    top_logprobs: int = 5,
    session: requests.Session | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> list[TokenTrace]:
    """Score prompts against the endpoint and return traces sorted by id.

    The first prompt doubles as a capability probe: if it comes back without
    logprobs, no further requests are issued. Remaining prompts fan out over
    a bounded worker pool.
    """
    if not prompts:
        return []
    session = session or requests.Session()

    def body_for(prompt: RemotePrompt) -> dict:
        body: dict = {"prompt": prompt.text, "max_tokens": 0, "echo": True, "logprobs": top_logprobs}
        if endpoint.model:
            body["model"] = endpoint.model
        return body

    def fetch_one(prompt: RemotePrompt) -> TokenTrace:
        payload = _post_with_retries(endpoint, body_for(prompt), session, sleep)
        return _trace_from_logprobs(prompt, _require_logprobs(payload))

    # Capability probe before committing to the batch.
    first = prompts[0]
    payload = _post_with_retries(endpoint, body_for(first), session, sleep)
    traces = [_trace_from_logprobs(first, _require_logprobs(payload))]

    rest = prompts[1:]
    if rest:
        errors: list[str] = []
        results: dict[int, TokenTrace] = {}
        with ThreadPoolExecutor(max_workers=max(1, endpoint.concurrency)) as pool:
            futures = {pool.submit(fetch_one, p): i for i, p in enumerate(rest)}
            for future, i in futures.items():
                try:
                    results[i] = future.result()
                except ValueError as exc:
                    errors.append(str(exc))
        if errors:
            raise ValueError("; ".join(sorted(errors)))
        traces.extend(results[i] for i in sorted(results))
    traces.sort(key=lambda tr: tr.example_id)
    return traces
