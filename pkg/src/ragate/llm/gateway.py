"""LLM access: decode settings, the OpenAI-compatible backend and the caching gateway."""

from __future__ import annotations

import hashlib
import logging
import math
import os
import threading
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Protocol

import httpx

from .. import prompts
from ..types import GenerationTrace, SampleSet, TokenStep
from .cache import GenerationCache, cache_key

log = logging.getLogger(__name__)


class GatewayError(RuntimeError):
    pass


class TransportError(GatewayError):
    """Endpoint unreachable or failing; safe to retry later."""

    def __init__(self, message: str, attempts: int):
        super().__init__(f"{message} (after {attempts} attempts)")
        self.attempts = attempts


class ConfigurationError(GatewayError):
    """Endpoint lacks a capability this tool needs."""


class NSamplesUnsupported(GatewayError):
    """Backend refused a single request for n > 1 completions."""


@dataclass(frozen=True)
class DecodeConfig:
    temperature: float = 0.0
    max_tokens: int = 32
    top_k_logprobs: int = 20
    n_samples: int = 1

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")
        if self.top_k_logprobs < 1:
            raise ValueError("top_k_logprobs must be >= 1")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


GREEDY = DecodeConfig()
SAMPLING = DecodeConfig(temperature=1.0, n_samples=5)


def prompt_key(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]


class Backend(Protocol):
    model_id: str

    def generate(
        self, prompt: str, cfg: DecodeConfig, n: int = 1, sample_offset: int = 0
    ) -> list[GenerationTrace]: ...

    def score(self, prefix: str, tokens: list[str], cfg: DecodeConfig) -> GenerationTrace: ...


def build_step(token: str, logprob: float, top: list[tuple[str, float]], k: int) -> TokenStep:
    """Normalise an endpoint's top-logprob list into a ``TokenStep``.

    The chosen token is forced into the list and the uncovered mass becomes
    ``tail_mass``.
    """
    alts = dict(top)
    alts.setdefault(token, logprob)
    ordered = sorted(alts.items(), key=lambda kv: (-kv[1], kv[0]))
    if len(ordered) > k:
        ordered = ordered[:k]
        if token not in {t for t, _ in ordered}:
            ordered[-1] = (token, alts[token])
            ordered.sort(key=lambda kv: (-kv[1], kv[0]))
    ordered = [(t, min(lp, 0.0)) for t, lp in ordered]
    covered = math.fsum(math.exp(lp) for _, lp in ordered)
    if covered > 1.0:
        # renormalise rounding overshoot from the endpoint
        shift = math.log(covered)
        ordered = [(t, lp - shift) for t, lp in ordered]
        covered = 1.0
    return TokenStep(
        token_text=token,
        chosen_logprob=dict(ordered)[token],
        alternatives=tuple(ordered),
        tail_mass=max(0.0, 1.0 - covered),
    )


class OpenAIBackend:
    """Client for an OpenAI-compatible chat-completions endpoint.

    Reads ``LLM_API_BASE``, ``LLM_API_KEY`` and ``LLM_MODEL`` when arguments are
    omitted. Force-scoring uses the legacy ``/completions`` endpoint with
    ``echo=true``.
    """

    def __init__(
        self,
        api_base: str | None = None,
        api_key: str | None = None,
        model: str | None = None,
        timeout: float = 60.0,
        max_attempts: int = 3,
        backoff: float = 0.5,
        transport: httpx.BaseTransport | None = None,
    ):
        self.api_base = (api_base or os.environ.get("LLM_API_BASE", "")).rstrip("/")
        if not self.api_base:
            raise ConfigurationError("no endpoint configured (set LLM_API_BASE)")
        self.model_id = model or os.environ.get("LLM_MODEL", "default")
        key = api_key if api_key is not None else os.environ.get("LLM_API_KEY", "")
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self.client = httpx.Client(
            base_url=self.api_base, headers=headers, timeout=timeout, transport=transport
        )
        self.max_attempts = max_attempts
        self.backoff = backoff

    def _post(self, path: str, payload: dict[str, Any]) -> dict[str, Any]:
        last = ""
        for attempt in range(1, self.max_attempts + 1):
            try:
                resp = self.client.post(path, json=payload)
            except httpx.TransportError as exc:
                last = f"transport failure: {exc}"
            else:
                if resp.status_code == 200:
                    return resp.json()
                if resp.status_code == 400 and payload.get("n", 1) > 1 and "n" in resp.text:
                    raise NSamplesUnsupported(resp.text)
                if resp.status_code < 500 and resp.status_code != 429:
                    raise GatewayError(f"endpoint returned {resp.status_code}: {resp.text[:200]}")
                last = f"endpoint returned {resp.status_code}"
            if attempt < self.max_attempts:
                time.sleep(self.backoff * 2 ** (attempt - 1))
        raise TransportError(last, self.max_attempts)

    def generate(
        self, prompt: str, cfg: DecodeConfig, n: int = 1, sample_offset: int = 0
    ) -> list[GenerationTrace]:
        payload = {
            "model": self.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_tokens,
            "logprobs": True,
            "top_logprobs": cfg.top_k_logprobs,
            "n": n,
        }
        data = self._post("/chat/completions", payload)
        choices = data.get("choices") or []
        if n > 1 and len(choices) < n:
            raise NSamplesUnsupported(f"asked for {n} choices, got {len(choices)}")
        key = prompt_key(prompt)
        used_context = prompts.CONTEXT_MARK in prompt
        return [self._parse_choice(c, key, cfg, used_context) for c in choices[:n]]

    def _parse_choice(
        self, choice: dict[str, Any], key: str, cfg: DecodeConfig, used_context: bool
    ) -> GenerationTrace:
        lp = choice.get("logprobs")
        if not lp or lp.get("content") is None:
            raise ConfigurationError("endpoint did not return logprobs (logprobs/top_logprobs unsupported)")
        steps = []
        for item in lp["content"]:
            top = [(t["token"], float(t["logprob"])) for t in item.get("top_logprobs") or []]
            steps.append(build_step(item["token"], float(item["logprob"]), top, cfg.top_k_logprobs))
        return GenerationTrace.from_steps(key, steps, used_context=used_context)

    def score(self, prefix: str, tokens: list[str], cfg: DecodeConfig) -> GenerationTrace:
        text = prefix + " " + "".join(tokens)
        payload = {
            "model": self.model_id,
            "prompt": text,
            "max_tokens": 0,
            "echo": True,
            "logprobs": cfg.top_k_logprobs,
            "temperature": 0.0,
        }
        data = self._post("/completions", payload)
        try:
            lp = data["choices"][0]["logprobs"]
            offsets = lp["text_offset"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ConfigurationError("endpoint does not support echo scoring with logprobs") from exc
        steps = []
        for tok, tok_lp, top, off in zip(lp["tokens"], lp["token_logprobs"], lp["top_logprobs"], offsets):
            if off < len(prefix) or tok_lp is None:
                continue
            top_list = [(t, float(v)) for t, v in (top or {}).items()]
            steps.append(build_step(tok, float(tok_lp), top_list, cfg.top_k_logprobs))
        return GenerationTrace.from_steps(prompt_key(text), steps)


@dataclass
class CallStats:
    logical_calls: int = 0
    endpoint_calls: int = 0
    cache_hits: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def bump(self, endpoint: bool) -> None:
        with self._lock:
            self.logical_calls += 1
            if endpoint:
                self.endpoint_calls += 1
            else:
                self.cache_hits += 1


@dataclass(frozen=True)
class PTrueResult:
    p_true: float
    low_fidelity: bool = False

    def __float__(self) -> float:
        return self.p_true


class LLMGateway:
    """Caching, call-accounting front end over a ``Backend``.

    ``stats.logical_calls`` counts every request (a batched N-sample request is
    one call); ``stats.endpoint_calls`` counts only cache misses.
    """

    def __init__(
        self,
        backend: Backend,
        cache: GenerationCache | None = None,
        max_in_flight: int = 8,
    ):
        self.backend = backend
        self.cache = cache
        self.stats = CallStats()
        self._slots = threading.BoundedSemaphore(max_in_flight)

    @property
    def model_id(self) -> str:
        return self.backend.model_id

    def _cached(self, kind: str, prompt: str, cfg: DecodeConfig, produce) -> dict[str, Any]:
        key = cache_key(kind, prompt, cfg.to_dict(), self.model_id)
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                self.stats.bump(endpoint=False)
                return hit
        with self._slots:
            record = produce()
        self.stats.bump(endpoint=True)
        if self.cache is not None:
            self.cache.put(key, record)
            # serve the stored form so hits and misses are indistinguishable
            return self.cache.get(key)
        return record

    def complete(self, prompt: str, cfg: DecodeConfig = GREEDY) -> GenerationTrace:
        def produce():
            return self.backend.generate(prompt, cfg, n=1)[0].to_dict()

        return GenerationTrace.from_dict(self._cached("complete", prompt, cfg, produce))

    def sample_n(self, prompt: str, cfg: DecodeConfig = SAMPLING) -> SampleSet:
        n = cfg.n_samples

        def produce():
            fallback = False
            try:
                traces = self.backend.generate(prompt, cfg, n=n)
            except NSamplesUnsupported:
                log.warning("endpoint refused n=%d; falling back to sequential requests", n)
                fallback = True
                traces = [self.backend.generate(prompt, cfg, 1, sample_offset=i)[0] for i in range(n)]
            temp = cfg.temperature if cfg.temperature > 0 else 1e-6
            return SampleSet(prompt_key(prompt), tuple(traces), temp, fallback).to_dict()

        return SampleSet.from_dict(self._cached("sample_n", prompt, cfg, produce))

    def force_score(self, prefix: str, tokens: list[str], cfg: DecodeConfig = GREEDY) -> GenerationTrace:
        """Score a fixed token sequence after ``prefix`` (no generation)."""
        joined = prefix + "\x00" + "\x00".join(tokens)

        def produce():
            return self.backend.score(prefix, tokens, cfg).to_dict()

        return GenerationTrace.from_dict(self._cached("score", joined, cfg, produce))

    def ptrue_probe(self, question: str, answer: str, top_k: int = 20) -> PTrueResult:
        cfg = DecodeConfig(temperature=0.0, max_tokens=1, top_k_logprobs=top_k)
        trace = self.complete(prompts.ptrue_prompt(question, answer), cfg)
        if not trace.steps:
            return PTrueResult(0.0, low_fidelity=True)
        first = trace.steps[0]
        matches = [math.exp(lp) for t, lp in first.alternatives if t.strip().lower() == "true"]
        p = min(1.0, math.fsum(matches))
        return PTrueResult(p, low_fidelity=not matches and first.tail_mass > 0.5)
