"""HTTP clients for OpenAI-compatible generation and embedding servers.

Generation streams server-sent events with per-token log-probabilities.
Probes are separate, non-streaming requests that continue a partial
assistant turn; the main stream is simply not read while a probe runs.

Endpoint settings come from the environment::

    COTEXIT_BASE_URL      e.g. http://localhost:8000/v1
    COTEXIT_MODEL         served model name
    COTEXIT_API_KEY       optional bearer token
    COTEXIT_API           "chat" (default) or "completions"
    COTEXIT_EMBED_URL     embedding server base URL
    COTEXIT_EMBED_MODEL   embedding model name
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Iterator

import httpx

from ..errors import BackendError, CapabilityError, ConfigurationError
from ..redundancy import Embedding
from .base import EndOfThinkingDetector, ProbeCompletion, TokenEvent, TokenStream

logger = logging.getLogger(__name__)

__all__ = ["HttpEndpointConfig", "HttpGenerationBackend", "HttpEmbedder", "EmbedEndpointConfig"]

_LOGPROB_HINT = (
    "request per-token logprobs from the server (OpenAI-style 'logprobs': true); "
    "vLLM and SGLang support this, some hosted APIs do not"
)


@dataclass(frozen=True)
class HttpEndpointConfig:
    base_url: str
    model: str
    api_key: str | None = None
    api: str = "chat"
    temperature: float = 0.6
    top_p: float = 0.95
    max_tokens: int = 32768
    top_logprobs: int = 5
    timeout: float = 120.0
    prompt_template: str = "{question}"
    end_of_thinking: str = "</think>"
    extra_body: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.api not in ("chat", "completions"):
            raise ConfigurationError(f"api must be 'chat' or 'completions', got {self.api!r}")

    @classmethod
    def from_env(cls, **overrides: Any) -> HttpEndpointConfig | None:
        base = os.environ.get("COTEXIT_BASE_URL")
        if not base:
            return None
        kw: dict[str, Any] = {
            "base_url": base,
            "model": os.environ.get("COTEXIT_MODEL", "default"),
            "api_key": os.environ.get("COTEXIT_API_KEY") or None,
            "api": os.environ.get("COTEXIT_API", "chat"),
        }
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)


def _headers(api_key: str | None) -> dict[str, str]:
    return {"Authorization": f"Bearer {api_key}"} if api_key else {}


def _sse_payloads(lines: Iterator[str]) -> Iterator[dict]:
    for line in lines:
        line = line.strip()
        if not line or line.startswith(":") or not line.startswith("data:"):
            continue
        data = line[5:].strip()
        if data == "[DONE]":
            return
        try:
            yield json.loads(data)
        except json.JSONDecodeError as exc:
            raise BackendError(f"malformed stream event: {data[:80]!r}") from exc


class HttpGenerationBackend:
    """Client for a chat-completions (or completions) endpoint.

    Safe to share across episodes: each stream owns its own response object
    and the underlying ``httpx.Client`` pools connections under a lock.
    """

    def __init__(self, cfg: HttpEndpointConfig, client: httpx.Client | None = None) -> None:
        self.cfg = cfg
        self._client = client or httpx.Client(timeout=cfg.timeout, headers=_headers(cfg.api_key))
        self._lock = threading.Lock()

    def close(self) -> None:
        self._client.close()

    def _url(self) -> str:
        suffix = "/chat/completions" if self.cfg.api == "chat" else "/completions"
        return self.cfg.base_url.rstrip("/") + suffix

    def _body(self, question: str, assistant_prefix: str | None, *, stream: bool, max_tokens: int) -> dict:
        cfg = self.cfg
        body: dict[str, Any] = {
            "model": cfg.model,
            "temperature": cfg.temperature,
            "top_p": cfg.top_p,
            "max_tokens": max_tokens,
            "stream": stream,
        }
        if cfg.api == "chat":
            messages = [{"role": "user", "content": question}]
            if assistant_prefix is not None:
                messages.append({"role": "assistant", "content": assistant_prefix})
                # vLLM extension: keep writing the last assistant message
                body["continue_final_message"] = True
                body["add_generation_prompt"] = False
            body["messages"] = messages
            body["logprobs"] = True
            if assistant_prefix is not None:
                body["top_logprobs"] = cfg.top_logprobs
        else:
            body["prompt"] = cfg.prompt_template.format(question=question) + (assistant_prefix or "")
            body["logprobs"] = cfg.top_logprobs if assistant_prefix is not None else 1
        body.update(cfg.extra_body)
        return body

    def stream(self, question: str) -> TokenStream:
        body = self._body(question, None, stream=True, max_tokens=self.cfg.max_tokens)
        try:
            with self._lock:
                request = self._client.build_request("POST", self._url(), json=body)
            response = self._client.send(request, stream=True)
        except httpx.HTTPError as exc:
            raise BackendError(f"generation request failed: {exc}") from exc
        if response.status_code >= 400:
            detail = response.read().decode("utf-8", "replace")[:200]
            response.close()
            raise BackendError(f"generation endpoint returned {response.status_code}: {detail}")
        return TokenStream(self._events(response), on_cancel=response.close)

    def _events(self, response: httpx.Response) -> Iterator[TokenEvent]:
        detector = EndOfThinkingDetector(self.cfg.end_of_thinking)
        try:
            for chunk in _sse_payloads(response.iter_lines()):
                for text, lp in self._chunk_tokens(chunk):
                    yield TokenEvent(text, lp, detector.feed(text))
        except (httpx.StreamClosed, httpx.ReadError, httpx.RemoteProtocolError) as exc:
            if not response.is_closed:
                raise BackendError(f"stream interrupted: {exc}") from exc
        finally:
            response.close()

    def _chunk_tokens(self, chunk: dict) -> list[tuple[str, float]]:
        choices = chunk.get("choices") or []
        if not choices:
            return []
        choice = choices[0]
        if self.cfg.api == "chat":
            delta = choice.get("delta") or {}
            text = delta.get("content") or ""
            entries = (choice.get("logprobs") or {}).get("content")
            if entries is None:
                if text:
                    raise CapabilityError(f"stream chunk lacks 'logprobs.content'; {_LOGPROB_HINT}")
                return []
            return [(e["token"], float(e["logprob"])) for e in entries]
        text = choice.get("text") or ""
        lp = choice.get("logprobs") or {}
        tokens, values = lp.get("tokens"), lp.get("token_logprobs")
        if tokens is None or values is None:
            if text:
                raise CapabilityError(f"stream chunk lacks 'logprobs.token_logprobs'; {_LOGPROB_HINT}")
            return []
        return [(t, float(v)) for t, v in zip(tokens, values)]

    def probe(self, question: str, context: str, max_tokens: int) -> ProbeCompletion:
        body = self._body(question, context, stream=False, max_tokens=max_tokens)
        try:
            response = self._client.post(self._url(), json=body)
        except httpx.HTTPError as exc:
            raise BackendError(f"probe request failed: {exc}") from exc
        if response.status_code >= 400:
            raise BackendError(f"probe endpoint returned {response.status_code}: {response.text[:200]}")
        payload = response.json()
        choice = (payload.get("choices") or [{}])[0]
        usage = payload.get("usage") or {}
        n = usage.get("completion_tokens")
        lp = choice.get("logprobs")
        if self.cfg.api == "chat":
            entries = (lp or {}).get("content")
            if entries is None:
                raise CapabilityError(f"probe response lacks 'logprobs.content'; {_LOGPROB_HINT}")
            tokens = tuple(e["token"] for e in entries)
            logprobs = tuple(float(e["logprob"]) for e in entries)
            top = tuple({t["token"]: float(t["logprob"]) for t in (e.get("top_logprobs") or [])} for e in entries)
        else:
            if not lp or lp.get("token_logprobs") is None:
                raise CapabilityError(f"probe response lacks 'logprobs.token_logprobs'; {_LOGPROB_HINT}")
            tokens = tuple(lp["tokens"])
            logprobs = tuple(float(x) for x in lp["token_logprobs"])
            top = tuple(dict(d or {}) for d in (lp.get("top_logprobs") or [{} for _ in tokens]))
        return ProbeCompletion(tokens, logprobs, top, n)


@dataclass(frozen=True)
class EmbedEndpointConfig:
    base_url: str
    model: str = "default"
    dim: int | None = None
    api_key: str | None = None
    timeout: float = 30.0

    @classmethod
    def from_env(cls, **overrides: Any) -> EmbedEndpointConfig | None:
        base = os.environ.get("COTEXIT_EMBED_URL")
        if not base:
            return None
        kw: dict[str, Any] = {
            "base_url": base,
            "model": os.environ.get("COTEXIT_EMBED_MODEL", "default"),
            "api_key": os.environ.get("COTEXIT_API_KEY") or None,
        }
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)


class HttpEmbedder:
    """Remote detector behind an OpenAI-style ``/embeddings`` endpoint.

    Results are cached per text; call :meth:`reset_cache` between episodes if
    memory matters.  ``latencies`` records wall time per uncached call.
    """

    def __init__(self, cfg: EmbedEndpointConfig, client: httpx.Client | None = None) -> None:
        self.cfg = cfg
        self._client = client or httpx.Client(timeout=cfg.timeout, headers=_headers(cfg.api_key))
        self._dim = cfg.dim
        self._cache: dict[str, Embedding] = {}
        self._lock = threading.Lock()
        self.latencies: list[float] = []

    def dim(self) -> int:
        if self._dim is None:
            raise ConfigurationError("embedding dimension unknown until the first call")
        return self._dim

    @property
    def total_latency(self) -> float:
        return sum(self.latencies)

    def reset_cache(self) -> None:
        with self._lock:
            self._cache.clear()

    def embed(self, text: str) -> Embedding:
        with self._lock:
            hit = self._cache.get(text)
        if hit is not None:
            return hit
        url = self.cfg.base_url.rstrip("/") + "/embeddings"
        t0 = time.perf_counter()
        try:
            response = self._client.post(url, json={"model": self.cfg.model, "input": text})
        except httpx.HTTPError as exc:
            raise BackendError(f"embedding request failed: {exc}") from exc
        elapsed = time.perf_counter() - t0
        if response.status_code >= 400:
            raise BackendError(f"embedding endpoint returned {response.status_code}: {response.text[:200]}")
        try:
            vector = response.json()["data"][0]["embedding"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise BackendError("embedding response lacks data[0].embedding") from exc
        with self._lock:
            self.latencies.append(elapsed)
            if self._dim is None:
                self._dim = len(vector)
            elif len(vector) != self._dim:
                raise ConfigurationError(f"embedding dimension drifted: expected {self._dim}, got {len(vector)}")
            emb = Embedding(vector)
            self._cache[text] = emb
        return emb
