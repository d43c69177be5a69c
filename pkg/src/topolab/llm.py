"""Minimal chat-completions client used by the LLM backend."""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass
from typing import Callable

import httpx

from .agents import AgentSpec, Prompt

log = logging.getLogger(__name__)

ENV_KEY = "MAS_LLM_API_KEY"
ENV_BASE_URL = "MAS_LLM_BASE_URL"


class BackendError(RuntimeError):
    pass


class BackendUnavailable(BackendError):
    """Network failure, timeout, or rate limiting that outlived the retries."""


class ProtocolError(BackendError):
    def __init__(self, status: int, body: str):
        super().__init__(f"chat completion failed with HTTP {status}: {body[:500]}")
        self.status = status
        self.body = body


class MalformedResponse(BackendError):
    pass


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    api_key: str
    model: str = "gpt-3.5-turbo"
    temperature: float = 0.0
    timeout: float = 60.0
    max_attempts: int = 3
    backoff: float = 1.0

    @classmethod
    def from_env(cls, **overrides) -> "EndpointConfig":
        base_url = overrides.pop("base_url", None) or os.environ.get(ENV_BASE_URL)
        api_key = overrides.pop("api_key", None) or os.environ.get(ENV_KEY)
        if not base_url or not api_key:
            raise BackendError(f"set {ENV_BASE_URL} and {ENV_KEY} to use the LLM backend")
        return cls(base_url=base_url, api_key=api_key, **overrides)


def request_body(cfg: EndpointConfig, prompt: Prompt) -> dict:
    return {"model": cfg.model, "messages": prompt.messages(), "temperature": cfg.temperature}


def llm_respond(
    spec: AgentSpec,
    prompt: Prompt,
    cfg: EndpointConfig,
    client: httpx.Client | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> str:
    """Send one chat-completion request and return the first choice's content.

    Timeouts, connection errors and HTTP 429 are retried with exponential
    backoff up to ``cfg.max_attempts`` attempts in total.
    """
    url = cfg.base_url.rstrip("/") + "/chat/completions"
    headers = {"Authorization": f"Bearer {cfg.api_key}"}
    body = request_body(cfg, prompt)
    own_client = client is None
    client = client or httpx.Client(timeout=cfg.timeout)
    last_error = "no attempt made"
    try:
        for attempt in range(cfg.max_attempts):
            if attempt:
                sleep(cfg.backoff * 2 ** (attempt - 1))
            try:
                resp = client.post(url, json=body, headers=headers)
            except (httpx.TimeoutException, httpx.TransportError) as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                log.warning("agent %d: attempt %d failed (%s)", spec.index, attempt + 1, last_error)
                continue
            if resp.status_code == 429:
                last_error = "HTTP 429 rate limited"
                log.warning("agent %d: attempt %d rate limited", spec.index, attempt + 1)
                continue
            if not 200 <= resp.status_code < 300:
                raise ProtocolError(resp.status_code, resp.text)
            try:
                content = resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise MalformedResponse(f"response lacks choices[0].message.content: {resp.text[:200]}") from exc
            if not isinstance(content, str):
                raise MalformedResponse(f"message content is {type(content).__name__}, not text")
            return content
    finally:
        if own_client:
            client.close()
    raise BackendUnavailable(f"{url} unavailable after {cfg.max_attempts} attempts ({last_error})")
