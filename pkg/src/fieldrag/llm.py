"""Text completion providers behind one minimal contract.

LLMProvider is text-in/text-out with a temperature knob, default 0 so
runs reproduce. EchoLLM and ScriptedLLM keep the whole stack testable
offline; RemoteLLM speaks a small HTTP+JSON completion wire.
"""

from __future__ import annotations

import os
import re
import time
from typing import Protocol, runtime_checkable

import requests

from .errors import ConfigError, ProviderUnavailable

# context excerpts are rendered one per line as "[doc_id:chunk_id] text"
CITATION_TAG = re.compile(r"\[([A-Za-z0-9_.-]+):([A-Za-z0-9_.-]+)\]")


@runtime_checkable
class LLMProvider(Protocol):
    def complete(self, prompt: str, *, temperature: float = 0.0) -> str:
        ...


class EchoLLM:
    """Deterministic stand-in: repeats the first context excerpt verbatim,
    tag included, so the citation parser is exercised end to end."""

    NO_CONTEXT = "No grounded context was provided."

    def complete(self, prompt: str, *, temperature: float = 0.0) -> str:
        for line in prompt.splitlines():
            stripped = line.strip()
            if CITATION_TAG.match(stripped):
                return stripped
        return self.NO_CONTEXT


class ScriptedLLM:
    """Returns scripted outputs in order; repeats the last one after the
    script runs out. Records every prompt for assertions."""

    def __init__(self, outputs: list[str]):
        if not outputs:
            raise ValueError("script must have at least one output")
        self.outputs = list(outputs)
        self.prompts: list[str] = []
        self._cursor = 0

    def complete(self, prompt: str, *, temperature: float = 0.0) -> str:
        self.prompts.append(prompt)
        out = self.outputs[min(self._cursor, len(self.outputs) - 1)]
        self._cursor += 1
        return out


class RemoteLLM:
    """POST {endpoint}/complete {"prompt", "temperature"} -> {"text"}.

    Transient 5xx and transport errors are retried with exponential
    backoff; anything else raises ProviderUnavailable.
    """

    def __init__(
        self,
        endpoint: str,
        *,
        auth_env_var: str | None = None,
        timeout: float = 60.0,
        retries: int = 3,
        backoff_base: float = 0.5,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.auth_env_var = auth_env_var
        self.timeout = timeout
        self.retries = retries
        self.backoff_base = backoff_base
        self._session = requests.Session()

    def _headers(self) -> dict:
        if not self.auth_env_var:
            return {}
        token = os.environ.get(self.auth_env_var)
        if not token:
            raise ConfigError(f"auth env var {self.auth_env_var} is not set")
        return {"Authorization": f"Bearer {token}"}

    def complete(self, prompt: str, *, temperature: float = 0.0) -> str:
        url = f"{self.endpoint}/complete"
        body = {"prompt": prompt, "temperature": temperature}
        headers = self._headers()
        last = "no attempt made"
        for attempt in range(1, self.retries + 1):
            try:
                resp = self._session.post(
                    url, json=body, headers=headers, timeout=self.timeout
                )
            except requests.RequestException as exc:
                last = str(exc)
            else:
                if resp.status_code == 200:
                    try:
                        text = resp.json()["text"]
                    except (ValueError, KeyError) as exc:
                        raise ProviderUnavailable(
                            f"malformed completion response: {exc}"
                        ) from exc
                    if not isinstance(text, str):
                        raise ProviderUnavailable("completion text not a string")
                    return text
                if resp.status_code < 500:
                    raise ProviderUnavailable(
                        f"completion endpoint returned HTTP {resp.status_code}"
                    )
                last = f"HTTP {resp.status_code}"
            if attempt < self.retries:
                time.sleep(self.backoff_base * 2 ** (attempt - 1))
        raise ProviderUnavailable(
            f"completion endpoint failed after {self.retries} attempts: {last}"
        )
