# predinvent/src/proposer_clients.py
"""Network-backed proposers: an OpenAI-style chat-completions endpoint and Gemini."""
import os
import time
from typing import Any, Callable, Optional

import httpx

from .config_models import ProposerBackend, ProposerConfig
from .core import ConfigurationError
from .logging_config import get_logger
from .prompt_templates import load_prompt, render
from .propose import EffectRequest, EnumerateProposer, Proposer, ProposerTransportError, ScriptedProposer

log = get_logger(__name__)

MAX_RETRIES = 3
INITIAL_BACKOFF_SECONDS = 1
MAX_BACKOFF_SECONDS = 16
RETRYABLE_STATUS = {429, 500, 502, 503, 504}
DEFAULT_GEMINI_MODEL = "gemini-1.5-flash-latest"


def _api_key(config: ProposerConfig, api_key: Optional[str]) -> str:
    key = api_key if api_key is not None else os.getenv(config.api_key_env)
    if not key:
        log.error("API key not provided or found in environment.", env_var=config.api_key_env)
        raise ConfigurationError(f"{config.api_key_env} not provided or found in environment")
    return key


class ChatProposer(Proposer):
    """Renders the prompt templates and sends one fresh system + user exchange per call."""

    def complete_partial_domain(self, partial: str, digest: str) -> str:
        return self.chat(load_prompt("system_context.txt"),
                         render("partial_domain.txt", partial_pddl=partial, demo_digest=digest))

    def propose_effects(self, request: EffectRequest) -> str:
        return self.chat(load_prompt("system_context.txt"),
                         render("propose_effects.txt", partial_pddl=request.partial_pddl, history=request.history,
                                focus=request.focus, batch_size=request.batch_size))

    def chat(self, system: str, user: str) -> str:
        raise NotImplementedError


class HttpProposer(ChatProposer):
    name = "http"

    def __init__(self, config: ProposerConfig, api_key: Optional[str] = None,
                 client: Optional[httpx.Client] = None, sleep: Callable[[float], None] = time.sleep):
        if not config.endpoint:
            raise ConfigurationError("the http proposer needs an endpoint")
        self.config = config
        self._key = _api_key(config, api_key)
        self._client = client or httpx.Client(timeout=config.timeout_s)
        self._sleep = sleep
        log.info("HttpProposer initialized.", endpoint=config.endpoint, model=config.model)

    def chat(self, system: str, user: str) -> str:
        body = {
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [{"role": "system", "content": system}, {"role": "user", "content": user}],
        }
        headers = {"Authorization": f"Bearer {self._key}"}
        backoff = INITIAL_BACKOFF_SECONDS
        for attempt in range(MAX_RETRIES):
            try:
                response = self._client.post(self.config.endpoint, json=body, headers=headers)
            except httpx.HTTPError as e:
                raise ProposerTransportError(f"HTTP error calling proposer: {e}") from e
            if response.status_code in RETRYABLE_STATUS and attempt < MAX_RETRIES - 1:
                log.warning("Proposer endpoint busy. Retrying.", status=response.status_code, attempt=attempt + 1,
                            backoff_seconds=backoff)
                self._sleep(backoff)
                backoff = min(MAX_BACKOFF_SECONDS, backoff * 2)
                continue
            try:
                response.raise_for_status()
                data = response.json()
                return data["choices"][0]["message"]["content"] or ""
            except httpx.HTTPStatusError as e:
                raise ProposerTransportError(f"proposer returned HTTP {response.status_code}") from e
            except (ValueError, KeyError, IndexError, TypeError) as e:
                raise ProposerTransportError(f"unexpected proposer response shape: {e}") from e
        raise ProposerTransportError(f"no response from proposer after {MAX_RETRIES} attempts")


class GeminiProposer(ChatProposer):
    name = "gemini"

    def __init__(self, config: ProposerConfig, api_key: Optional[str] = None,
                 sleep: Callable[[float], None] = time.sleep, genai: Optional[Any] = None):
        if genai is None:
            import google.generativeai as genai

        self._genai = genai
        self.config = config
        self.model_name = config.model or DEFAULT_GEMINI_MODEL
        self._sleep = sleep
        key = _api_key(config, api_key)
        try:
            genai.configure(api_key=key)
        except Exception as e:
            log.error("Failed to configure Gemini API.", error_str=str(e), exc_info=True)
            raise ProposerTransportError(f"Gemini configuration failed: {e}") from e
        log.info("GeminiProposer initialized.", model=self.model_name)

    def chat(self, system: str, user: str) -> str:
        model = self._genai.GenerativeModel(self.model_name, system_instruction=system)
        generation_config = self._genai.types.GenerationConfig(temperature=self.config.temperature)
        backoff = INITIAL_BACKOFF_SECONDS
        for attempt in range(MAX_RETRIES):
            try:
                response = model.generate_content(user, generation_config=generation_config)
                return response.text or ""
            except Exception as e:
                log.warning("Gemini API error. Retrying.", error_str=str(e), attempt=attempt + 1,
                            backoff_seconds=backoff)
                if attempt < MAX_RETRIES - 1:
                    self._sleep(backoff)
                    backoff = min(MAX_BACKOFF_SECONDS, backoff * 2)
        log.error("Failed to get response from Gemini after max retries.", retries=MAX_RETRIES)
        raise ProposerTransportError(f"Failed to get response from Gemini after {MAX_RETRIES} retries.")


def build_proposer(config: ProposerConfig, domain=None) -> Proposer:
    """Proposer for ``config.backend``; the enumerating backend needs the domain."""
    if config.backend == ProposerBackend.SCRIPTED:
        return ScriptedProposer.from_file(config.replay_file)
    if config.backend == ProposerBackend.ENUMERATE:
        if domain is None:
            raise ConfigurationError("the enumerate proposer needs a domain")
        return EnumerateProposer(domain)
    if config.backend == ProposerBackend.HTTP:
        return HttpProposer(config)
    return GeminiProposer(config)
