"""Vision chat-model client: providers, retry policy, rate limiting, generation records."""

from __future__ import annotations

import enum
import json
import logging
import os
import random
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol

import httpx
import numpy as np

from .imaging import image_hash, png_data_url
from .masking import Condition
from .prompts import build_answer_prompt, build_cot_prompt, prompt_hash

logger = logging.getLogger(__name__)

API_KEY_ENV = "CRM_API_KEY"
FORMAT_VERSION = 1


class ProviderKind(str, enum.Enum):
    HTTP_CHAT = "http"
    MOCK = "mock"


class Stage(str, enum.Enum):
    COT = "cot"
    ANSWER = "answer"


class ProviderError(Exception):
    """Non-retryable provider failure."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class TransientProviderError(ProviderError):
    """Failure worth retrying (5xx, 429, connection trouble)."""


class ProviderUnreachableError(ProviderError):
    pass


class RateLimitedError(ProviderError):
    pass


class ContentRefusedError(ProviderError):
    """The provider blocked the request itself, as opposed to the model writing a refusal."""


class MockMissingError(ProviderError):
    pass


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    base_delay: float = 1.0
    max_delay: float = 30.0
    jitter: float = 0.5

    def delay(self, attempt: int, rng: random.Random | None = None) -> float:
        """Sleep before retry number ``attempt`` (1-based): exponential backoff with jitter."""
        d = min(self.max_delay, self.base_delay * 2 ** (attempt - 1))
        r = (rng or random).random()
        return d * (1 - self.jitter + self.jitter * r)


@dataclass(frozen=True)
class GenerationConfig:
    provider: ProviderKind = ProviderKind.MOCK
    model_name: str = "mock"
    endpoint: str | None = None
    cot_temperature: float = 0.2
    answer_temperature: float = 0.0
    cot_max_tokens: int = 1024
    answer_max_tokens: int = 128
    timeout: float = 60.0
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    mock_fixture: str | None = None

    def __post_init__(self):
        for name in ("cot_temperature", "answer_temperature"):
            t = getattr(self, name)
            if not 0.0 <= t <= 2.0:
                raise ValueError(f"{name} must lie in [0, 2], got {t}")
        if self.retry.max_attempts < 1:
            raise ValueError("retry.max_attempts must be >= 1")

    def snapshot(self) -> dict[str, Any]:
        """Serializable view used in run manifests (no credentials)."""
        d = asdict(self)
        d["provider"] = self.provider.value
        return d

    @classmethod
    def from_snapshot(cls, d: dict[str, Any]) -> GenerationConfig:
        d = dict(d)
        d["provider"] = ProviderKind(d["provider"])
        d["retry"] = RetryPolicy(**d["retry"])
        return cls(**d)


@dataclass(frozen=True)
class GenerationRecord:
    item_id: str
    condition: Condition
    stage: Stage
    prompt_hash: str
    image_hash: str
    raw_text: str
    latency: float
    attempt_count: int
    provider_metadata: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["condition"] = self.condition.value
        d["stage"] = self.stage.value
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> GenerationRecord:
        d = dict(d)
        d["condition"] = Condition(d["condition"])
        d["stage"] = Stage(d["stage"])
        return cls(**d)


@dataclass
class ProviderResponse:
    text: str
    metadata: dict[str, Any] = field(default_factory=dict)


class Provider(Protocol):
    def complete(self, prompt: str, image: np.ndarray | None, *, temperature: float,
                 max_tokens: int) -> ProviderResponse: ...


class MockProvider:
    """Returns canned text keyed on (image_hash, prompt_hash).

    ``calls`` counts every completion request, which the cache tests rely on.
    """

    def __init__(self, responses: dict[tuple[str, str], str]):
        self.responses = dict(responses)
        self.calls = 0
        self.requests: list[dict[str, Any]] = []
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> MockProvider:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls({(r["image_hash"], r["prompt_hash"]): r["raw_text"] for r in data["responses"]})

    def register(self, image: np.ndarray | None, prompt: str, text: str) -> None:
        self.responses[(_hash_or_none(image), prompt_hash(prompt))] = text

    def complete(self, prompt, image, *, temperature, max_tokens):
        key = (_hash_or_none(image), prompt_hash(prompt))
        with self._lock:
            self.calls += 1
            self.requests.append({"key": key, "temperature": temperature, "max_tokens": max_tokens})
        try:
            return ProviderResponse(self.responses[key], {"provider": "mock"})
        except KeyError:
            raise MockMissingError(f"no canned response for image {key[0][:12]} / prompt {key[1][:12]}") from None


def _hash_or_none(image) -> str:
    return "none" if image is None else image_hash(image)


class HttpChatProvider:
    """Chat-completions style HTTP API with the image embedded as a base64 data URL."""

    def __init__(self, endpoint: str, model: str, *, api_key: str | None = None, timeout: float = 60.0,
                 client: httpx.Client | None = None):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.client = client or httpx.Client(timeout=timeout)

    def payload(self, prompt: str, image, temperature: float, max_tokens: int) -> dict[str, Any]:
        content: list[dict[str, Any]] = [{"type": "text", "text": prompt}]
        if image is not None:
            content.append({"type": "image_url", "image_url": {"url": png_data_url(image)}})
        return {
            "model": self.model,
            "messages": [{"role": "user", "content": content}],
            "temperature": temperature,
            "max_tokens": max_tokens,
        }

    def complete(self, prompt, image, *, temperature, max_tokens):
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = self.payload(prompt, image, temperature, max_tokens)
        try:
            resp = self.client.post(self.endpoint, json=body, headers=headers)
        except httpx.TransportError as exc:
            raise TransientProviderError(f"transport error: {exc}") from exc
        status = resp.status_code
        if status == 429 or status >= 500:
            raise TransientProviderError(f"HTTP {status}", status=status)
        try:
            data = resp.json()
        except ValueError:
            data = {}
        if status >= 400:
            if _is_content_block(data):
                raise ContentRefusedError(f"provider blocked content (HTTP {status})", status=status)
            raise ProviderError(f"HTTP {status}: {resp.text[:200]}", status=status)
        try:
            choice = data["choices"][0]
        except (KeyError, IndexError, TypeError):
            raise ProviderError("response has no choices", status=status) from None
        if choice.get("finish_reason") == "content_filter":
            raise ContentRefusedError("provider content filter", status=status)
        text = choice.get("message", {}).get("content") or ""
        if isinstance(text, list):
            text = "".join(part.get("text", "") for part in text if isinstance(part, dict))
        meta = {"provider": "http", "model": data.get("model", self.model)}
        if "usage" in data:
            meta["usage"] = data["usage"]
        return ProviderResponse(text, meta)


def _is_content_block(data: Any) -> bool:
    if not isinstance(data, dict):
        return False
    err = data.get("error") or {}
    if not isinstance(err, dict):
        return False
    code = f"{err.get('code', '')} {err.get('type', '')}".lower()
    return "content_filter" in code or "content_policy" in code or "safety" in code


class RateLimiter:
    """Thread-safe token bucket: ``rate`` requests per second with bursts up to ``burst``."""

    def __init__(self, rate: float, burst: int | None = None, *, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate
        self.capacity = float(burst if burst is not None else max(1, int(rate)))
        self.tokens = self.capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self.tokens = min(self.capacity, self.tokens + (now - self._last) * self.rate)
                self._last = now
                if self.tokens >= 1:
                    self.tokens -= 1
                    return
                wait = (1 - self.tokens) / self.rate
            self._sleep(wait)


class RateLimitedProvider:
    def __init__(self, inner: Provider, limiter: RateLimiter):
        self.inner = inner
        self.limiter = limiter

    def complete(self, prompt, image, *, temperature, max_tokens):
        self.limiter.acquire()
        return self.inner.complete(prompt, image, temperature=temperature, max_tokens=max_tokens)


def make_provider(config: GenerationConfig, *, rate_limit: float | None = None) -> Provider:
    if config.provider is ProviderKind.MOCK:
        if not config.mock_fixture:
            raise ValueError("mock provider needs a fixture file")
        provider: Provider = MockProvider.from_file(config.mock_fixture)
    else:
        if not config.endpoint:
            raise ValueError("http provider needs an endpoint")
        provider = HttpChatProvider(config.endpoint, config.model_name, timeout=config.timeout)
    if rate_limit:
        provider = RateLimitedProvider(provider, RateLimiter(rate_limit))
    return provider


def call_with_retry(provider: Provider, prompt: str, image, *, temperature: float, max_tokens: int,
                    policy: RetryPolicy, sleep: Callable[[float], None] = time.sleep,
                    rng: random.Random | None = None) -> tuple[ProviderResponse, int]:
    """Returns the response and the number of attempts it took."""
    last: TransientProviderError | None = None
    for attempt in range(1, policy.max_attempts + 1):
        try:
            return provider.complete(prompt, image, temperature=temperature, max_tokens=max_tokens), attempt
        except TransientProviderError as exc:
            last = exc
            logger.warning("attempt %d/%d failed: %s", attempt, policy.max_attempts, exc)
            if attempt < policy.max_attempts:
                sleep(policy.delay(attempt, rng))
    assert last is not None
    if last.status == 429:
        raise RateLimitedError(f"rate limited after {policy.max_attempts} attempts", status=429) from last
    raise ProviderUnreachableError(
        f"gave up after {policy.max_attempts} attempts; last error: {last}", status=last.status
    ) from last


def _generate(config, provider, image, prompt, *, temperature, max_tokens, item_id, condition, stage, sleep):
    if provider is None:
        provider = make_provider(config)
    start = time.perf_counter()
    resp, attempts = call_with_retry(provider, prompt, image, temperature=temperature, max_tokens=max_tokens,
                                     policy=config.retry, sleep=sleep)
    return GenerationRecord(
        item_id=item_id,
        condition=Condition(condition),
        stage=stage,
        prompt_hash=prompt_hash(prompt),
        image_hash=image_hash(image),
        raw_text=resp.text,
        latency=time.perf_counter() - start,
        attempt_count=attempts,
        provider_metadata={**resp.metadata, "temperature": temperature, "max_tokens": max_tokens},
    )


def generate_cot(config: GenerationConfig, image: np.ndarray, question: str, *, provider: Provider | None = None,
                 item_id: str = "", condition: Condition = Condition.BASELINE,
                 sleep: Callable[[float], None] = time.sleep) -> GenerationRecord:
    return _generate(config, provider, image, build_cot_prompt(question),
                     temperature=config.cot_temperature, max_tokens=config.cot_max_tokens,
                     item_id=item_id, condition=condition, stage=Stage.COT, sleep=sleep)


def generate_answer(config: GenerationConfig, image: np.ndarray, question: str, masked: bool, *,
                    provider: Provider | None = None, item_id: str = "",
                    condition: Condition | None = None,
                    sleep: Callable[[float], None] = time.sleep) -> GenerationRecord:
    if condition is None:
        condition = Condition.SPECIFIC if masked else Condition.BASELINE
    return _generate(config, provider, image, build_answer_prompt(question, masked),
                     temperature=config.answer_temperature, max_tokens=config.answer_max_tokens,
                     item_id=item_id, condition=condition, stage=Stage.ANSWER, sleep=sleep)
