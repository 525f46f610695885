"""Uniform client over chat-completion backends.

Two backend kinds share one interface: `remote-chat` speaks a generic
JSON chat-completion wire format over HTTP, `mock-fixture` serves replies
from a directory of files named by cache key. Every successful reply is
written to a content-addressed disk cache, so a warm-cache run performs
zero network operations and is byte-reproducible.

Retries: transient remote failures back off exponentially (base 1s,
factor 2, at most 5 attempts). Concurrency: a per-backend semaphore caps
in-flight fetches at `max_parallel`.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional

import requests

from .errors import (
    AuthError,
    CandidateSamplingError,
    ConfigError,
    FixtureMissing,
    JsonParseError,
    NetworkError,
    OfflineViolation,
)
from .json_extract import extract_json_value
from .units import nfc

log = logging.getLogger(__name__)

RETRY_BASE_SECONDS = 1.0
RETRY_FACTOR = 2.0
MAX_ATTEMPTS = 5
REPAIR_SUFFIX = "Return only valid JSON."

# Nucleus-sampling defaults used when a request leaves them unset.
DEFAULT_TEMPERATURE = 1.0
DEFAULT_TOP_P = 0.7


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = DEFAULT_TEMPERATURE
    top_p: float = DEFAULT_TOP_P
    seed: Optional[int] = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not (0 < self.top_p <= 1):
            raise ValueError("top_p must be in (0, 1]")


@dataclass(frozen=True)
class ImageAttachment:
    data: bytes
    media_type: str


@dataclass(frozen=True)
class ChatRequest:
    user: str
    system: Optional[str] = None
    image: Optional[ImageAttachment] = None
    decode: str = "raw-text"  # or "json-expected"
    sampling: SamplingParams = SamplingParams()

    def __post_init__(self):
        if self.decode not in ("raw-text", "json-expected"):
            raise ValueError(f"unknown decode mode: {self.decode}")


@dataclass(frozen=True)
class BackendSpec:
    name: str
    kind: str  # "remote-chat" | "mock-fixture"
    model_id: str = ""
    endpoint: Optional[str] = None
    credentials_env: Optional[str] = None
    fixtures_dir: Optional[str] = None
    max_parallel: int = 4
    timeout: float = 60.0

    def __post_init__(self):
        if self.kind not in ("remote-chat", "mock-fixture"):
            raise ConfigError(f"backend {self.name}: unknown kind {self.kind!r}")
        if self.max_parallel < 1:
            raise ConfigError(f"backend {self.name}: max_parallel must be >= 1")
        if self.kind == "remote-chat" and not (self.endpoint and self.model_id):
            raise ConfigError(f"backend {self.name}: remote-chat requires endpoint and model_id")
        if self.kind == "mock-fixture" and not self.fixtures_dir:
            raise ConfigError(f"backend {self.name}: mock-fixture requires fixtures_dir")


def canonical_request(backend: BackendSpec, req: ChatRequest) -> dict:
    """Wire-visible request content in canonical form (NFC text, no decode flag)."""
    image = None
    if req.image is not None:
        image = {
            "media_type": req.image.media_type,
            "sha256": hashlib.sha256(req.image.data).hexdigest(),
        }
    return {
        "backend": backend.name,
        "model": backend.model_id,
        "system": None if req.system is None else nfc(req.system),
        "user": nfc(req.user),
        "image": image,
        "sampling": {
            "temperature": req.sampling.temperature,
            "top_p": req.sampling.top_p,
            "seed": req.sampling.seed,
        },
    }


def request_key(backend: BackendSpec, req: ChatRequest) -> str:
    """Content address for a request: sha256 of its canonical JSON."""
    canon = json.dumps(
        canonical_request(backend, req),
        sort_keys=True,
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


class ResponseStore:
    """Directory of `<key>.txt` reply files with atomic writes."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def path(self, key: str) -> Path:
        return self.root / f"{key}.txt"

    def get(self, key: str) -> Optional[str]:
        p = self.path(key)
        if not p.is_file():
            return None
        return p.read_text(encoding="utf-8")

    def put(self, key: str, text: str) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        # write-temp-then-rename keeps concurrent readers consistent
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=".tmp-", suffix=".txt")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(text)
            os.replace(tmp, self.path(key))
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def _default_transport(url: str, headers: dict, payload: dict, timeout: float):
    resp = requests.post(url, headers=headers, json=payload, timeout=timeout)
    return resp.status_code, resp.text


def wire_payload(backend: BackendSpec, req: ChatRequest) -> dict:
    """JSON chat-completion body: {model, messages, temperature, top_p, seed}."""
    messages = []
    if req.system is not None:
        messages.append({"role": "system", "content": [{"type": "text", "text": req.system}]})
    content = [{"type": "text", "text": req.user}]
    if req.image is not None:
        content.append(
            {
                "type": "image",
                "media_type": req.image.media_type,
                "data": base64.b64encode(req.image.data).decode("ascii"),
            }
        )
    messages.append({"role": "user", "content": content})
    payload = {
        "model": backend.model_id,
        "messages": messages,
        "temperature": req.sampling.temperature,
        "top_p": req.sampling.top_p,
    }
    if req.sampling.seed is not None:
        payload["seed"] = req.sampling.seed
    return payload


def _reply_text(body: str) -> str:
    try:
        data = json.loads(body)
        content = data["choices"][0]["message"]["content"]
    except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
        raise NetworkError(f"malformed completion response: {exc}") from exc
    if isinstance(content, str):
        return content
    if isinstance(content, list):
        return "".join(part.get("text", "") for part in content if isinstance(part, dict))
    raise NetworkError(f"unsupported content payload: {type(content).__name__}")


class _Inflight:
    """High-water-mark counter, injectable so tests can observe the cap."""

    def __init__(self):
        self._lock = threading.Lock()
        self._current: dict[str, int] = {}
        self.peak: dict[str, int] = {}

    def enter(self, name: str):
        with self._lock:
            n = self._current.get(name, 0) + 1
            self._current[name] = n
            if n > self.peak.get(name, 0):
                self.peak[name] = n

    def leave(self, name: str):
        with self._lock:
            self._current[name] -= 1


class Gateway:
    """Shared, thread-safe entry point for all model completions.

    One gateway per run: it owns the response cache and the per-backend
    concurrency limits. `transport` and `sleep` are injectable for tests.
    """

    def __init__(
        self,
        cache_dir: str | Path,
        offline: bool = False,
        transport: Callable = _default_transport,
        sleep: Callable[[float], None] = time.sleep,
        inflight: Optional[_Inflight] = None,
    ):
        self.cache = ResponseStore(cache_dir)
        self.offline = offline
        self.transport = transport
        self.sleep = sleep
        self.inflight = inflight or _Inflight()
        self.network_calls = 0
        self._lock = threading.Lock()
        self._semaphores: dict[str, threading.Semaphore] = {}

    def _semaphore(self, backend: BackendSpec) -> threading.Semaphore:
        with self._lock:
            sem = self._semaphores.get(backend.name)
            if sem is None:
                sem = threading.Semaphore(backend.max_parallel)
                self._semaphores[backend.name] = sem
            return sem

    # -- single completion ----------------------------------------------

    def complete(self, backend: BackendSpec, req: ChatRequest) -> str:
        key = request_key(backend, req)
        cached = self.cache.get(key)
        if cached is not None:
            return cached

        sem = self._semaphore(backend)
        with sem:
            self.inflight.enter(backend.name)
            try:
                if backend.kind == "mock-fixture":
                    text = self._fetch_fixture(backend, key)
                else:
                    if self.offline:
                        raise OfflineViolation(
                            f"cache miss for {backend.name} request {key} with network forbidden"
                        )
                    text = self._fetch_remote(backend, req)
            finally:
                self.inflight.leave(backend.name)

        self.cache.put(key, text)
        return text

    def _fetch_fixture(self, backend: BackendSpec, key: str) -> str:
        store = ResponseStore(backend.fixtures_dir)
        text = store.get(key)
        if text is None:
            raise FixtureMissing(key, backend.fixtures_dir)
        return text

    def _fetch_remote(self, backend: BackendSpec, req: ChatRequest) -> str:
        headers = {"Content-Type": "application/json"}
        if backend.credentials_env:
            token = os.environ.get(backend.credentials_env)
            if not token:
                raise AuthError(
                    f"backend {backend.name}: credentials env var "
                    f"{backend.credentials_env} is not set"
                )
            headers["Authorization"] = f"Bearer {token}"

        payload = wire_payload(backend, req)
        delay = RETRY_BASE_SECONDS
        last_error = None
        for attempt in range(1, MAX_ATTEMPTS + 1):
            try:
                with self._lock:
                    self.network_calls += 1
                status, body = self.transport(backend.endpoint, headers, payload, backend.timeout)
            except (requests.RequestException, OSError) as exc:
                last_error = NetworkError(f"{backend.name}: transport failure: {exc}")
            else:
                if status in (401, 403):
                    raise AuthError(f"{backend.name}: authentication rejected (HTTP {status})")
                if status == 200:
                    return _reply_text(body)
                if status == 429 or status >= 500:
                    last_error = NetworkError(f"{backend.name}: transient HTTP {status}")
                else:
                    raise NetworkError(f"{backend.name}: HTTP {status}: {body[:200]}")
            if attempt < MAX_ATTEMPTS:
                log.warning(
                    "%s: attempt %d/%d failed (%s), retrying in %.0fs",
                    backend.name, attempt, MAX_ATTEMPTS, last_error, delay,
                )
                self.sleep(delay)
                delay *= RETRY_FACTOR
        raise last_error

    # -- structured completion ------------------------------------------

    def complete_json(self, backend: BackendSpec, req: ChatRequest):
        """Complete and parse; on parse failure, re-prompt once for valid JSON."""
        if req.decode != "json-expected":
            req = replace(req, decode="json-expected")
        raw = self.complete(backend, req)
        try:
            return extract_json_value(raw)
        except ValueError:
            log.warning("%s: unparseable JSON reply, issuing repair re-prompt", backend.name)
        repair = replace(req, user=f"{req.user}\n\n{REPAIR_SUFFIX}")
        raw = self.complete(backend, repair)
        try:
            return extract_json_value(raw)
        except ValueError as exc:
            raise JsonParseError(f"{backend.name}: reply is not JSON after repair", raw) from exc

    # -- fan-out ----------------------------------------------------------

    def complete_many(self, backend: BackendSpec, reqs: list[ChatRequest]) -> list[str]:
        """Concurrent completions, results in request order.

        Per-slot failures are collected; if any slot failed the call raises
        CandidateSamplingError carrying the partial results.
        """
        results: dict[int, str] = {}
        failures: dict[int, Exception] = {}
        workers = min(backend.max_parallel, max(1, len(reqs)))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(self.complete, backend, r): i for i, r in enumerate(reqs)}
            for future, i in futures.items():
                try:
                    results[i] = future.result()
                except Exception as exc:  # noqa: BLE001 - reported per slot
                    failures[i] = exc
        if failures:
            raise CandidateSamplingError(failures, results)
        return [results[i] for i in range(len(reqs))]

    def sample_candidates(self, backend: BackendSpec, req: ChatRequest, n: int) -> list[str]:
        """n completions with seeds base_seed+0 .. base_seed+n-1, order-stable."""
        if n < 1:
            raise ValueError("n must be >= 1")
        base_seed = req.sampling.seed if req.sampling.seed is not None else 0
        reqs = [
            replace(req, sampling=replace(req.sampling, seed=base_seed + i))
            for i in range(n)
        ]
        return self.complete_many(backend, reqs)
