"""HTTP client speaking the inference wire protocol.

Endpoints:
  GET  /v1/capabilities
  POST /v1/predict      {"prompt", "mask_marker", "n_best", "banned"}
  POST /v1/score        {"prompt_prefix", "candidates"}
  POST /v1/token_count  {"text"}

Transport failures are retried with exponential backoff; a request that
still fails raises, which aborts the surrounding run rather than silently
skipping instances.
"""
from __future__ import annotations

import time
from collections.abc import Sequence

import requests

from ..prompting import RenderedPrompt
from .base import BackendCapabilities, BackendError, Prediction, ProtocolError, predictions_from_wire


class HttpBackend:
    def __init__(
        self,
        base_url: str,
        timeout: float = 60.0,
        retries: int = 3,
        backoff: float = 0.2,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.retries = max(1, retries)
        self.backoff = backoff
        self._capabilities: BackendCapabilities | None = None

    def __repr__(self) -> str:
        return f"HttpBackend({self.base_url!r})"

    def _request(self, method: str, path: str, payload: dict | None = None) -> dict:
        url = f"{self.base_url}{path}"
        last_error: Exception | None = None
        for attempt in range(self.retries):
            try:
                if method == "GET":
                    response = requests.get(url, timeout=self.timeout)
                else:
                    response = requests.post(url, json=payload, timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = exc
            else:
                if 500 <= response.status_code < 600:
                    last_error = BackendError(f"{url} answered {response.status_code}: {response.text[:200]}")
                elif response.status_code >= 400:
                    raise ProtocolError(f"{url} rejected the request: {_error_detail(response)}")
                else:
                    try:
                        body = response.json()
                    except ValueError as exc:
                        raise ProtocolError(f"{url} returned non-JSON body") from exc
                    if not isinstance(body, dict):
                        raise ProtocolError(f"{url} returned a non-object body")
                    return body
            if attempt + 1 < self.retries:
                time.sleep(self.backoff * (2**attempt))
        raise BackendError(f"{url} unreachable after {self.retries} attempts: {last_error}")

    def capabilities(self) -> BackendCapabilities:
        if self._capabilities is None:
            self._capabilities = BackendCapabilities.from_wire(self._request("GET", "/v1/capabilities"))
        return self._capabilities

    def predict(self, prompt: RenderedPrompt, banned: frozenset[str], n_best: int) -> list[Prediction]:
        body = self._request(
            "POST",
            "/v1/predict",
            {
                "prompt": prompt.text,
                "mask_marker": prompt.slot_marker,
                "n_best": n_best,
                "banned": sorted(banned),
            },
        )
        items = body.get("predictions")
        if not isinstance(items, list):
            raise ProtocolError("predict response lacks a predictions list")
        return predictions_from_wire(items, banned)

    def score_candidates(self, prompt: RenderedPrompt, candidates: Sequence[str]) -> list[tuple[str, float]]:
        body = self._request(
            "POST",
            "/v1/score",
            {"prompt_prefix": prompt.text, "candidates": list(candidates)},
        )
        scores = body.get("scores")
        if not isinstance(scores, list) or len(scores) != len(candidates):
            raise ProtocolError("score response is not aligned with the candidate list")
        try:
            return [(c, float(s)) for c, s in zip(candidates, scores)]
        except (TypeError, ValueError) as exc:
            raise ProtocolError(f"score response contains non-numeric entries: {exc}") from exc

    def token_count(self, entity: str) -> int:
        body = self._request("POST", "/v1/token_count", {"text": entity})
        count = body.get("count")
        if not isinstance(count, int) or count < 0:
            raise ProtocolError(f"token_count response invalid: {body!r}")
        return count


def _error_detail(response) -> str:
    try:
        body = response.json()
        error = body.get("error", {})
        return f"{error.get('code', 'unknown')}: {error.get('message', '')} (HTTP {response.status_code})"
    except ValueError:
        return f"HTTP {response.status_code}"
