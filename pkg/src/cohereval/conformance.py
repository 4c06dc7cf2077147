"""Wire-protocol conformance checks for inference servers.

Any server claiming to speak the protocol (the reference server or an
external model adapter) should pass these checks. Probing prompts default to
generic factual cloze text, which real models answer; servers that only
answer known templates (like the reference server) should be probed with a
prompt they can parse.
"""
from __future__ import annotations

from dataclasses import dataclass

import requests

from .backends.base import BackendError, BackendKind, ProtocolError
from .backends.http_client import HttpBackend
from .corpus import normalize_entity
from .prompting import MANUAL, AUTOREGRESSIVE, RenderedPrompt
from .types import Direction

DEFAULT_CANDIDATES = ("Paris", "Berlin", "London")


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def _masked_probe(mask_marker: str) -> str:
    return f"The capital of France is {mask_marker}."


def _prompt(text: str, marker: str) -> RenderedPrompt:
    return RenderedPrompt(text=text, direction=Direction.PREDICT_OBJECT, slot_marker=marker, mode=MANUAL)


def _prefix_prompt(text: str) -> RenderedPrompt:
    return RenderedPrompt(text=text, direction=Direction.PREDICT_OBJECT, slot_marker="", mode=AUTOREGRESSIVE)


def run_conformance(
    base_url: str,
    probe_prompt: str | None = None,
    probe_prefix: str | None = None,
    probe_candidates: tuple[str, ...] = DEFAULT_CANDIDATES,
    probe_text: str = "New York",
    timeout: float = 120.0,
) -> list[CheckResult]:
    """Run every applicable check against a live server."""
    backend = HttpBackend(base_url, timeout=timeout, retries=2, backoff=0.1)
    results: list[CheckResult] = []

    def record(name: str, passed: bool, detail: str = "") -> None:
        results.append(CheckResult(name=name, passed=passed, detail=detail))

    # capabilities schema + stability
    try:
        caps = backend.capabilities()
        again = HttpBackend(base_url, timeout=timeout).capabilities()
        record("capabilities_schema", True, f"kind={caps.kind.value}")
        record("capabilities_stable", caps == again, "two reads agree" if caps == again else f"{caps} != {again}")
    except (BackendError, ProtocolError) as exc:
        record("capabilities_schema", False, str(exc))
        return results

    if caps.kind in (BackendKind.MASKED, BackendKind.SEQ2SEQ):
        prompt_text = probe_prompt or _masked_probe(caps.mask_marker)
        prompt = _prompt(prompt_text, caps.mask_marker)
        try:
            predictions = backend.predict(prompt, frozenset(), min(5, caps.max_n_best))
            if not predictions:
                record("predict_shape", False, f"probe prompt yielded no predictions: {prompt_text!r}")
            else:
                sorted_ok = all(
                    predictions[i].score >= predictions[i + 1].score for i in range(len(predictions) - 1)
                )
                ranks_ok = [p.rank for p in predictions] == list(range(1, len(predictions) + 1))
                record(
                    "predict_shape",
                    sorted_ok and ranks_ok and len(predictions) <= min(5, caps.max_n_best),
                    f"{len(predictions)} predictions, top={predictions[0].text!r}",
                )
                top = predictions[0].text
                after_ban = backend.predict(prompt, frozenset({top}), min(5, caps.max_n_best))
                violation = [p.text for p in after_ban if normalize_entity(p.text) == normalize_entity(top)]
                record(
                    "banning_soundness",
                    not violation,
                    f"banned {top!r}" + (f", still returned {violation}" if violation else ""),
                )
        except (BackendError, ProtocolError) as exc:
            record("predict_shape", False, str(exc))

    if caps.kind is BackendKind.AUTOREGRESSIVE or probe_prefix is not None:
        prefix = probe_prefix or "The capital of France is"
        try:
            scored = backend.score_candidates(_prefix_prompt(prefix), list(probe_candidates))
            aligned = len(scored) == len(probe_candidates) and all(
                isinstance(s, float) for _, s in scored
            )
            record("score_alignment", aligned, f"{len(scored)} scores for {len(probe_candidates)} candidates")
            again_scores = backend.score_candidates(_prefix_prompt(prefix), list(probe_candidates))
            record("score_determinism", scored == again_scores, "two calls agree" if scored == again_scores else "scores changed between calls")
        except (BackendError, ProtocolError) as exc:
            record("score_alignment", False, str(exc))

    try:
        first = backend.token_count(probe_text)
        second = backend.token_count(probe_text)
        record(
            "token_count_determinism",
            first == second and first >= 1,
            f"token_count({probe_text!r}) = {first}",
        )
    except (BackendError, ProtocolError) as exc:
        record("token_count_determinism", False, str(exc))

    # malformed request: the server must answer with a structured error and
    # keep serving afterwards
    try:
        response = requests.post(f"{base_url.rstrip('/')}/v1/predict", data=b"{not json", timeout=timeout)
        body_ok = False
        try:
            body = response.json()
            error = body.get("error", {})
            body_ok = isinstance(error.get("code"), str) and isinstance(error.get("message"), str)
        except ValueError:
            body_ok = False
        still_up = HttpBackend(base_url, timeout=timeout).capabilities() == caps
        record(
            "malformed_request",
            400 <= response.status_code < 500 and body_ok and still_up,
            f"HTTP {response.status_code}, server " + ("still up" if still_up else "down"),
        )
    except requests.RequestException as exc:
        record("malformed_request", False, str(exc))

    return results


def all_passed(results: list[CheckResult]) -> bool:
    return all(r.passed for r in results)


def format_results(results: list[CheckResult]) -> str:
    lines = []
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        suffix = f" ({result.detail})" if result.detail else ""
        lines.append(f"[{status}] {result.name}{suffix}")
    return "\n".join(lines)
