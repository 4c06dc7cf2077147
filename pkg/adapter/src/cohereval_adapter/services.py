"""Model services backing the wire protocol endpoints.

One service per model family:

- ``MaskedService``: fill-in-the-blank models. Serves /v1/predict with
  token-level banning before the argmax; declares single-token answers only
  and rejects prompts whose mask does not resolve to exactly one position.
- ``Seq2SeqService``: infilling encoder-decoders. Serves /v1/predict via
  beam search; the answer is the decoded span for the first sentinel only.
  Banned entities are filtered by the caller from the returned n-best.
- ``CausalService``: left-to-right models. Serves /v1/score with mean
  per-token log-probabilities of each candidate continuation.

Scores are log-probabilities throughout: monotone for argmax and comparable
within a single call.
"""
from __future__ import annotations

import re
from collections.abc import Sequence

import torch
import torch.nn.functional as F


class AdapterError(Exception):
    """Request the service cannot honor (maps to a bad_request error body)."""


class UnsupportedOperation(AdapterError):
    """Endpoint not offered by this model kind."""


class ModelService:
    """Common surface the HTTP layer calls into."""

    kind = "unset"

    def capabilities(self) -> dict:
        raise NotImplementedError

    def predict(self, prompt: str, mask_marker: str, n_best: int, banned: Sequence[str]) -> list[dict]:
        raise UnsupportedOperation(f"{self.kind} models do not serve predict")

    def score(self, prompt_prefix: str, candidates: Sequence[str]) -> list[float]:
        raise UnsupportedOperation(f"{self.kind} models do not serve score")

    def token_count(self, text: str) -> int:
        raise NotImplementedError


def _norm(text: str) -> str:
    return text.strip().lower()


class MaskedService(ModelService):
    kind = "masked"

    def __init__(self, model, tokenizer, device: str = "cpu", max_n_best: int = 50) -> None:
        self.model = model.to(device).eval()
        self.tokenizer = tokenizer
        self.device = device
        self.max_n_best = max_n_best

    def capabilities(self) -> dict:
        return {
            "kind": self.kind,
            "mask_marker": self.tokenizer.mask_token,
            "single_token_only": True,
            "max_n_best": self.max_n_best,
            "supports_banning": True,
        }

    def _banned_token_ids(self, banned: Sequence[str]) -> set[int]:
        ids: set[int] = set()
        for surface in banned:
            encoded = self.tokenizer.encode(surface.strip(), add_special_tokens=False)
            if len(encoded) == 1:
                ids.add(encoded[0])
        return ids

    def predict(self, prompt: str, mask_marker: str, n_best: int, banned: Sequence[str]) -> list[dict]:
        if n_best < 1 or n_best > self.max_n_best:
            raise AdapterError(f"n_best must be within 1..{self.max_n_best}")
        if not mask_marker:
            raise AdapterError("masked models need a mask marker in the prompt")
        text = prompt if mask_marker == self.tokenizer.mask_token else prompt.replace(
            mask_marker, self.tokenizer.mask_token
        )
        encoding = self.tokenizer(text, return_tensors="pt", truncation=True).to(self.device)
        positions = (encoding["input_ids"][0] == self.tokenizer.mask_token_id).nonzero().flatten()
        if positions.numel() != 1:
            raise AdapterError(
                f"prompt must contain exactly one mask position, found {positions.numel()}"
            )
        with torch.no_grad():
            logits = self.model(**encoding).logits[0, positions[0]]
        log_probs = F.log_softmax(logits, dim=-1)
        for token_id in self.tokenizer.all_special_ids:
            log_probs[token_id] = float("-inf")
        for token_id in self._banned_token_ids(banned):
            log_probs[token_id] = float("-inf")
        banned_norm = {_norm(b) for b in banned}
        top = torch.topk(log_probs, k=min(len(log_probs), n_best + len(banned_norm) + 4))
        out: list[dict] = []
        for token_id, score in zip(top.indices.tolist(), top.values.tolist()):
            if score == float("-inf"):
                break
            surface = self.tokenizer.decode([token_id]).strip()
            if not surface or _norm(surface) in banned_norm:
                continue
            out.append({"text": surface, "score": score})
            if len(out) == n_best:
                break
        return out

    def token_count(self, text: str) -> int:
        return len(self.tokenizer.tokenize(text))


class Seq2SeqService(ModelService):
    kind = "seq2seq"

    SENTINEL = "<extra_id_0>"

    def __init__(self, model, tokenizer, device: str = "cpu", beam_width: int = 10, max_answer_tokens: int = 8) -> None:
        self.model = model.to(device).eval()
        self.tokenizer = tokenizer
        self.device = device
        self.beam_width = beam_width
        self.max_answer_tokens = max_answer_tokens
        self._special_split = re.compile(r"<extra_id_\d+>|</s>|<pad>|<unk>")

    def capabilities(self) -> dict:
        return {
            "kind": self.kind,
            "mask_marker": self.SENTINEL,
            "single_token_only": False,
            "max_n_best": self.beam_width,
            # banned answers are dropped from the returned n-best by the caller
            "supports_banning": False,
        }

    def _first_span(self, sequence) -> str:
        decoded = self.tokenizer.decode(sequence, skip_special_tokens=False)
        if self.SENTINEL in decoded:
            after = decoded.split(self.SENTINEL, 1)[1]
            return self._special_split.split(after)[0].strip()
        return self.tokenizer.decode(sequence, skip_special_tokens=True).strip()

    def predict(self, prompt: str, mask_marker: str, n_best: int, banned: Sequence[str]) -> list[dict]:
        if n_best < 1 or n_best > self.beam_width:
            raise AdapterError(f"n_best must be within 1..{self.beam_width}")
        if not mask_marker:
            raise AdapterError("seq2seq infilling needs a mask marker in the prompt")
        text = prompt if mask_marker == self.SENTINEL else prompt.replace(mask_marker, self.SENTINEL)
        if self.SENTINEL not in text:
            raise AdapterError("prompt must contain the mask marker")
        encoding = self.tokenizer(text, return_tensors="pt").to(self.device)
        with torch.no_grad():
            generated = self.model.generate(
                **encoding,
                num_beams=self.beam_width,
                num_return_sequences=min(n_best, self.beam_width),
                max_new_tokens=self.max_answer_tokens,
                output_scores=True,
                return_dict_in_generate=True,
            )
        ranked = sorted(
            zip(generated.sequences, generated.sequences_scores.tolist()),
            key=lambda pair: -pair[1],
        )
        out: list[dict] = []
        seen: set[str] = set()
        for sequence, score in ranked:
            span = self._first_span(sequence)
            if not span or _norm(span) in seen:
                continue
            seen.add(_norm(span))
            out.append({"text": span, "score": score})
        return out[:n_best]

    def token_count(self, text: str) -> int:
        return len(self.tokenizer.tokenize(text))


class CausalService(ModelService):
    kind = "autoregressive"

    def __init__(self, model, tokenizer, device: str = "cpu") -> None:
        self.model = model.to(device).eval()
        self.tokenizer = tokenizer
        self.device = device

    def capabilities(self) -> dict:
        return {
            "kind": self.kind,
            "mask_marker": "",
            "single_token_only": False,
            "max_n_best": 1,
            "supports_banning": False,
        }

    def score(self, prompt_prefix: str, candidates: Sequence[str]) -> list[float]:
        if not candidates:
            raise AdapterError("candidates must be non-empty")
        prefix = prompt_prefix.rstrip()
        if not prefix:
            raise AdapterError("prompt_prefix must be non-empty")
        prefix_length = self.tokenizer(prefix, return_tensors="pt")["input_ids"].shape[1]
        scores: list[float] = []
        for candidate in candidates:
            full = self.tokenizer(f"{prefix} {candidate}", return_tensors="pt").to(self.device)
            continuation = full["input_ids"][0, prefix_length:]
            if continuation.numel() == 0:
                scores.append(-1e30)
                continue
            with torch.no_grad():
                logits = self.model(**full).logits
            log_probs = F.log_softmax(logits[0], dim=-1)
            # token at position i is predicted by the logits at position i-1
            total = 0.0
            for offset, token_id in enumerate(continuation.tolist()):
                total += log_probs[prefix_length + offset - 1, token_id].item()
            scores.append(total / continuation.numel())
        return scores

    def token_count(self, text: str) -> int:
        return len(self.tokenizer.tokenize(text))
