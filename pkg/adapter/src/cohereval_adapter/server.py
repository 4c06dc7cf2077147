"""HTTP layer: the same wire protocol the evaluation harness speaks.

  GET  /v1/capabilities
  POST /v1/predict      {"prompt", "mask_marker", "n_best", "banned"}
  POST /v1/score        {"prompt_prefix", "candidates"}
  POST /v1/token_count  {"text"}

Requests are serialized per model instance with a lock (one accelerator,
one model); connections are still accepted concurrently so health checks
never starve behind a long generation.
"""
from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .services import AdapterError, ModelService, UnsupportedOperation


def _make_handler(service: ModelService, lock: threading.Lock):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            pass

        def _send(self, status: int, payload: dict) -> None:
            body = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _send_error(self, status: int, code: str, message: str) -> None:
            self._send(status, {"error": {"code": code, "message": message}})

        def _read_json(self) -> dict | None:
            length = int(self.headers.get("Content-Length") or 0)
            raw = self.rfile.read(length) if length else b""
            try:
                body = json.loads(raw.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError):
                self._send_error(400, "bad_request", "request body is not valid JSON")
                return None
            if not isinstance(body, dict):
                self._send_error(400, "bad_request", "request body must be a JSON object")
                return None
            return body

        def do_GET(self) -> None:
            if self.path == "/v1/capabilities":
                self._send(200, service.capabilities())
            else:
                self._send_error(404, "not_found", f"unknown endpoint {self.path}")

        def do_POST(self) -> None:
            body = self._read_json()
            if body is None:
                return
            try:
                if self.path == "/v1/predict":
                    self._predict(body)
                elif self.path == "/v1/score":
                    self._score(body)
                elif self.path == "/v1/token_count":
                    self._token_count(body)
                else:
                    self._send_error(404, "not_found", f"unknown endpoint {self.path}")
            except UnsupportedOperation as exc:
                self._send_error(400, "unsupported", str(exc))
            except AdapterError as exc:
                self._send_error(400, "bad_request", str(exc))
            except Exception as exc:
                self._send_error(500, "internal", str(exc))

        def _predict(self, body: dict) -> None:
            prompt = body.get("prompt")
            marker = body.get("mask_marker")
            n_best = body.get("n_best")
            banned = body.get("banned", [])
            if (
                not isinstance(prompt, str)
                or not isinstance(marker, str)
                or not isinstance(n_best, int)
                or not isinstance(banned, list)
                or not all(isinstance(b, str) for b in banned)
            ):
                self._send_error(400, "bad_request", "predict needs prompt, mask_marker, n_best, banned")
                return
            with lock:
                items = service.predict(prompt, marker, n_best, banned)
            self._send(200, {"predictions": items})

        def _score(self, body: dict) -> None:
            prefix = body.get("prompt_prefix")
            candidates = body.get("candidates")
            if (
                not isinstance(prefix, str)
                or not isinstance(candidates, list)
                or not candidates
                or not all(isinstance(c, str) for c in candidates)
            ):
                self._send_error(400, "bad_request", "score needs prompt_prefix and a non-empty candidates list")
                return
            with lock:
                scores = service.score(prefix, candidates)
            self._send(200, {"scores": scores})

        def _token_count(self, body: dict) -> None:
            text = body.get("text")
            if not isinstance(text, str):
                self._send_error(400, "bad_request", "token_count needs a text string")
                return
            with lock:
                count = service.token_count(text)
            self._send(200, {"count": count})

    return Handler


class AdapterServer:
    def __init__(self, service: ModelService, host: str = "127.0.0.1", port: int = 0) -> None:
        self._server = ThreadingHTTPServer((host, port), _make_handler(service, threading.Lock()))
        self._server.daemon_threads = True
        self._thread: threading.Thread | None = None
        self._stopped = False

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "AdapterServer":
        if self._thread is None:
            self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
            self._thread.start()
        return self

    def shutdown(self) -> None:
        if self._stopped:
            return
        self._stopped = True
        self._server.shutdown()
        if self._thread is not None:
            self._thread.join(timeout=10)
        self._server.server_close()

    def __enter__(self) -> "AdapterServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.shutdown()
