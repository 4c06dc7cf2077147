from __future__ import annotations

import signal
import socket
import subprocess
import sys

import pytest
import requests

from cohereval_adapter.server import AdapterServer
from cohereval_adapter.services import CausalService, MaskedService


@pytest.fixture(scope="session")
def masked_server(tiny_bert):
    model, tokenizer = tiny_bert
    with AdapterServer(MaskedService(model, tokenizer)) as server:
        yield server


@pytest.fixture(scope="session")
def causal_server(tiny_gpt2):
    model, tokenizer = tiny_gpt2
    with AdapterServer(CausalService(model, tokenizer)) as server:
        yield server


class TestWireEndpoints:
    def test_capabilities(self, masked_server):
        payload = requests.get(f"{masked_server.url}/v1/capabilities", timeout=10).json()
        assert payload["kind"] == "masked"
        assert payload["mask_marker"] == "[MASK]"

    def test_predict(self, masked_server):
        response = requests.post(
            f"{masked_server.url}/v1/predict",
            json={"prompt": "The capital of France is [MASK].", "mask_marker": "[MASK]", "n_best": 3, "banned": []},
            timeout=30,
        )
        items = response.json()["predictions"]
        assert 1 <= len(items) <= 3
        scores = [i["score"] for i in items]
        assert scores == sorted(scores, reverse=True)

    def test_score(self, causal_server):
        response = requests.post(
            f"{causal_server.url}/v1/score",
            json={"prompt_prefix": "The capital of France is", "candidates": ["Paris", "Berlin"]},
            timeout=30,
        )
        assert len(response.json()["scores"]) == 2

    def test_token_count(self, causal_server):
        response = requests.post(f"{causal_server.url}/v1/token_count", json={"text": "New York"}, timeout=10)
        assert response.json()["count"] >= 1

    def test_unsupported_endpoint_for_kind(self, masked_server):
        response = requests.post(
            f"{masked_server.url}/v1/score",
            json={"prompt_prefix": "The capital is", "candidates": ["Paris"]},
            timeout=10,
        )
        assert response.status_code == 400
        assert response.json()["error"]["code"] == "unsupported"

    def test_malformed_body(self, masked_server):
        response = requests.post(f"{masked_server.url}/v1/predict", data=b"{oops", timeout=10)
        assert response.status_code == 400
        assert response.json()["error"]["code"] == "bad_request"
        assert requests.get(f"{masked_server.url}/v1/capabilities", timeout=10).ok

    def test_unknown_endpoint(self, masked_server):
        response = requests.get(f"{masked_server.url}/v1/whatever", timeout=10)
        assert response.status_code == 404


class TestCliServer:
    def test_serves_a_saved_checkpoint_until_interrupted(self, tiny_bert, tmp_path):
        model, tokenizer = tiny_bert
        checkpoint = tmp_path / "tiny-masked"
        model.save_pretrained(checkpoint)
        tokenizer.save_pretrained(checkpoint)
        with socket.socket() as probe:
            probe.bind(("127.0.0.1", 0))
            port = probe.getsockname()[1]
        process = subprocess.Popen(
            [
                sys.executable,
                "-m",
                "cohereval_adapter.cli",
                "--model", str(checkpoint),
                "--kind", "masked",
                "--port", str(port),
            ],
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
        )
        try:
            line = ""
            for _ in range(20):  # progress logging may precede the banner
                line = process.stdout.readline()
                if "serving" in line or not line:
                    break
            assert "serving" in line, line
            caps = requests.get(f"http://127.0.0.1:{port}/v1/capabilities", timeout=10).json()
            assert caps["kind"] == "masked"
        finally:
            process.send_signal(signal.SIGINT)
            assert process.wait(timeout=30) == 0

    def test_unloadable_model_exits_with_error(self, tmp_path):
        result = subprocess.run(
            [
                sys.executable,
                "-m",
                "cohereval_adapter.cli",
                "--model", str(tmp_path / "missing"),
                "--kind", "masked",
            ],
            capture_output=True,
            text=True,
            timeout=120,
        )
        assert result.returncode == 2
        assert "cannot load model" in result.stderr
