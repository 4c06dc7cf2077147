"""Serve a pretrained checkpoint over the wire protocol.

    cohereval-adapter --model bert-base-uncased --kind masked --port 8600
    cohereval-adapter --model t5-base --kind seq2seq --beam-width 10
    cohereval-adapter --model gpt2 --kind autoregressive
"""
from __future__ import annotations

import argparse
import signal
import sys
import threading

from .server import AdapterServer
from .services import CausalService, MaskedService, ModelService, Seq2SeqService


def load_service(model_id: str, kind: str, device: str = "cpu", beam_width: int = 10) -> ModelService:
    from transformers import (
        AutoModelForCausalLM,
        AutoModelForMaskedLM,
        AutoModelForSeq2SeqLM,
        AutoTokenizer,
    )

    tokenizer = AutoTokenizer.from_pretrained(model_id)
    if kind == "masked":
        return MaskedService(AutoModelForMaskedLM.from_pretrained(model_id), tokenizer, device=device)
    if kind == "seq2seq":
        return Seq2SeqService(
            AutoModelForSeq2SeqLM.from_pretrained(model_id), tokenizer, device=device, beam_width=beam_width
        )
    if kind == "autoregressive":
        return CausalService(AutoModelForCausalLM.from_pretrained(model_id), tokenizer, device=device)
    raise ValueError(f"unknown model kind {kind!r}")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="cohereval-adapter", description=__doc__)
    parser.add_argument("--model", required=True, help="model identifier or local checkpoint directory")
    parser.add_argument("--kind", required=True, choices=("masked", "seq2seq", "autoregressive"))
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--beam-width", dest="beam_width", type=int, default=10)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8600)
    args = parser.parse_args(argv)

    try:
        service = load_service(args.model, args.kind, device=args.device, beam_width=args.beam_width)
    except Exception as exc:
        print(f"error: cannot load model {args.model!r}: {exc}", file=sys.stderr)
        return 2
    try:
        server = AdapterServer(service, host=args.host, port=args.port)
    except OSError as exc:
        print(f"error: cannot bind {args.host}:{args.port}: {exc}", file=sys.stderr)
        return 3
    server.start()
    # installed after model loading so no library import can have swapped the
    # disposition back underneath us
    stop = threading.Event()
    signal.signal(signal.SIGINT, lambda signum, frame: stop.set())
    signal.signal(signal.SIGTERM, lambda signum, frame: stop.set())
    print(f"serving {args.model} ({args.kind}) on {server.url}", flush=True)
    try:
        while not stop.is_set():
            stop.wait(0.5)
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
    return 0


if __name__ == "__main__":
    sys.exit(main())
