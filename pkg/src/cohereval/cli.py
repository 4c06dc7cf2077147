"""Command-line interface binding corpus, backends, engine, and reporting.

Commands: evaluate, sweep, gen-synthetic, serve, render, conformance.
Every flag has a config-file equivalent (JSON, same key names); a flag
overrides the file, and the effective configuration is embedded in the
artifact fingerprint. All outputs go under the --out directory; artifacts
are written atomically so interrupted runs never leave partial files.
"""
from __future__ import annotations

import argparse
import json
import os
import signal
import sys
import threading
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .backends.http_client import HttpBackend
from .backends.server import ReferenceServer, ServerError
from .backends.synthetic import (
    SyntheticBackend,
    SyntheticError,
    SyntheticKB,
    SyntheticKBConfig,
    generate_synthetic,
)
from .backends.base import BackendError
from .conformance import all_passed, format_results, run_conformance
from .corpus import Corpus, CorpusError, EntityFilter, apply_entity_filter, build_answer_index, load_corpus, save_corpus
from .engine import (
    EmptyRunError,
    EngineError,
    EvalOptions,
    evaluate_corpus,
    format_percent,
    paraphrase_sweep,
)
from .prompting import MANUAL, OPTIMIZED, AUTOREGRESSIVE, Placement, PromptError, PromptMode
from .reporting import (
    ReportError,
    RunArtifact,
    emit_tables,
    load_artifact,
    relation_series_csv,
    run_id,
    save_artifact,
)
from .types import CoherevalError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_EMPTY = 4

BACKEND_URL_ENV = "COHERENCY_BACKEND_URL"

_FORMAT_EXT = {"json": "json", "csv": "csv", "markdown": "md"}


class ConfigError(CoherevalError):
    pass


@dataclass
class RunConfig:
    """Effective run configuration; also the artifact fingerprint."""

    backend: str = ""
    triples: str | None = None
    relations: str | None = None
    mode: str = "manual"
    n_best: int = 10
    runs: int = 10
    seed: int = 0
    exclusion: str = "on"
    exclusion_keying: str = "pivot"
    evidence_placement: str = "after"
    candidate_scope: str = "relation"
    parallelism: int = 1
    entity_filter: str | None = None
    out: str = "out"
    formats: str = "json,markdown"
    label: str | None = None
    audit: str = "on"

    def fingerprint(self) -> dict:
        return asdict(self)

    def eval_options(self) -> EvalOptions:
        try:
            return EvalOptions(
                n_best=self.n_best,
                exclusion_enabled=self.exclusion == "on",
                exclusion_keying=self.exclusion_keying,
                evidence=self.mode == "evidence",
                evidence_placement=Placement(self.evidence_placement),
                candidate_scope=self.candidate_scope,
                parallelism=self.parallelism,
            )
        except (ValueError, EngineError) as exc:
            raise ConfigError(str(exc)) from exc

    def prompt_mode(self) -> PromptMode:
        if self.mode in ("manual", "evidence"):
            return MANUAL
        if self.mode == "optimized":
            return OPTIMIZED
        if self.mode == "autoregressive":
            return AUTOREGRESSIVE
        raise ConfigError(f"unknown mode {self.mode!r}")


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if getattr(args, "config", None):
        try:
            payload = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from exc
        if not isinstance(payload, dict):
            raise ConfigError(f"config file {args.config} must hold a JSON object")
        known = {f.name for f in fields(RunConfig)}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update(payload)
    for f in fields(RunConfig):
        flag_value = getattr(args, f.name, None)
        if flag_value is not None:
            values[f.name] = flag_value
    if not values.get("backend"):
        values["backend"] = os.environ.get(BACKEND_URL_ENV, "")
    if not values.get("backend"):
        raise ConfigError(f"no backend given (flag --backend, config key, or ${BACKEND_URL_ENV})")
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _make_backend(spec: str):
    """Return (backend, default corpus or None) for a backend specifier."""
    if spec.startswith("synthetic:"):
        path = spec[len("synthetic:"):]
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read synthetic backend file {path}: {exc}") from exc
        if isinstance(payload, dict) and payload.get("format") == "cohereval-synthetic-kb":
            kb = SyntheticKB.from_json_dict(payload)
        else:
            kb, _ = generate_synthetic(SyntheticKBConfig.from_json_dict(payload))
        return SyntheticBackend(kb), kb.to_corpus()
    if spec.startswith("http://") or spec.startswith("https://"):
        return HttpBackend(spec), None
    raise ConfigError(f"backend specifier must be a URL or synthetic:<path>, got {spec!r}")


def _load_dataset(config: RunConfig, default_corpus: Corpus | None) -> Corpus:
    if config.triples and config.relations:
        corpus = load_corpus(config.triples, config.relations)
    elif default_corpus is not None:
        corpus = default_corpus
    else:
        raise ConfigError("HTTP backends need --triples and --relations")
    if config.entity_filter:
        corpus = apply_entity_filter(corpus, EntityFilter.from_file(config.entity_filter))
    return corpus


def _write_outputs(artifact: RunArtifact, config: RunConfig) -> Path:
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rid = run_id(artifact)
    artifact_path = save_artifact(artifact, out_dir / f"{rid}.artifact.json")
    formats = [f.strip() for f in config.formats.split(",") if f.strip()]
    for fmt in formats:
        if fmt not in _FORMAT_EXT:
            raise ConfigError(f"unknown output format {fmt!r}; expected {sorted(_FORMAT_EXT)}")
        for name, rendered in emit_tables(artifact, fmt).items():
            (out_dir / f"{rid}.{name}.{_FORMAT_EXT[fmt]}").write_text(rendered, encoding="utf-8")
    if artifact.kind == "sweep":
        (out_dir / f"{rid}.relation_series.csv").write_text(relation_series_csv(artifact), encoding="utf-8")
    return artifact_path


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    if config.mode not in ("manual", "optimized", "evidence", "autoregressive"):
        raise ConfigError(f"evaluate supports manual/optimized/evidence/autoregressive, not {config.mode!r}")
    backend, default_corpus = _make_backend(config.backend)
    corpus = _load_dataset(config, default_corpus)
    run = evaluate_corpus(
        backend,
        corpus,
        build_answer_index(corpus),
        config.prompt_mode(),
        config.eval_options(),
    )
    artifact = RunArtifact(
        kind="coherency",
        fingerprint=config.fingerprint(),
        report=run.report,
        audit=run.results if config.audit == "on" else None,
    )
    path = _write_outputs(artifact, config)
    report = run.report
    print(
        f"run {run_id(artifact)}: round1 {format_percent(report.macro_round1)}"
        f" round2 {format_percent(report.macro_round2)} avg {format_percent(report.macro_avg)}"
        f" over {report.total_instances} instances"
        f" ({len(report.relation_scores)} relations, {report.skipped_instances} skipped)"
    )
    print(f"artifact: {path}")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    config.mode = "paraphrase-sweep"
    if config.runs < 1:
        raise ConfigError("sweep needs --runs >= 1")
    backend, default_corpus = _make_backend(config.backend)
    corpus = _load_dataset(config, default_corpus)
    sweep = paraphrase_sweep(
        backend,
        corpus,
        build_answer_index(corpus),
        runs=config.runs,
        seed=config.seed,
        options=config.eval_options(),
    )
    artifact = RunArtifact(
        kind="sweep",
        fingerprint=config.fingerprint(),
        report=sweep.report,
        audit=sweep.results_per_run if config.audit == "on" else None,
    )
    path = _write_outputs(artifact, config)
    report = sweep.report
    print(
        f"run {run_id(artifact)}: min {format_percent(report.macro_min)}"
        f" avg {format_percent(report.macro_avg)} max {format_percent(report.macro_max)}"
        f" over {report.runs} runs, {report.total_instances} instances"
    )
    print(f"artifact: {path}")
    return EXIT_OK


def cmd_gen_synthetic(args: argparse.Namespace) -> int:
    try:
        payload = json.loads(Path(args.config_path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read synthetic config {args.config_path}: {exc}") from exc
    kb, corpus = generate_synthetic(SyntheticKBConfig.from_json_dict(payload))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_corpus(corpus, out_dir / "triples.jsonl", out_dir / "relations.jsonl")
    kb.save(out_dir / "kb.json")
    print(
        f"generated {corpus.instance_count} triples over {len(corpus.groups)} relations"
        f" (behavior {kb.behavior.kind}) into {out_dir}"
    )
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    kb = SyntheticKB.load(args.kb_path)
    server = ReferenceServer(SyntheticBackend(kb), host=args.host, port=args.port)
    server.start()
    stop = threading.Event()
    signal.signal(signal.SIGINT, lambda signum, frame: stop.set())
    signal.signal(signal.SIGTERM, lambda signum, frame: stop.set())
    print(f"serving {args.kb_path} on {server.url}", flush=True)
    try:
        while not stop.is_set():
            stop.wait(0.5)
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
    return EXIT_OK


def cmd_render(args: argparse.Namespace) -> int:
    artifact = load_artifact(args.artifact_path)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rid = run_id(artifact)
    formats = [f.strip() for f in args.formats.split(",") if f.strip()]
    for fmt in formats:
        if fmt not in _FORMAT_EXT:
            raise ConfigError(f"unknown output format {fmt!r}; expected {sorted(_FORMAT_EXT)}")
        for name, rendered in emit_tables(artifact, fmt).items():
            path = out_dir / f"{rid}.{name}.{_FORMAT_EXT[fmt]}"
            path.write_text(rendered, encoding="utf-8")
            print(f"wrote {path}")
    if artifact.kind == "sweep":
        path = out_dir / f"{rid}.relation_series.csv"
        path.write_text(relation_series_csv(artifact), encoding="utf-8")
        print(f"wrote {path}")
    return EXIT_OK


def cmd_conformance(args: argparse.Namespace) -> int:
    candidates = tuple(c.strip() for c in args.candidates.split(",")) if args.candidates else None
    results = run_conformance(
        args.url,
        probe_prompt=args.prompt,
        probe_prefix=args.prefix,
        probe_candidates=candidates or ("Paris", "Berlin", "London"),
    )
    print(format_results(results))
    return EXIT_OK if all_passed(results) else 1


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override its keys")
    parser.add_argument("--backend", help=f"backend URL or synthetic:<path> (falls back to ${BACKEND_URL_ENV})")
    parser.add_argument("--triples", help="triples JSONL file or per-relation directory")
    parser.add_argument("--relations", help="relations JSONL file")
    parser.add_argument("--n-best", dest="n_best", type=int, help="n-best size requested per query (default 10)")
    parser.add_argument("--seed", type=int, help="random seed (default 0)")
    parser.add_argument("--exclusion", choices=("on", "off"), help="ban other known-correct answers (default on)")
    parser.add_argument(
        "--exclusion-keying",
        dest="exclusion_keying",
        choices=("pivot", "gold"),
        help="key ban lookups by the predicted pivot or the gold entity (default pivot)",
    )
    parser.add_argument(
        "--evidence-placement",
        dest="evidence_placement",
        choices=("before", "after"),
        help="where evidence paragraphs are joined (default after)",
    )
    parser.add_argument(
        "--candidate-scope",
        dest="candidate_scope",
        choices=("relation", "corpus"),
        help="candidate set for entity-last scoring (default relation)",
    )
    parser.add_argument("--parallelism", type=int, help="bounded in-flight instance evaluations (default 1)")
    parser.add_argument("--entity-filter", dest="entity_filter", help="entity filter JSONL to apply to the corpus")
    parser.add_argument("--out", help="output directory (default ./out)")
    parser.add_argument("--formats", help="comma-separated table formats: json,csv,markdown")
    parser.add_argument("--label", help="row label used in rendered tables")
    parser.add_argument("--audit", choices=("on", "off"), help="retain the per-instance audit trail (default on)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cohereval", description="Two-round factual coherency harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p_eval = sub.add_parser("evaluate", help="run a coherency evaluation")
    _add_run_flags(p_eval)
    p_eval.add_argument("--mode", choices=("manual", "optimized", "evidence", "autoregressive"))
    p_eval.set_defaults(func=cmd_evaluate)

    p_sweep = sub.add_parser("sweep", help="paraphrase sweep over sampled templates")
    _add_run_flags(p_sweep)
    p_sweep.add_argument("--runs", type=int, help="number of sampled template assignments (default 10)")
    p_sweep.set_defaults(func=cmd_sweep)

    p_gen = sub.add_parser("gen-synthetic", help="generate a synthetic corpus and knowledge base")
    p_gen.add_argument("config_path", help="synthetic generator config (JSON)")
    p_gen.add_argument("--out", default="out", help="output directory")
    p_gen.set_defaults(func=cmd_gen_synthetic)

    p_serve = sub.add_parser("serve", help="serve a knowledge base over the wire protocol")
    p_serve.add_argument("kb_path", help="knowledge base JSON file")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8541)
    p_serve.set_defaults(func=cmd_serve)

    p_render = sub.add_parser("render", help="re-render tables from a stored artifact")
    p_render.add_argument("artifact_path")
    p_render.add_argument("--formats", default="markdown")
    p_render.add_argument("--out", default="out")
    p_render.set_defaults(func=cmd_render)

    p_conf = sub.add_parser("conformance", help="check a server against the wire protocol contract")
    p_conf.add_argument("url")
    p_conf.add_argument("--prompt", help="probe prompt containing the server's mask marker")
    p_conf.add_argument("--prefix", help="probe prompt prefix for entity-last scoring")
    p_conf.add_argument("--candidates", help="comma-separated score candidates")
    p_conf.set_defaults(func=cmd_conformance)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (EmptyRunError, ReportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except (BackendError, ServerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (ConfigError, CorpusError, SyntheticError, PromptError, EngineError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CoherevalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
