"""Operator entry point: ingest corpora, serve the API, run benchmarks,
chat in a terminal, host mock agents, and mint API keys.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
Primary output goes to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import ServiceConfig, build_engine, load_config
from .errors import ConfigError, FieldragError

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

_DOC_SUFFIXES = {".md": "markdown", ".markdown": "markdown", ".txt": "plain"}


def _err(message: str) -> None:
    print(message, file=sys.stderr)


def _resolve_config(args) -> ServiceConfig:
    path = args.config or os.environ.get("FIELDRAG_CONFIG")
    overrides = {
        name: getattr(args, name, None)
        for name in ("data_dir", "host", "port", "keys_file")
    }
    return load_config(path, overrides=overrides)


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="TOML or JSON config file")
    parser.add_argument("--data-dir", dest="data_dir")
    parser.add_argument("--keys-file", dest="keys_file")


# -- ingest ---------------------------------------------------------------------


def _sidecar_metadata(path: Path) -> dict:
    sidecar = path.with_name(path.name + ".meta.json")
    if not sidecar.exists():
        return {}
    meta = json.loads(sidecar.read_text(encoding="utf-8"))
    if not isinstance(meta, dict):
        raise ValueError(f"sidecar {sidecar} must hold a JSON object")
    return meta


def _collect_inputs(input_path: Path) -> list[Path]:
    if input_path.is_file():
        return [input_path]
    if input_path.is_dir():
        return sorted(
            p for p in input_path.rglob("*")
            if p.is_file() and p.suffix.lower() in _DOC_SUFFIXES
        )
    raise FileNotFoundError(f"input path not readable: {input_path}")


def cmd_ingest(args) -> int:
    config = _resolve_config(args)
    if args.strategy or args.max_chars:
        section = dict(config.chunker)
        if args.strategy:
            section["strategy"] = args.strategy
        if args.max_chars:
            section["max_chars"] = args.max_chars
        config.chunker = section
    engine = build_engine(config)
    engine.load_state()

    try:
        files = _collect_inputs(Path(args.input))
    except FileNotFoundError as exc:
        _err(str(exc))
        return EXIT_RUNTIME
    if not files:
        _err(f"no ingestable documents under {args.input}")
        return EXIT_RUNTIME

    failures = 0
    for path in files:
        try:
            raw = path.read_bytes()
            meta = _sidecar_metadata(path)
            result = engine.ingest_document(
                raw,
                title=str(meta.get("title", path.stem)),
                author=str(meta.get("author", "")),
                doc_type=str(meta.get("doc_type", "")),
                version=str(meta.get("version", "1")),
                format=str(meta.get("format", _DOC_SUFFIXES[path.suffix.lower()])),
                page_count=int(meta.get("page_count", 0)),
                summary=meta.get("summary"),
                keywords=tuple(meta.get("keywords", ())),
            )
        except (FieldragError, OSError, ValueError, KeyError) as exc:
            failures += 1
            _err(f"error: {path}: {exc}")
            continue
        print(
            json.dumps(
                {
                    "doc_id": result.doc_id,
                    "chunks": result.chunk_count,
                    "tool_id": result.tool_id,
                }
            )
        )
    engine.save_state()
    return EXIT_RUNTIME if failures else EXIT_OK


# -- serve ----------------------------------------------------------------------


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    config = _resolve_config(args)
    if not Path(config.keys_file).exists():
        raise ConfigError(
            f"keys file not found: {config.keys_file} (run `fieldrag keygen` first)"
        )
    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
    return EXIT_OK


# -- bench ----------------------------------------------------------------------


def default_variants(axis: str, config: ServiceConfig) -> list:
    """Built-in sweep points per axis; the rest of the pipeline stays fixed."""
    from .embedding import TEST_PROVIDER_ID, EmbeddingProviderSpec
    from .evaluation import BenchVariant
    from .index import IndexBackendSpec
    from .ingest import ChunkerConfig

    if axis == "chunking":
        return [
            BenchVariant(
                "Semantic Context",
                chunker=ChunkerConfig(strategy="semantic", max_chars=1024),
            ),
            BenchVariant(
                "Fixed length=1024",
                chunker=ChunkerConfig(strategy="fixed", max_chars=1024),
            ),
            BenchVariant(
                "Fixed length=2048",
                chunker=ChunkerConfig(strategy="fixed", max_chars=2048),
            ),
        ]
    if axis == "embedding":
        return [
            BenchVariant(
                f"Hash n-gram d={dim}",
                embedding=EmbeddingProviderSpec(
                    provider_id=TEST_PROVIDER_ID, dim=dim
                ),
            )
            for dim in (128, 256, 512)
        ]
    if axis == "vector_store":
        dim = config.embedding_spec().dim
        return [
            BenchVariant("Exact scan", index=IndexBackendSpec(kind="exact", dim=dim)),
            BenchVariant(
                "HNSW ef=64",
                index=IndexBackendSpec(kind="hnsw", dim=dim, ef_search=64),
            ),
            BenchVariant(
                "HNSW ef=256",
                index=IndexBackendSpec(kind="hnsw", dim=dim, ef_search=256),
            ),
        ]
    raise ConfigError(f"unknown sweep axis: {axis!r}")


def _load_corpus(corpus_path: Path) -> list:
    from .ingest import derive_doc_id, parse_document

    docs = []
    for path in _collect_inputs(corpus_path):
        meta = _sidecar_metadata(path)
        title = str(meta.get("title", path.stem))
        version = str(meta.get("version", "1"))
        docs.append(
            parse_document(
                path.read_bytes(),
                format=str(meta.get("format", _DOC_SUFFIXES[path.suffix.lower()])),
                title=title,
                author=str(meta.get("author", "")),
                doc_type=str(meta.get("doc_type", "")),
                version=version,
                doc_id=derive_doc_id(title, version),
            )
        )
    return docs


def cmd_bench(args) -> int:
    from .evaluation import BenchConfig, load_qa_file, run_bench

    config = _resolve_config(args)
    try:
        qa_items = load_qa_file(args.qa)
    except (OSError, ValueError, KeyError) as exc:
        _err(f"bad QA file {args.qa}: {exc}")
        return EXIT_USAGE
    if not qa_items:
        _err("no QA items")
        return EXIT_USAGE
    try:
        corpus = _load_corpus(Path(args.corpus))
    except (FileNotFoundError, FieldragError, ValueError) as exc:
        _err(str(exc))
        return EXIT_RUNTIME
    if not corpus:
        _err(f"no corpus documents under {args.corpus}")
        return EXIT_RUNTIME

    fixed = BenchConfig(
        chunker=config.chunker_config(),
        embedding=config.embedding_spec(),
        index=config.index_spec(),
        top_k=config.top_k,
    )
    report = run_bench(
        corpus,
        qa_items,
        sweep_axis=args.sweep,
        variants=default_variants(args.sweep, config),
        fixed=fixed,
    )

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out_dir / "report.md").write_text(report.to_markdown(), encoding="utf-8")
    print(report.to_markdown(), end="")

    if report.failed:
        for row in report.failed:
            _err(f"variant failed: {row.label}: {row.error}")
        return EXIT_RUNTIME
    return EXIT_OK


# -- chat -----------------------------------------------------------------------


def _print_answer(turn, engine, out) -> None:
    print(turn.text, file=out)
    print("Sources:", file=out)
    if not turn.citations:
        print("  (none)", file=out)
    for doc_id, chunk_id in turn.citations:
        entry = engine.get_document(doc_id) or {}
        title = entry.get("title", "")
        print(f"  {doc_id}:{chunk_id} ({title})", file=out)


def chat_loop(engine, session_id: str, in_stream, out_stream) -> int:
    """Line-oriented REPL; EOF or 'exit' ends the session."""
    while True:
        print("you> ", end="", file=out_stream, flush=True)
        line = in_stream.readline()
        if not line:
            print("", file=out_stream)
            return EXIT_OK
        text = line.strip()
        if not text:
            continue
        if text in ("exit", "quit"):
            return EXIT_OK
        try:
            turn = engine.answer(session_id, text)
        except FieldragError as exc:
            _err(f"error: {exc}")
            continue
        _print_answer(turn, engine, out_stream)


def cmd_chat(args) -> int:
    config = _resolve_config(args)
    engine = build_engine(config)
    if not engine.load_state():
        _err(f"note: no saved index under {config.data_dir}; starting empty")

    if args.session:
        try:
            session_id = engine.get_session(args.session).session_id
        except FieldragError as exc:
            _err(str(exc))
            return EXIT_RUNTIME
    else:
        session_id = engine.create_session().session_id

    if args.query:
        try:
            turn = engine.answer(session_id, args.query)
        except FieldragError as exc:
            _err(str(exc))
            return EXIT_RUNTIME
        _print_answer(turn, engine, sys.stdout)
        return EXIT_OK
    return chat_loop(engine, session_id, sys.stdin, sys.stdout)


# -- mock-agents ------------------------------------------------------------------


def cmd_mock_agents(args) -> int:
    from .mock_agents import MockAgentServer, load_fixtures

    fixtures = load_fixtures(args.fixtures) if args.fixtures else None
    server = MockAgentServer(fixtures=fixtures, port=args.port)
    print(f"mock agents listening on {server.endpoint}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return EXIT_OK


# -- keygen ---------------------------------------------------------------------


def cmd_keygen(args) -> int:
    from .service import generate_key

    config = _resolve_config(args)
    raw = generate_key(config.keys_file, args.label)
    print(raw)
    _err(f"recorded hash for label {args.label!r} in {config.keys_file}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fieldrag",
        description="Document-grounded chat engine for industrial field support",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="parse, chunk, embed and index documents")
    _add_common_flags(p_ingest)
    p_ingest.add_argument("--input", required=True, help="document file or directory")
    p_ingest.add_argument("--strategy", choices=["semantic", "fixed"])
    p_ingest.add_argument("--max-chars", dest="max_chars", type=int)
    p_ingest.set_defaults(func=cmd_ingest)

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    _add_common_flags(p_serve)
    p_serve.add_argument("--host")
    p_serve.add_argument("--port", type=int)
    p_serve.set_defaults(func=cmd_serve)

    p_bench = sub.add_parser("bench", help="sweep one axis and rank the variants")
    _add_common_flags(p_bench)
    p_bench.add_argument("--qa", required=True, help="QA set JSON file")
    p_bench.add_argument("--corpus", required=True, help="corpus file or directory")
    p_bench.add_argument(
        "--sweep",
        required=True,
        choices=["chunking", "embedding", "vector_store"],
    )
    p_bench.add_argument("--out", required=True, help="report output directory")
    p_bench.set_defaults(func=cmd_bench)

    p_chat = sub.add_parser("chat", help="interactive terminal chat")
    _add_common_flags(p_chat)
    p_chat.add_argument("--session", help="resume an existing session id")
    p_chat.add_argument("query", nargs="?", help="one-shot query (skips the REPL)")
    p_chat.set_defaults(func=cmd_chat)

    p_mock = sub.add_parser("mock-agents", help="serve auxiliary agent fixtures")
    p_mock.add_argument("--fixtures", help="fixture JSON file or directory")
    p_mock.add_argument("--port", type=int, default=0)
    p_mock.set_defaults(func=cmd_mock_agents)

    p_keygen = sub.add_parser("keygen", help="mint an API key")
    _add_common_flags(p_keygen)
    p_keygen.add_argument("--label", required=True)
    p_keygen.set_defaults(func=cmd_keygen)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _err(f"config error: {exc}")
        return EXIT_USAGE
    except FieldragError as exc:
        _err(f"error: {exc}")
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
