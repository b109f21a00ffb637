"""Claim-level retrieval evaluation and the benchmark runner.

Four metrics over extracted claims: claim recall (how much of the
ground truth the retrieved context covers), context precision (how many
retrieved chunks carry at least one ground-truth claim), faithfulness
(how much of the response is grounded in the context), and
hallucination (response claims found in neither context nor ground
truth). The remainder, self_knowledge, completes a three-way partition
of response claims.

Two claim oracles sit behind one contract: a rule-based one (sentence
splitting plus normalized-substring entailment) that keeps every test
hermetic and deterministic, and an LLM-backed one for realistic runs.
Substring entailment cannot credit paraphrases; that is a documented
limitation of the rule-based oracle, not a bug.

The benchmark runner re-ingests the corpus per variant, so rows are
comparable end to end, and its report serializes deterministically:
identical inputs produce byte-identical JSON.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field

from .embedding import (
    DEFAULT_TEST_DIM,
    TEST_PROVIDER_ID,
    EmbeddingProviderSpec,
    embed_batch,
)
from .errors import EmptyGroundTruth, OracleUnavailable, ProviderUnavailable
from .index import IndexBackendSpec, VectorIndex
from .ingest import ChunkerConfig, chunk_document

RULE_ORACLE_ID = "rule-substring-v1"
MIN_CLAIM_TOKENS = 3

DIVISION_CONVENTIONS = {
    "empty_response": "faith=0 hallu=0 self_knowledge=100, flagged",
    "empty_ground_truth": "EmptyGroundTruth raised; item not scorable",
    "empty_retrieval": "cp=0",
}

_SENTENCE_END = re.compile(r"[.!?]+(?:\s+|$)")
_NON_ALNUM = re.compile(r"[^a-z0-9\s]+")
_AXIS_HEADERS = {
    "chunking": "Chunking Strategy",
    "embedding": "Embedding Model",
    "vector_store": "Vector Store",
}


@dataclass(frozen=True)
class QAItem:
    query: str
    ground_truth: str
    source_doc_id: str | None = None

    def __post_init__(self):
        if not self.query.strip() or not self.ground_truth.strip():
            raise ValueError("query and ground_truth must be non-empty")


@dataclass(frozen=True)
class Claim:
    text: str
    origin: str  # ground_truth | response


@dataclass
class EvalScores:
    cr: float
    cp: float
    hallu: float
    faith: float
    self_knowledge: float
    flags: tuple = ()


def normalize_text(text: str) -> str:
    """Lowercase, strip punctuation, collapse whitespace."""
    lowered = _NON_ALNUM.sub(" ", text.lower())
    return " ".join(lowered.split())


def split_sentences(text: str) -> list:
    """Split on . ! ? followed by whitespace or end of text."""
    out = []
    start = 0
    for match in _SENTENCE_END.finditer(text):
        out.append(text[start:match.end()])
        start = match.end()
    if start < len(text):
        out.append(text[start:])
    return [s for s in (seg.strip() for seg in out) if s]


class RuleBasedOracle:
    """Deterministic claim oracle: sentence split + substring entailment."""

    oracle_id = RULE_ORACLE_ID

    def extract(self, text: str) -> list:
        claims = []
        for sentence in split_sentences(text):
            normalized = normalize_text(sentence)
            if len(normalized.split()) >= MIN_CLAIM_TOKENS:
                claims.append(normalized)
        return claims

    def entails(self, context_texts: list, claim_text: str) -> bool:
        if not claim_text:
            return False
        for chunk_text in context_texts:
            if claim_text in normalize_text(chunk_text):
                return True
        return False


class LLMOracle:
    """Claim oracle backed by a completion provider.

    Extraction asks for one claim per line; entailment asks for a
    yes/no verdict, and anything that is not a clear yes counts as no.
    """

    def __init__(self, llm, oracle_id: str = "llm-judge-v1"):
        self.llm = llm
        self.oracle_id = oracle_id

    def extract(self, text: str) -> list:
        prompt = (
            "Decompose the following text into short factual claims, "
            "one per line, no numbering:\n\n" + text
        )
        try:
            reply = self.llm.complete(prompt, temperature=0.0)
        except ProviderUnavailable as exc:
            raise OracleUnavailable(str(exc)) from exc
        claims = []
        for line in reply.splitlines():
            normalized = normalize_text(line)
            if len(normalized.split()) >= MIN_CLAIM_TOKENS:
                claims.append(normalized)
        return claims

    def entails(self, context_texts: list, claim_text: str) -> bool:
        context = "\n".join(context_texts)
        prompt = (
            "Context:\n" + context + "\n\nClaim: " + claim_text +
            "\n\nDoes the context entail the claim? Answer yes or no."
        )
        try:
            reply = self.llm.complete(prompt, temperature=0.0)
        except ProviderUnavailable as exc:
            raise OracleUnavailable(str(exc)) from exc
        return reply.strip().lower().startswith("yes")


def _chunk_texts(chunks) -> list:
    return [c if isinstance(c, str) else c.text for c in chunks]


def extract_claims(text: str, oracle, *, origin: str = "response") -> list:
    if not text or not text.strip():
        return []
    return [Claim(text=t, origin=origin) for t in oracle.extract(text)]


def entails(context_chunks, claim: Claim, oracle) -> bool:
    return oracle.entails(_chunk_texts(context_chunks), claim.text)


def score(qa: QAItem, retrieved, response: str, oracle) -> EvalScores:
    """Score one QA item; see the module docstring for the formulas."""
    context = _chunk_texts(retrieved)
    gt_claims = oracle.extract(qa.ground_truth)
    if not gt_claims:
        raise EmptyGroundTruth(
            f"no claims extracted from ground truth for query {qa.query!r}"
        )
    response_claims = oracle.extract(response or "")

    entailed_gt = [g for g in gt_claims if oracle.entails(context, g)]
    cr = 100.0 * len(entailed_gt) / len(gt_claims)

    if context:
        useful = [
            c for c in context
            if any(oracle.entails([c], g) for g in gt_claims)
        ]
        cp = 100.0 * len(useful) / len(context)
    else:
        cp = 0.0

    flags = []
    if response_claims:
        grounded = [
            r for r in response_claims if oracle.entails(context, r)
        ]
        hallucinated = [
            r for r in response_claims
            if not oracle.entails(context, r)
            and not oracle.entails([qa.ground_truth], r)
        ]
        faith = 100.0 * len(grounded) / len(response_claims)
        hallu = 100.0 * len(hallucinated) / len(response_claims)
        # count the third partition cell directly: 100-faith-hallu drifts
        # below zero in floating point when the other two sum to 100
        known = len(response_claims) - len(grounded) - len(hallucinated)
        self_knowledge = 100.0 * known / len(response_claims)
    else:
        faith = 0.0
        hallu = 0.0
        self_knowledge = 100.0
        flags.append("empty response")
    if not context:
        flags.append("empty retrieval")
    return EvalScores(
        cr=cr, cp=cp, hallu=hallu, faith=faith,
        self_knowledge=self_knowledge, flags=tuple(flags),
    )


# -- benchmark runner ---------------------------------------------------------


@dataclass(frozen=True)
class BenchVariant:
    """One sweep point: overrides applied on top of the fixed config."""

    label: str
    chunker: ChunkerConfig | None = None
    embedding: EmbeddingProviderSpec | None = None
    index: IndexBackendSpec | None = None


@dataclass
class BenchConfig:
    chunker: ChunkerConfig = field(default_factory=ChunkerConfig)
    embedding: EmbeddingProviderSpec = field(
        default_factory=lambda: EmbeddingProviderSpec(
            provider_id=TEST_PROVIDER_ID, dim=DEFAULT_TEST_DIM
        )
    )
    index: IndexBackendSpec = field(
        default_factory=lambda: IndexBackendSpec(dim=DEFAULT_TEST_DIM)
    )
    top_k: int = 5
    generator: object = "extractive"  # or an LLMProvider


def corpus_hash(corpus) -> str:
    parts = [
        f"{doc.doc_id}\n{doc.body}"
        for doc in sorted(corpus, key=lambda d: d.doc_id)
    ]
    return hashlib.sha256("\x00".join(parts).encode("utf-8")).hexdigest()


def _chunker_params(cfg: ChunkerConfig) -> dict:
    return {
        "strategy": cfg.strategy,
        "max_chars": cfg.max_chars,
        "overlap_chars": cfg.overlap_chars,
        "semantic_overflow": cfg.semantic_overflow,
    }


def _index_params(spec: IndexBackendSpec) -> dict:
    return {
        "kind": spec.kind,
        "dim": spec.dim,
        "m": spec.m,
        "ef_construction": spec.ef_construction,
        "ef_search": spec.ef_search,
        "seed": spec.seed,
    }


def _generate(generator, context_texts: list, query: str) -> str:
    if generator == "extractive":
        return "\n".join(context_texts)
    prompt = (
        "Answer the query using only this context.\n\nContext:\n"
        + "\n".join(context_texts)
        + f"\n\nQuery: {query}\n"
    )
    return generator.complete(prompt, temperature=0.0)


def _run_variant(variant, corpus, qa_items, fixed, oracle):
    chunker = variant.chunker or fixed.chunker
    embedding = variant.embedding or fixed.embedding
    index_spec = variant.index or fixed.index
    if index_spec.dim != embedding.dim:
        index_spec = IndexBackendSpec(
            kind=index_spec.kind, dim=embedding.dim, m=index_spec.m,
            ef_construction=index_spec.ef_construction,
            ef_search=index_spec.ef_search, seed=index_spec.seed,
            endpoint=index_spec.endpoint,
        )
    index = VectorIndex(index_spec)
    for doc in corpus:
        chunks = chunk_document(doc, chunker)
        vectors = embed_batch([c.text for c in chunks], embedding)
        for chunk, vec in zip(chunks, vectors):
            index.add_unique(
                doc.doc_id, chunk.chunk_id, vec.values,
                {"text": chunk.text},
            )
    per_item = []
    for qa in qa_items:
        qvec = embed_batch([qa.query], embedding)[0].values
        hits = index.top_k(qvec, fixed.top_k)
        context_texts = [h.metadata.get("text", "") for h in hits]
        response = _generate(fixed.generator, context_texts, qa.query)
        per_item.append(score(qa, context_texts, response, oracle))
    n = len(per_item)
    means = {
        "cr": sum(s.cr for s in per_item) / n,
        "cp": sum(s.cp for s in per_item) / n,
        "hallu": sum(s.hallu for s in per_item) / n,
        "faith": sum(s.faith for s in per_item) / n,
        "self_knowledge": sum(s.self_knowledge for s in per_item) / n,
    }
    flags = sorted({f for s in per_item for f in s.flags})
    return means, flags, _chunker_params(chunker), embedding, index_spec


def run_bench(corpus, qa_items, *, sweep_axis: str, variants, fixed=None,
              oracle=None) -> "BenchReport":
    """Sweep the variants, score every QA item per variant, and rank.

    A variant that raises is reported with its error instead of being
    dropped; ranks cover only the successful rows.
    """
    if not variants:
        raise ValueError("at least one variant is required")
    if not qa_items:
        raise ValueError("at least one QA item is required")
    if sweep_axis not in _AXIS_HEADERS:
        raise ValueError(f"unknown sweep axis: {sweep_axis!r}")
    fixed = fixed or BenchConfig()
    oracle = oracle or RuleBasedOracle()

    rows = []
    for position, variant in enumerate(variants):
        try:
            means, flags, chunker_params, embedding, index_spec = _run_variant(
                variant, corpus, qa_items, fixed, oracle
            )
        except Exception as exc:  # reported, never silently dropped
            rows.append({
                "label": variant.label,
                "error": f"{type(exc).__name__}: {exc}",
                "position": position,
            })
            continue
        composite = (
            means["cr"] + means["cp"] + (100.0 - means["hallu"])
            + means["faith"]
        ) / 4.0
        rows.append({
            "label": variant.label,
            "scores": means,
            "flags": flags,
            "composite": composite,
            "position": position,
            "params": {
                "chunker": chunker_params,
                "embedding": {
                    "provider_id": embedding.provider_id,
                    "dim": embedding.dim,
                },
                "index": _index_params(index_spec),
            },
        })

    ok_rows = [r for r in rows if "error" not in r]
    ok_rows.sort(
        key=lambda r: (-r["composite"], r["scores"]["hallu"], r["position"])
    )
    for rank, row in enumerate(ok_rows, start=1):
        row["rank"] = rank
    rows.sort(key=lambda r: r["position"])

    generator_id = (
        "extractive" if fixed.generator == "extractive"
        else type(fixed.generator).__name__
    )
    provenance = {
        "sweep_axis": sweep_axis,
        "corpus_hash": corpus_hash(corpus),
        "corpus_docs": len(corpus),
        "qa_count": len(qa_items),
        "oracle_id": oracle.oracle_id,
        "generator": generator_id,
        "top_k": fixed.top_k,
        "fixed_chunker": _chunker_params(fixed.chunker),
        "fixed_embedding": {
            "provider_id": fixed.embedding.provider_id,
            "dim": fixed.embedding.dim,
        },
        "fixed_index": _index_params(fixed.index),
        "division_conventions": DIVISION_CONVENTIONS,
    }
    return BenchReport(rows=rows, provenance=provenance)


class BenchReport:
    def __init__(self, rows: list, provenance: dict):
        self.rows = rows
        self.provenance = provenance

    @property
    def failed(self) -> list:
        return [r for r in self.rows if "error" in r]

    def to_json(self) -> str:
        """Deterministic serialization: identical runs, identical bytes."""
        payload = {"provenance": self.provenance, "rows": []}
        for row in self.rows:
            if "error" in row:
                payload["rows"].append(
                    {"label": row["label"], "error": row["error"]}
                )
                continue
            payload["rows"].append({
                "label": row["label"],
                "scores": {
                    k: round(v, 2) for k, v in row["scores"].items()
                },
                "composite": round(row["composite"], 2),
                "rank": row["rank"],
                "flags": row["flags"],
                "params": row["params"],
            })
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def to_markdown(self) -> str:
        """Aligned table: label, CR, CP, Hallu., Faith., Rank. The best
        value per metric column is bold."""
        header = _AXIS_HEADERS[self.provenance["sweep_axis"]]
        columns = ["CR", "CP", "Hallu.", "Faith.", "Rank"]
        ok = [r for r in self.rows if "error" not in r]

        def metric(row, name):
            return row["scores"][name]

        best = {}
        if ok:
            best["CR"] = max(metric(r, "cr") for r in ok)
            best["CP"] = max(metric(r, "cp") for r in ok)
            best["Hallu."] = min(metric(r, "hallu") for r in ok)
            best["Faith."] = max(metric(r, "faith") for r in ok)

        cells = []
        for row in self.rows:
            if "error" in row:
                cells.append(
                    [row["label"], "failed", "failed", "failed", "failed",
                     "-"]
                )
                continue
            line = [row["label"]]
            for name, key in (
                ("CR", "cr"), ("CP", "cp"), ("Hallu.", "hallu"),
                ("Faith.", "faith"),
            ):
                value = metric(row, key)
                text = f"{value:.2f}"
                if value == best.get(name):
                    text = f"**{text}**"
                line.append(text)
            line.append(str(row["rank"]))
            cells.append(line)

        table = [[header] + columns] + cells
        widths = [
            max(len(line[i]) for line in table)
            for i in range(len(table[0]))
        ]

        def fmt(line):
            padded = [
                line[0].ljust(widths[0])
            ] + [line[i].rjust(widths[i]) for i in range(1, len(line))]
            return "| " + " | ".join(padded) + " |"

        sep = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
        out = [fmt(table[0]), sep] + [fmt(line) for line in table[1:]]
        return "\n".join(out) + "\n"


def load_qa_file(path: str) -> list:
    """QA set file: JSON list of {query, ground_truth, source_doc_id?}."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise ValueError("QA file must be a JSON list")
    return [
        QAItem(
            query=item["query"],
            ground_truth=item["ground_truth"],
            source_doc_id=item.get("source_doc_id"),
        )
        for item in raw
    ]
