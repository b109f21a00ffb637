"""Document parsing and chunking.

Stage one of the knowledge injection pipeline: raw bytes come in, normalized
documents come out, and documents are segmented into retrieval-sized chunks
either along the heading structure ("semantic") or at fixed character
lengths ("fixed").

Both strategies guarantee, for overlap 0, that concatenating chunk texts in
ordinal order reproduces the document body byte for byte. That property is
what makes the downstream citation and evaluation machinery checkable, so
the chunkers never trim, pad or re-wrap text.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

from .errors import EmptyDocument, InvalidEncoding, OversizeSection

_ATX_RE = re.compile(r"^(#{1,6})\s+(.*?)\s*#*\s*$")
_SETEXT_UNDERLINE_RE = re.compile(r"^(=+|-+)\s*$")
_TRAILING_WS_RE = re.compile(r"[ \t\f\v]+$")


@dataclass
class Document:
    """A normalized source document plus its catalog metadata."""

    doc_id: str
    title: str
    author: str
    doc_type: str
    version: str
    body: str
    page_count: int = 0


@dataclass
class Chunk:
    """A contiguous span of a document body, stored and retrieved as a unit."""

    chunk_id: str
    doc_id: str
    ordinal: int
    text: str
    heading_path: list[str] = field(default_factory=list)
    char_span: tuple[int, int] = (0, 0)


@dataclass(frozen=True)
class ChunkerConfig:
    strategy: str = "semantic"          # "semantic" | "fixed"
    max_chars: int = 1024
    overlap_chars: int = 0
    semantic_overflow: str = "split-fixed"  # "split-fixed" | "error"

    def __post_init__(self) -> None:
        if self.strategy not in ("semantic", "fixed"):
            raise ValueError(f"unknown chunking strategy: {self.strategy!r}")
        if self.max_chars <= 0:
            raise ValueError("max_chars must be positive")
        if self.overlap_chars < 0:
            raise ValueError("overlap_chars must be nonnegative")
        if self.overlap_chars >= self.max_chars:
            raise ValueError("overlap_chars must be smaller than max_chars")
        if self.semantic_overflow not in ("split-fixed", "error"):
            raise ValueError(
                f"unknown semantic_overflow policy: {self.semantic_overflow!r}"
            )


def derive_doc_id(title: str, version: str) -> str:
    """Stable document id for a (title, version) pair.

    Re-ingesting the same pair therefore lands on the same id, which is what
    makes document replacement idempotent.
    """
    digest = hashlib.sha256(f"{title}\x00{version}".encode("utf-8")).hexdigest()
    return digest[:12]


def parse_document(
    raw: bytes,
    format: str = "plain",
    *,
    title: str,
    author: str = "",
    doc_type: str = "",
    version: str = "",
    page_count: int = 0,
    doc_id: str | None = None,
) -> Document:
    """Decode and normalize raw document bytes.

    Normalization is exactly three rules so round-trip checks stay
    well-defined: CRLF becomes LF, trailing whitespace is stripped from each
    line, and runs of three or more blank lines collapse to two. Heading
    lines are preserved verbatim.

    Raises InvalidEncoding for non-UTF-8 input and EmptyDocument when
    nothing but whitespace remains.
    """
    if format not in ("plain", "markdown"):
        raise ValueError(f"unknown document format: {format!r}")
    if not title:
        raise ValueError("document title must be non-empty")
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise InvalidEncoding(f"document is not valid UTF-8: {exc}") from exc

    text = text.replace("\r\n", "\n")
    ends_with_newline = text.endswith("\n")
    lines = text.split("\n")
    if ends_with_newline:
        lines.pop()  # drop the empty tail produced by the final newline

    lines = [_TRAILING_WS_RE.sub("", line) for line in lines]

    collapsed: list[str] = []
    blank_run = 0
    for line in lines:
        if line == "":
            blank_run += 1
            if blank_run > 2:
                continue
        else:
            blank_run = 0
        collapsed.append(line)

    body = "\n".join(collapsed)
    if ends_with_newline and body:
        body += "\n"
    if not body.strip():
        raise EmptyDocument(f"document {title!r} has no content after normalization")

    return Document(
        doc_id=doc_id or derive_doc_id(title, version),
        title=title,
        author=author,
        doc_type=doc_type,
        version=version,
        body=body,
        page_count=page_count,
    )


def _scan_headings(body: str) -> list[tuple[int, int, str]]:
    """Find heading starts in a body.

    Returns (char offset of heading line start, level, title) tuples in
    document order. Recognizes ATX headings (``#`` through ``######``) and
    setext underlines (``===`` for level 1, ``---`` for level 2) beneath a
    non-blank, non-heading line. A ``---`` after a blank line is a thematic
    break, not a heading.
    """
    headings: list[tuple[int, int, str]] = []
    offset = 0
    prev_line: str | None = None
    prev_offset = 0
    # whether the previous line may serve as a setext title: it must be
    # non-blank and not already part of a heading (ATX line or an underline)
    prev_claimable = False
    for line in body.splitlines(keepends=True):
        stripped = line.rstrip("\n")
        atx = _ATX_RE.match(stripped)
        is_underline = bool(_SETEXT_UNDERLINE_RE.match(stripped))
        if atx:
            headings.append((offset, len(atx.group(1)), atx.group(2).strip()))
            prev_claimable = False
        elif is_underline and prev_claimable:
            level = 1 if stripped[0] == "=" else 2
            headings.append((prev_offset, level, prev_line.strip()))
            prev_claimable = False
        else:
            prev_claimable = bool(stripped.strip()) and not is_underline
        prev_line = stripped
        prev_offset = offset
        offset += len(line)
    return headings


def _split_fixed_spans(text: str, max_chars: int, overlap: int) -> list[tuple[int, int]]:
    """Compute (start, end) spans for fixed-length splitting of `text`.

    The split point is the last word boundary at or before max_chars; a hard
    mid-word split happens only when a single word exceeds max_chars.
    Consecutive spans share `overlap` characters. With overlap 0 the spans
    tile the text exactly.
    """
    spans: list[tuple[int, int]] = []
    n = len(text)
    pos = 0
    while pos < n:
        if n - pos <= max_chars:
            spans.append((pos, n))
            break
        window = text[pos : pos + max_chars]
        cut = -1
        for i in range(len(window) - 1, -1, -1):
            if window[i].isspace():
                cut = i
                break
        end = pos + (cut + 1 if cut >= 0 else max_chars)
        spans.append((pos, end))
        # overlap can exceed what the word boundary left us; always advance
        pos = max(end - overlap, pos + 1)
    return spans


def chunk_fixed(doc: Document, cfg: ChunkerConfig) -> list[Chunk]:
    """Split a document into fixed-length, word-boundary-aligned chunks."""
    if cfg.strategy != "fixed":
        raise ValueError("chunk_fixed requires strategy='fixed'")
    spans = _split_fixed_spans(doc.body, cfg.max_chars, cfg.overlap_chars)
    return [
        Chunk(
            chunk_id=f"c{ordinal:05d}",
            doc_id=doc.doc_id,
            ordinal=ordinal,
            text=doc.body[start:end],
            heading_path=[],
            char_span=(start, end),
        )
        for ordinal, (start, end) in enumerate(spans)
    ]


def chunk_semantic(doc: Document, cfg: ChunkerConfig) -> list[Chunk]:
    """Split a document along its heading structure.

    Every heading line starts a new chunk; a chunk runs to the next heading
    line (the section tree only matters for the heading_path breadcrumb).
    Text before the first heading becomes its own chunk with an empty path.
    Sections longer than max_chars are sub-split with the fixed-length rules
    and every sub-chunk keeps the section's heading_path.
    """
    if cfg.strategy != "semantic":
        raise ValueError("chunk_semantic requires strategy='semantic'")
    body = doc.body
    headings = _scan_headings(body)

    # (section start, section end, heading_path)
    sections: list[tuple[int, int, list[str]]] = []
    stack: list[tuple[int, str]] = []  # (level, title)
    if not headings or headings[0][0] > 0:
        preamble_end = headings[0][0] if headings else len(body)
        sections.append((0, preamble_end, []))
    for i, (start, level, title) in enumerate(headings):
        end = headings[i + 1][0] if i + 1 < len(headings) else len(body)
        while stack and stack[-1][0] >= level:
            stack.pop()
        stack.append((level, title))
        sections.append((start, end, [t for _, t in stack]))

    chunks: list[Chunk] = []
    ordinal = 0
    for start, end, path in sections:
        if start == end:
            continue
        section_text = body[start:end]
        if len(section_text) <= cfg.max_chars:
            spans = [(0, len(section_text))]
        elif cfg.semantic_overflow == "error":
            raise OversizeSection(
                f"section at offset {start} is {len(section_text)} chars "
                f"(max {cfg.max_chars}): {'/'.join(path) or '<preamble>'}"
            )
        else:
            spans = _split_fixed_spans(section_text, cfg.max_chars, cfg.overlap_chars)
        for sub_start, sub_end in spans:
            chunks.append(
                Chunk(
                    chunk_id=f"c{ordinal:05d}",
                    doc_id=doc.doc_id,
                    ordinal=ordinal,
                    text=section_text[sub_start:sub_end],
                    heading_path=list(path),
                    char_span=(start + sub_start, start + sub_end),
                )
            )
            ordinal += 1
    return chunks


def chunk_document(doc: Document, cfg: ChunkerConfig) -> list[Chunk]:
    """Dispatch to the configured chunking strategy."""
    if cfg.strategy == "semantic":
        return chunk_semantic(doc, cfg)
    return chunk_fixed(doc, cfg)
