"""Regenerate the benchmark fixture corpus.

Three maintenance manuals plus a QA set, constructed so that every
ground-truth claim sits inside exactly one heading section (the
semantic chunker keeps it whole) while a targeted subset of claims
straddles a fixed-1024 window cut (the fixed chunker severs them).
Padding word counts are searched, not hand-tuned: for each section the
script grows the filler until the claim lands on the wanted side of the
cut, so the property survives edits to the prose.

Run from the repository root:

    python3 tests/fixtures/generate_corpus.py
"""

from __future__ import annotations

import json
import random
from pathlib import Path

from fieldrag.evaluation import normalize_text
from fieldrag.ingest import ChunkerConfig, chunk_fixed, parse_document

OUT_DIR = Path(__file__).parent / "corpus5"
QA_PATH = Path(__file__).parent / "qa5.json"
MAX_CHARS = 1024

_WORDS = (
    "inspect verify record schedule component assembly housing fastener "
    "gasket fitting manifold circuit sensor actuator spindle carriage "
    "coolant reservoir filtration interval procedure technician logbook "
    "clearance tolerance vibration alignment torque lubricant residue "
    "contamination inspection downtime calibration gauge threshold"
).split()


def _filler(rng: random.Random, words: int) -> str:
    """Plausible maintenance prose of exactly `words` words."""
    out = []
    while len(out) < words:
        n = min(rng.randint(6, 12), words - len(out))
        sentence = " ".join(rng.choice(_WORDS) for _ in range(n))
        out.extend(sentence.split())
        out[-1] += "."
        out[len(out) - n] = out[len(out) - n].capitalize()
    return " ".join(out)


def _claim_split(body: str, claim: str) -> bool:
    """True when no fixed-1024 chunk of `body` contains the claim."""
    doc = parse_document(body.encode(), format="markdown", title="t", version="1")
    assert doc.body == body.rstrip("\n") or doc.body == body, "normalization drift"
    cfg = ChunkerConfig(strategy="fixed", max_chars=MAX_CHARS)
    needle = normalize_text(claim)
    return not any(
        needle in normalize_text(c.text) for c in chunk_fixed(doc, cfg)
    )


# (heading, claim sentence, query, want_split)
MANUALS = {
    "hydraulic-press.md": {
        "title": "Hydraulic press HP-300 service manual",
        "intro": "# Hydraulic press HP-300 service manual\n\n"
                 "Service procedures for the HP-300 down-stroking press.",
        "sections": [
            ("Pump pressure",
             "Set the relief valve to 180 bar before restarting the press.",
             "What pressure should the relief valve be set to on the press?",
             False),
            ("Oil changes",
             "Replace the hydraulic oil every 2000 operating hours.",
             "How often is the hydraulic oil replaced?",
             True),
            ("Safety interlocks",
             "The light curtain must stop the ram within 90 milliseconds.",
             "How fast must the light curtain stop the ram?",
             False),
            ("Accumulator checks",
             "Precharge the accumulator with nitrogen to 60 bar.",
             "What nitrogen precharge does the accumulator need?",
             True),
        ],
    },
    "conveyor-belt.md": {
        "title": "Conveyor belt CV-12 maintenance guide",
        "intro": "# Conveyor belt CV-12 maintenance guide\n\n"
                 "Routine maintenance for the CV-12 trough conveyor.",
        "sections": [
            ("Belt tension",
             "Tension the belt until it deflects 12 millimeters at midspan.",
             "How much should the belt deflect at midspan?",
             False),
            ("Roller bearings",
             "Grease the roller bearings with lithium grease every 500 hours.",
             "Which grease do the roller bearings take and how often?",
             True),
            ("Motor alignment",
             "Align the motor shaft within 0.05 millimeters using a dial gauge.",
             "What tolerance is the motor shaft aligned to?",
             False),
            ("Emergency stops",
             "Test the emergency stop pull cord before every shift.",
             "When is the emergency stop pull cord tested?",
             True),
        ],
    },
    "cnc-mill.md": {
        "title": "CNC mill MX-9 operator handbook",
        "intro": "# CNC mill MX-9 operator handbook\n\n"
                 "Operating and care instructions for the MX-9 vertical mill.",
        "sections": [
            ("Spindle warmup",
             "Warm up the spindle for 15 minutes at 2000 rpm before cutting.",
             "How long does the spindle warm up and at what rpm?",
             False),
            ("Coolant mixing",
             "Mix the coolant concentrate at a ratio of one to twenty.",
             "What ratio is the coolant concentrate mixed at?",
             True),
            ("Tool changer",
             "Torque the drawbar to 35 newton meters during tool changer service.",
             "What torque does the drawbar need?",
             False),
            ("Axis lubrication",
             "Keep the way oil reservoir above the minimum mark at all times.",
             "Where must the way oil reservoir level stay?",
             False),
        ],
    },
}


def build_manual(filename: str, spec: dict, rng: random.Random):
    body = spec["intro"] + "\n\n"
    qa_items = []
    for heading, claim, query, want_split in spec["sections"]:
        base = f"## {heading}\n\n"
        # search the pad that puts the claim on the wanted side of a cut
        chosen = None
        for pad in range(10, 400):
            section = base + _filler(random.Random(rng.randint(0, 9)), pad)
            section += " " + claim + "\n\n"
            if len(section) > MAX_CHARS - 60:
                break
            candidate = body + section
            if _claim_split(candidate, claim) == want_split:
                chosen = section
                break
        if chosen is None:
            raise SystemExit(
                f"no pad keeps/splits claim as requested: {filename} / {heading}"
            )
        body += chosen
        qa_items.append({"query": query, "ground_truth": claim})
    return body, qa_items


def main() -> None:
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    rng = random.Random(74)
    qa: list[dict] = []
    for filename, spec in MANUALS.items():
        body, items = build_manual(filename, spec, rng)
        (OUT_DIR / filename).write_text(body, encoding="utf-8")
        (OUT_DIR / f"{filename}.meta.json").write_text(
            json.dumps({"title": spec["title"], "version": "1"}, indent=1) + "\n",
            encoding="utf-8",
        )
        qa.extend(items)
    QA_PATH.write_text(json.dumps(qa, indent=1) + "\n", encoding="utf-8")

    # report what actually got built
    split = 0
    for filename, spec in MANUALS.items():
        body = (OUT_DIR / filename).read_text(encoding="utf-8")
        for _, claim, _, _ in spec["sections"]:
            split += _claim_split(body, claim)
    total = sum(len(s["sections"]) for s in MANUALS.values())
    print(f"corpus written: {total} claims, {split} split under fixed-{MAX_CHARS}")


if __name__ == "__main__":
    main()
