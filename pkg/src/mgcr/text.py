"""Caption synthesis, regex pruning, vocabulary and tokenisation."""
from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

PAD, UNK, BOS, EOS = 0, 1, 2, 3
SPECIALS = ("<pad>", "<unk>", "<bos>", "<eos>")
NO_CONTENT = "no relevant content"

DEFAULT_PATTERNS = (
    r"\bbuildings?\b",
    r"\bdistributed\b",
    r"\bdensity\b",
    r"\bclustered\b",
    r"\brows?\b",
    r"\bcorner\b",
    r"\bregion\b",
    r"\broads?\b",
)

# decoding settings of the captioner the ingestion path expects
MLLM_GENERATION = {"temperature": 0.1, "top_p": 0.3, "num_beams": 5, "max_new_tokens": 256}

_SENTENCE = re.compile(r"[^.?!]*[.?!]|[^.?!]+$")
_WORD = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class KeywordRules:
    patterns: tuple[str, ...] = DEFAULT_PATTERNS

    def __post_init__(self):
        if not self.patterns:
            raise ValueError("KeywordRules needs at least one pattern")
        object.__setattr__(self, "_compiled",
                           tuple(re.compile(p, re.IGNORECASE) for p in self.patterns))

    def matches(self, sentence: str) -> bool:
        return any(rx.search(sentence) for rx in self._compiled)


@dataclass
class CaptionRecord:
    image_id: str
    temporal_index: int
    raw_text: str
    pruned_text: str = ""
    token_ids: list[int] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {"image_id": self.image_id, "temporal_index": self.temporal_index,
               "raw_text": self.raw_text, "pruned_text": self.pruned_text}
        if self.metadata:
            out["metadata"] = self.metadata
        return out


# ------------------------------------------------------------------ synthesis

QUADRANTS = ("top-left", "top-right", "bottom-left", "bottom-right")


def density_word(n: int, canvas: int) -> str:
    per_tile = n * (64 * 64) / (canvas * canvas)
    if per_tile <= 4:
        return "sparsely"
    if per_tile <= 8:
        return "moderately"
    return "densely"


def quadrant_of(cx: float, cy: float, canvas: int) -> int:
    half = canvas / 2
    return (2 if cy >= half else 0) + (1 if cx >= half else 0)


def synthesize_caption(truth) -> str:
    """Template caption from a scene's ground truth (building count and centroids)."""
    n = len(truth.buildings)
    if n == 0:
        return "There are no buildings in the image."
    counts = [0, 0, 0, 0]
    for b in truth.buildings:
        counts[quadrant_of(b.x + b.w / 2, b.y + b.h / 2, truth.canvas)] += 1
    occupied = sum(1 for c in counts if c)
    if occupied == 4:
        distribution, where = "evenly distributed", "whole extent"
    else:
        distribution = "clustered" if occupied == 1 else "scattered"
        where = f"{QUADRANTS[counts.index(max(counts))]} region"
    head = "There is 1 building" if n == 1 else f"There are {n} buildings"
    return (f"{head}, {density_word(n, truth.canvas)} {distribution} in the {where} of the image. "
            "The background contains roads and trees.")


def split_sentences(text: str) -> list[str]:
    return [s.strip() for s in _SENTENCE.findall(text) if s.strip()]


def prune_caption(raw_text: str, rules: KeywordRules | None = None) -> str:
    """Keep sentences matching at least one rule, in order; sentinel if none survive."""
    rules = rules or KeywordRules()
    kept = [s for s in split_sentences(raw_text) if rules.matches(s)]
    return " ".join(kept) if kept else NO_CONTENT


# --------------------------------------------------------------- vocabulary


def words(text: str) -> list[str]:
    return _WORD.findall(text.lower())


class Vocabulary:
    def __init__(self, tokens: Sequence[str] = ()):
        self.itos = list(SPECIALS) + [t for t in tokens if t not in SPECIALS]
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.itos), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(lines[:4]) != SPECIALS:
            raise ValueError(f"{path}: vocabulary must start with {SPECIALS}")
        return cls(lines[4:])


def build_vocabulary(corpus: Iterable[str], min_freq: int = 1) -> Vocabulary:
    counts = Counter(w for text in corpus for w in words(text))
    kept = [w for w, c in counts.items() if c >= min_freq and w not in SPECIALS]
    kept.sort(key=lambda w: (-counts[w], w))
    return Vocabulary(kept)


def tokenize(text: str, vocab: Vocabulary, length: int = 16) -> list[int]:
    if length < 2:
        raise ValueError("token length must be at least 2")
    body = [vocab.id(w) for w in words(text)][: length - 2]
    ids = [BOS] + body + [EOS]
    return ids + [PAD] * (length - len(ids))


def make_record(image_id: str, temporal_index: int, raw_text: str, vocab: Vocabulary | None = None,
                length: int = 16, rules: KeywordRules | None = None, metadata=None) -> CaptionRecord:
    pruned = prune_caption(raw_text, rules)
    ids = tokenize(pruned, vocab, length) if vocab is not None else []
    return CaptionRecord(image_id, temporal_index, raw_text, pruned, ids, dict(metadata or {}))


# ------------------------------------------------------------ corpus files


def read_caption_corpus(path, rules: KeywordRules | None = None) -> list[CaptionRecord]:
    """Parse a JSON-lines caption file (externally generated captions welcome)."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                meta = dict(obj.get("metadata") or {})
                for key in MLLM_GENERATION:
                    if key in obj:
                        meta[key] = obj[key]
                rec = make_record(str(obj["image_id"]), int(obj["temporal_index"]),
                                  obj["raw_text"], rules=rules, metadata=meta)
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad caption record ({exc})") from exc
            if rec.temporal_index not in (1, 2):
                raise ValueError(f"{path}:{lineno}: temporal_index must be 1 or 2")
            records.append(rec)
    return records


def write_caption_corpus(path, records: Iterable[CaptionRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")
