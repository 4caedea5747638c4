"""Data model, JSONL ingestion, span handling and tokenization.

Every other module consumes :class:`CtrInstance` objects and the
:class:`TokenSeq` values produced by :func:`tokenize`.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator, NamedTuple, Sequence

logger = logging.getLogger(__name__)

HIGHLIGHT_START = "<highlight_start>"
HIGHLIGHT_END = "<highlight_end>"

# Header line written by the CLI in front of JSONL artifacts.
HEADER_KEY = "__header__"

_TOKEN_RE = re.compile(r"[^\W_]+")


class DatasetError(ValueError):
    """A dataset record or file failed validation."""


class HighlightSpan(NamedTuple):
    """Half-open character range ``[start, end)`` into a document."""

    start: int
    end: int


@dataclass(frozen=True)
class TokenizerOptions:
    lowercase: bool = True
    stem: bool = False

    def as_dict(self) -> dict:
        return {"lowercase": self.lowercase, "stem": self.stem}


DEFAULT_TOKENIZER = TokenizerOptions()


@dataclass(frozen=True)
class TokenSeq:
    """Normalized tokens plus the character span each one came from."""

    tokens: tuple[str, ...]
    offsets: tuple[tuple[int, int], ...]
    options: TokenizerOptions = DEFAULT_TOKENIZER

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self) -> Iterator[str]:
        return iter(self.tokens)

    def __getitem__(self, i):
        return self.tokens[i]

    @classmethod
    def from_tokens(cls, tokens: Sequence[str], options: TokenizerOptions = DEFAULT_TOKENIZER) -> "TokenSeq":
        """Wrap already-normalized tokens (e.g. LM output), laying them out
        as if joined by single spaces."""
        offsets = []
        pos = 0
        for tok in tokens:
            offsets.append((pos, pos + len(tok)))
            pos += len(tok) + 1
        return cls(tuple(tokens), tuple(offsets), options)


@dataclass(frozen=True)
class CtrInstance:
    id: str
    document: str
    highlights: tuple[HighlightSpan, ...]
    reference: str | None = None

    def __post_init__(self):
        if not self.id:
            raise DatasetError("instance id must be non-empty")
        if not self.highlights:
            raise DatasetError(f"{self.id}: at least one highlight is required")
        n = len(self.document)
        for span in self.highlights:
            validate_span(span, n)


@dataclass
class Dataset:
    """Loaded instances plus a record of lines skipped in lenient mode."""

    instances: tuple[CtrInstance, ...]
    skipped: list[tuple[int, str]] = field(default_factory=list)
    path: str | None = None

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self) -> Iterator[CtrInstance]:
        return iter(self.instances)

    def __getitem__(self, i) -> CtrInstance:
        return self.instances[i]

    @property
    def skip_count(self) -> int:
        return len(self.skipped)

    def by_id(self) -> dict[str, CtrInstance]:
        return {inst.id: inst for inst in self.instances}


def validate_span(span: HighlightSpan, doc_len: int) -> None:
    start, end = span
    if not (isinstance(start, int) and isinstance(end, int)):
        raise DatasetError(f"span offsets must be integers, got {span!r}")
    if start >= end:
        raise DatasetError(f"span start ≥ end: {span!r}")
    if start < 0 or end > doc_len:
        raise DatasetError(f"span {span!r} out of bounds for document of length {doc_len}")


def normalize_spans(spans: Sequence[tuple[int, int]]) -> list[HighlightSpan]:
    """Sort spans and merge any that overlap or abut."""
    merged: list[list[int]] = []
    for start, end in sorted(spans):
        if merged and start <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], end)
        else:
            merged.append([start, end])
    return [HighlightSpan(s, e) for s, e in merged]


def make_instance(id: str, document: str, highlights, reference: str | None = None) -> CtrInstance:
    spans = [HighlightSpan(*s) for s in highlights]
    for span in spans:
        validate_span(span, len(document))
    return CtrInstance(id, document, tuple(normalize_spans(spans)), reference)


def _parse_record(obj) -> CtrInstance:
    if not isinstance(obj, dict):
        raise DatasetError("record is not a JSON object")
    for key, typ in (("id", str), ("document", str), ("highlights", list)):
        if not isinstance(obj.get(key), typ):
            raise DatasetError(f"missing or mistyped field {key!r}")
    ref = obj.get("reference")
    if ref is not None and not isinstance(ref, str):
        raise DatasetError("field 'reference' must be a string")
    spans = []
    for raw in obj["highlights"]:
        if not (isinstance(raw, (list, tuple)) and len(raw) == 2):
            raise DatasetError(f"malformed span {raw!r}")
        spans.append(raw)
    return make_instance(obj["id"], obj["document"], spans, ref)


def iter_jsonl(path) -> Iterator[tuple[int, str]]:
    """Yield ``(line_number, text)`` for non-blank lines of a UTF-8 file."""
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                yield lineno, line


def load_dataset(path, strict: bool = True) -> Dataset:
    """Read a dataset JSONL file.

    In strict mode the first invalid record raises :class:`DatasetError`.
    Otherwise invalid records (including duplicate ids) are skipped and
    reported in :attr:`Dataset.skipped`.
    """
    instances: list[CtrInstance] = []
    skipped: list[tuple[int, str]] = []
    seen: set[str] = set()
    for lineno, line in iter_jsonl(path):
        try:
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"malformed JSON: {exc.msg}") from None
            if isinstance(obj, dict) and HEADER_KEY in obj:
                continue
            inst = _parse_record(obj)
            if inst.id in seen:
                raise DatasetError(f"duplicate id {inst.id!r}")
        except DatasetError as exc:
            if strict:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
            logger.warning("%s:%d skipped: %s", path, lineno, exc)
            skipped.append((lineno, str(exc)))
            continue
        seen.add(inst.id)
        instances.append(inst)
    return Dataset(tuple(instances), skipped, str(path))


def dump_instance(inst: CtrInstance) -> dict:
    obj = {"id": inst.id, "document": inst.document, "highlights": [list(s) for s in inst.highlights]}
    if inst.reference is not None:
        obj["reference"] = inst.reference
    return obj


def load_system_outputs(path) -> dict[str, str]:
    """Read ``{"id", "output"}`` records into an id -> text mapping."""
    outputs: dict[str, str] = {}
    for lineno, line in iter_jsonl(path):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}:{lineno}: malformed JSON: {exc.msg}") from None
        if HEADER_KEY in obj:
            continue
        if not isinstance(obj.get("id"), str) or not isinstance(obj.get("output"), str):
            raise DatasetError(f"{path}:{lineno}: expected string fields 'id' and 'output'")
        if obj["id"] in outputs:
            raise DatasetError(f"{path}:{lineno}: duplicate id {obj['id']!r}")
        outputs[obj["id"]] = obj["output"]
    return outputs


def highlight_texts(instance: CtrInstance) -> list[str]:
    """Trimmed text of each (normalized) highlight, in document order."""
    pieces = []
    for start, end in normalize_spans(instance.highlights):
        piece = instance.document[start:end].strip()
        if piece:
            pieces.append(piece)
    return pieces


def concat_highlights(instance: CtrInstance) -> str:
    return " ".join(highlight_texts(instance))


@lru_cache(maxsize=None)
def _stemmer():
    from nltk.stem.porter import PorterStemmer

    return PorterStemmer()


@lru_cache(maxsize=65536)
def stem(word: str) -> str:
    return _stemmer().stem(word)


def normalize_token(raw: str, options: TokenizerOptions = DEFAULT_TOKENIZER) -> str:
    tok = raw.lower() if options.lowercase else raw
    if options.stem:
        tok = stem(tok)
    return tok


def tokenize(text: str, options: TokenizerOptions = DEFAULT_TOKENIZER) -> TokenSeq:
    """Split on anything that is not a Unicode letter or digit."""
    tokens = []
    offsets = []
    for m in _TOKEN_RE.finditer(text):
        tokens.append(normalize_token(m.group(), options))
        offsets.append(m.span())
    return TokenSeq(tuple(tokens), tuple(offsets), options)


def write_jsonl(records, fh) -> None:
    for rec in records:
        fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def read_jsonl(path) -> list[dict]:
    rows = []
    for lineno, line in iter_jsonl(path):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}:{lineno}: malformed JSON: {exc.msg}") from None
        if isinstance(obj, dict) and HEADER_KEY in obj:
            continue
        rows.append(obj)
    return rows


def strip_markers(text: str) -> str:
    return text.replace(HIGHLIGHT_START, "").replace(HIGHLIGHT_END, "")


__all__ = [
    "CtrInstance",
    "Dataset",
    "DatasetError",
    "HighlightSpan",
    "TokenSeq",
    "TokenizerOptions",
    "concat_highlights",
    "load_dataset",
    "load_system_outputs",
    "make_instance",
    "normalize_spans",
    "tokenize",
]
