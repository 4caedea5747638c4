"""Run artifacts: a provenance header followed by a payload.

* TSV / markdown: first line is ``# ctrkit {json header}``
* JSONL: first line is ``{"__header__": {...}}``

Files are written atomically (temp file in the target directory, then rename).
"""

from __future__ import annotations

import json
import os
import sys
import tempfile
from dataclasses import dataclass
from typing import Iterable, Sequence

from . import __version__
from .corpus import HEADER_KEY

SCHEMA_VERSION = 1
_TEXT_PREFIX = "# ctrkit "


class ArtifactError(ValueError):
    pass


def make_header(kind: str, argv: Sequence[str], config: dict, seed: int | None, tokenizer: dict, **extra) -> dict:
    header = {
        "schema": SCHEMA_VERSION,
        "engine": "ctrkit",
        "version": __version__,
        "kind": kind,
        "argv": list(argv),
        "config": config,
        "seed": seed,
        "tokenizer": tokenizer,
    }
    header.update(extra)
    return header


def atomic_write(path: str | None, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dumps(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True)


def render_tsv(header: dict, columns: Sequence[str], rows: Iterable[Sequence[str]]) -> str:
    lines = [_TEXT_PREFIX + _dumps(header), "\t".join(columns)]
    lines.extend("\t".join(str(c) for c in row) for row in rows)
    return "\n".join(lines) + "\n"


def render_jsonl(header: dict, records: Iterable[dict]) -> str:
    lines = [_dumps({HEADER_KEY: header})]
    lines.extend(json.dumps(r, ensure_ascii=False) for r in records)
    return "\n".join(lines) + "\n"


def render_text(header: dict, body: str) -> str:
    return _TEXT_PREFIX + _dumps(header) + "\n" + body


@dataclass
class Artifact:
    path: str
    header: dict
    format: str  # "tsv", "jsonl" or "text"
    body: str

    @property
    def kind(self) -> str:
        return self.header.get("kind", "unknown")

    def tsv_rows(self) -> tuple[list[str], list[list[str]]]:
        lines = [l for l in self.body.splitlines() if l]
        if not lines:
            return [], []
        return lines[0].split("\t"), [l.split("\t") for l in lines[1:]]

    def records(self) -> list[dict]:
        return [json.loads(l) for l in self.body.splitlines() if l.strip()]


def parse_artifact(text: str, path: str = "<string>") -> Artifact:
    first, _, rest = text.partition("\n")
    if first.startswith(_TEXT_PREFIX):
        header = json.loads(first[len(_TEXT_PREFIX) :])
        fmt = "tsv" if "\t" in rest.partition("\n")[0] else "text"
        return Artifact(path, header, fmt, rest)
    try:
        obj = json.loads(first)
    except json.JSONDecodeError:
        obj = None
    if isinstance(obj, dict) and HEADER_KEY in obj:
        return Artifact(path, obj[HEADER_KEY], "jsonl", rest)
    raise ArtifactError(f"{path}: no ctrkit provenance header")


def read_artifact(path: str) -> Artifact:
    with open(path, encoding="utf-8") as fh:
        return parse_artifact(fh.read(), path)


def payload(text: str) -> str:
    """Everything after the header line."""
    return text.partition("\n")[2]
