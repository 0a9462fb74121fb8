"""Plain-text memory store with deterministic lexical retrieval.

Memory files use ``# Memory Entry N:`` or ``# Hint N:`` headers; the body up
to the next header is the entry text. Retrieval scores entries by lowercase
token overlap with the query, normalized by the entry's token count:

    score = |query_tokens & entry_tokens| / sqrt(|entry_tokens|)

which is deterministic and symmetric in token order. The scorer is a swappable
callable so an embedding backend can replace it without touching the store.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from importlib import resources
from typing import Callable

_HEADER_RE = re.compile(r"^#\s*(Memory Entry|Hint)\s+(\d+)\s*:\s*$")
_TOKEN_RE = re.compile(r"[a-z0-9_]+")

FAMILY_BY_HEADER = {"Memory Entry": "mpc_memory", "Hint": "decision_hint"}
ASSET_BY_FAMILY = {"mpc_memory": "mpc_memories.txt", "decision_hint": "decision_hints.txt"}
DEFAULT_K = 5


class MemoryLoadError(ValueError):
    """Malformed memory file: duplicate ids or empty bodies."""


@dataclass(frozen=True)
class MemoryEntry:
    id: int
    family: str  # mpc_memory | decision_hint
    text: str


def tokenize(text: str) -> set[str]:
    return set(_TOKEN_RE.findall(text.lower()))


def overlap_score(query_tokens: set[str], entry_tokens: set[str]) -> float:
    if not entry_tokens:
        return 0.0
    return len(query_tokens & entry_tokens) / math.sqrt(len(entry_tokens))


class MemoryStore:
    """Immutable ordered collection of memory entries with top-k retrieval."""

    def __init__(self, entries: list[MemoryEntry],
                 scorer: Callable[[set[str], set[str]], float] = overlap_score):
        self.entries = tuple(entries)
        self._scorer = scorer
        self._tokens = [tokenize(e.text) for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def retrieve(self, query: str, k: int = DEFAULT_K) -> list[MemoryEntry]:
        """Top-k entries by descending score, ties broken by ascending id."""
        if not self.entries:
            raise MemoryLoadError("cannot retrieve from an empty store")
        if k < 1:
            raise ValueError("k must be >= 1")
        q = tokenize(query)
        ranked = sorted(
            range(len(self.entries)),
            key=lambda i: (-self._scorer(q, self._tokens[i]), self.entries[i].id))
        return [self.entries[i] for i in ranked[:k]]


def retrieve(store: MemoryStore, query: str, k: int = DEFAULT_K) -> list[MemoryEntry]:
    return store.retrieve(query, k)


def load_memories(source) -> MemoryStore:
    """Parse a memory file (bytes, text, or file object) into a store."""
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        data = source.read()
        text = data.decode("utf-8") if isinstance(data, bytes) else data

    entries: list[MemoryEntry] = []
    seen: set[tuple[str, int]] = set()
    current: tuple[str, int] | None = None
    body: list[str] = []

    def flush():
        if current is None:
            return
        family, num = current
        content = "\n".join(body).strip()
        if not content:
            raise MemoryLoadError(f"empty body for {family} {num}")
        entries.append(MemoryEntry(id=num, family=family, text=content))

    for line in text.splitlines():
        m = _HEADER_RE.match(line.strip())
        if m:
            flush()
            family = FAMILY_BY_HEADER[m.group(1)]
            num = int(m.group(2))
            if (family, num) in seen:
                raise MemoryLoadError(f"duplicate id {num} in family {family}")
            seen.add((family, num))
            current = (family, num)
            body = []
        elif current is not None:
            body.append(line)
        elif line.strip():
            raise MemoryLoadError(f"content before first header: '{line.strip()}'")
    flush()
    if not entries:
        raise MemoryLoadError("no memory entries found")
    return MemoryStore(entries)


def builtin_memories(family: str) -> MemoryStore:
    """The shipped memory assets ('mpc_memory' or 'decision_hint')."""
    asset = ASSET_BY_FAMILY.get(family)
    if asset is None:
        raise KeyError(f"unknown memory family '{family}'")
    text = resources.files("driverl").joinpath(f"assets/{asset}").read_text("utf-8")
    return load_memories(text)
