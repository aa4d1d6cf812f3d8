"""Tokenization, vocabulary construction, and index encoding for reports."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass

__all__ = ["NOU", "START", "END", "segment", "Vocabulary", "TokenizedReport"]

NOU = "<nou>"
START = "<start>"
END = "<end>"

_SPECIALS = (NOU, START, END)
NOU_INDEX, START_INDEX, END_INDEX = 0, 1, 2


def segment(text: str) -> list[str]:
    """Lowercase, split on whitespace, and break punctuation into standalone tokens."""
    tokens: list[str] = []
    word: list[str] = []
    for ch in text.lower():
        if ch.isspace():
            if word:
                tokens.append("".join(word))
                word = []
        elif ch.isalnum() or ch == "_":
            word.append(ch)
        else:
            if word:
                tokens.append("".join(word))
                word = []
            tokens.append(ch)
    if word:
        tokens.append("".join(word))
    return tokens


@dataclass(frozen=True)
class TokenizedReport:
    """Index sequence wrapped in start/end; length l counts everything after start."""

    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        object.__setattr__(self, "indices", idx)
        if len(idx) < 2 or idx[0] != START_INDEX or idx[-1] != END_INDEX:
            raise ValueError(f"report must be wrapped in start/end, got {idx}")
        interior = idx[1:-1]
        if START_INDEX in interior or END_INDEX in interior:
            raise ValueError("start/end must not appear in the report interior")

    @property
    def length(self) -> int:
        return len(self.indices) - 1


class Vocabulary:
    """Bidirectional token map with <nou>/<start>/<end> pinned at indices 0-2."""

    def __init__(self, tokens: list[str]):
        if tuple(tokens[:3]) != _SPECIALS:
            raise ValueError(f"first three tokens must be {_SPECIALS}")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.index_to_token = list(tokens)
        self.token_to_index = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.index_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_index

    @classmethod
    def build(cls, corpus, min_count: int = 3) -> "Vocabulary":
        """Tokens with corpus frequency >= min_count, in first-appearance order."""
        counts = Counter()
        order: dict[str, int] = {}
        for tokens in corpus:
            for tok in tokens:
                counts[tok] += 1
                order.setdefault(tok, len(order))
        kept = sorted(
            (t for t, c in counts.items() if c >= min_count and t not in _SPECIALS),
            key=order.__getitem__,
        )
        return cls(list(_SPECIALS) + kept)

    def encode(self, tokens) -> TokenizedReport:
        body = tuple(self.token_to_index.get(t, NOU_INDEX) for t in tokens)
        return TokenizedReport((START_INDEX, *body, END_INDEX))

    def decode(self, indices) -> str:
        words = []
        for i in indices:
            i = int(i)
            if not (0 <= i < len(self.index_to_token)):
                raise ValueError(f"index {i} out of range for vocabulary of size {len(self)}")
            if i in (NOU_INDEX, START_INDEX, END_INDEX):
                continue
            words.append(self.index_to_token[i])
        return " ".join(words)

    def to_json(self) -> str:
        return json.dumps({"version": 1, "tokens": self.index_to_token})

    @classmethod
    def from_json(cls, payload: str) -> "Vocabulary":
        obj = json.loads(payload)
        if obj.get("version") != 1:
            raise ValueError(f"unsupported vocabulary version {obj.get('version')!r}")
        return cls(obj["tokens"])
