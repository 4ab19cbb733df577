"""Closed token vocabulary generated from the world schema."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable, Sequence

from . import progress as _progress
from .worldsim import world_tokens

PAD, BOS, EOS = "<pad>", "<bos>", "<eos>"
HEAD_PROMPTS = {"high": "<high>", "low": "<low>", "progress": "<progress>"}
DONE_TRUE, DONE_FALSE = "true", "false"

SUBTASK_WORDS = ("locate", "pickup", "new", "except", "place", "navigate", "to")


def _build_tokens() -> list:
    tokens = [PAD, BOS, EOS, *HEAD_PROMPTS.values(), DONE_TRUE, DONE_FALSE,
              _progress.SEP, _progress.ROUTE, _progress.NEXT, _progress.SUBTASK_SEP]
    for group in (world_tokens(), SUBTASK_WORDS, _progress.template_words(), ("opened", "closed")):
        for w in group:
            if w not in tokens:
                tokens.append(w)
    return tokens


class Vocabulary:
    def __init__(self, tokens: Sequence[str] | None = None):
        self.tokens = list(tokens) if tokens is not None else _build_tokens()
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def id(self, token: str) -> int:
        return self.index[token]

    def encode(self, tokens: Iterable[str]) -> list:
        return [self.index[t] for t in tokens]

    def decode(self, ids: Iterable[int]) -> tuple:
        return tuple(self.tokens[int(i)] for i in ids)

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    @property
    def bos_id(self) -> int:
        return self.index[BOS]

    @property
    def eos_id(self) -> int:
        return self.index[EOS]

    @property
    def hash(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode()).hexdigest()[:16]

    def save(self, path) -> None:
        payload = {
            "hash": self.hash,
            "separator_id": self.index[_progress.SEP],
            "route_id": self.index[_progress.ROUTE],
            "eos_id": self.eos_id,
            "tokens": self.tokens,
        }
        Path(path).write_text(json.dumps(payload, indent=1))

    @classmethod
    def load(cls, path) -> "Vocabulary":
        payload = json.loads(Path(path).read_text())
        vocab = cls(payload["tokens"])
        if vocab.hash != payload["hash"]:
            raise ValueError("vocabulary file hash mismatch")
        return vocab


VOCAB = Vocabulary()
