"""Vocabulary construction and contiguous-lane batching for LM training."""

from __future__ import annotations

from collections import Counter
from pathlib import Path

import numpy as np

from .errors import DataError, ParameterError

UNK = "<unk>"
EOS = "<eos>"
SPECIALS = (UNK, EOS)

_ESCAPES = {"\\": "\\\\", "\n": "\\n", "\r": "\\r", "\t": "\\t"}
_UNESCAPES = {"\\\\": "\\", "\\n": "\n", "\\r": "\r", "\\t": "\t"}


class Vocab:
    """Bijection between tokens and dense ids; ``<unk>`` = 0, ``<eos>`` = 1."""

    def __init__(self, tokens: list[str], mode: str = "char"):
        if mode not in ("char", "word"):
            raise ParameterError(f"vocab mode must be 'char' or 'word', got {mode!r}")
        if list(tokens[:2]) != list(SPECIALS):
            raise DataError("vocabulary must start with <unk>, <eos>")
        if len(set(tokens)) != len(tokens):
            raise DataError("duplicate tokens in vocabulary")
        self.mode = mode
        self.itos = list(tokens)
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.mode == other.mode and self.itos == other.itos

    @property
    def unk_id(self) -> int:
        return 0

    @property
    def eos_id(self) -> int:
        return 1

    def lookup(self, token: str) -> int:
        return self.stoi.get(token, self.unk_id)

    def split(self, text: str) -> list[str]:
        if self.mode == "char":
            return list(text)
        return _word_tokens(text)

    def encode(self, text: str) -> np.ndarray:
        return np.array([self.lookup(t) for t in self.split(text)], dtype=np.int64)

    def decode(self, ids) -> str:
        toks = [self.itos[int(i)] for i in ids]
        if self.mode == "char":
            return "".join(toks)
        lines, cur = [], []
        for tok in toks:
            if tok == EOS:
                lines.append(" ".join(cur))
                cur = []
            else:
                cur.append(tok)
        if cur:
            lines.append(" ".join(cur))
        return "\n".join(lines) + ("\n" if toks and toks[-1] == EOS else "")

    # one token per line, line number = id
    def save(self, path) -> None:
        lines = [_escape(t) for t in self.itos]
        Path(path).write_text(f"#mode={self.mode}\n" + "\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        raw = Path(path).read_text(encoding="utf-8").split("\n")
        mode = "char"
        if raw and raw[0].startswith("#mode="):
            mode = raw[0][len("#mode="):]
            raw = raw[1:]
        if raw and raw[-1] == "":
            raw = raw[:-1]
        return cls([_unescape(t) for t in raw], mode)


def _escape(tok: str) -> str:
    return "".join(_ESCAPES.get(c, c) for c in tok)


def _unescape(s: str) -> str:
    out, i = [], 0
    while i < len(s):
        pair = s[i:i + 2]
        if pair in _UNESCAPES:
            out.append(_UNESCAPES[pair])
            i += 2
        else:
            out.append(s[i])
            i += 1
    return "".join(out)


def _word_tokens(text: str) -> list[str]:
    toks = []
    for line in text.split("\n"):
        words = line.split()
        if words:
            toks.extend(words)
            toks.append(EOS)
    return toks


def build_vocab(text: str, mode: str = "char", max_size: int | None = None) -> Vocab:
    """Frequency-sorted vocabulary; ties broken lexicographically."""
    if not text:
        raise DataError("cannot build a vocabulary from empty text")
    if mode not in ("char", "word"):
        raise ParameterError(f"vocab mode must be 'char' or 'word', got {mode!r}")
    toks = list(text) if mode == "char" else _word_tokens(text)
    counts = Counter(t for t in toks if t not in SPECIALS)
    ranked = sorted(counts, key=lambda t: (-counts[t], t))
    if max_size is not None:
        if max_size < len(SPECIALS):
            raise ParameterError(f"max_size must be >= {len(SPECIALS)}")
        ranked = ranked[:max_size - len(SPECIALS)]
    return Vocab(list(SPECIALS) + ranked, mode)


def read_corpus(path) -> str:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"corpus file not found: {p}")
    try:
        return p.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise DataError(f"corpus {p} is not valid UTF-8: {exc}") from None


class BatchStream:
    """Token ids split into ``batch`` contiguous lanes, read ``bptt`` steps at a time.

    Lane ``b`` holds tokens ``[b*L, (b+1)*L)`` with ``L = N // batch``; the
    last ``N mod batch`` tokens are dropped.
    """

    def __init__(self, ids, batch: int, bptt: int):
        ids = np.asarray(ids, dtype=np.int64)
        if batch < 1 or bptt < 1:
            raise ParameterError("batch and bptt must be positive")
        lane_len = ids.shape[0] // batch
        if lane_len < 2:
            raise DataError(f"corpus of {ids.shape[0]} tokens too short for {batch} lanes")
        self.batch = batch
        self.bptt = bptt
        self.n_tokens = int(ids.shape[0])
        self.lanes = ids[:lane_len * batch].reshape(batch, lane_len)
        self.dropped_tokens = self.n_tokens - lane_len * batch
        self.cursor = 0

    @property
    def lane_length(self) -> int:
        return self.lanes.shape[1]

    @property
    def tokens_per_epoch(self) -> int:
        return (self.lane_length - 1) * self.batch

    def reset(self) -> None:
        self.cursor = 0

    def next_window(self):
        """``(inputs [T, B], targets [T, B])`` or ``None`` at the end of the epoch."""
        stop = self.lane_length - 1
        if self.cursor >= stop:
            return None
        t = min(self.bptt, stop - self.cursor)
        inputs = self.lanes[:, self.cursor:self.cursor + t].T.copy()
        targets = self.lanes[:, self.cursor + 1:self.cursor + t + 1].T.copy()
        self.cursor += t
        return inputs, targets

    def __iter__(self):
        self.reset()
        while (w := self.next_window()) is not None:
            yield w
