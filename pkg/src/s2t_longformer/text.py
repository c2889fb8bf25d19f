"""Character-level vocabulary and tokenization for transcripts/translations."""

from __future__ import annotations

from collections import Counter

import numpy as np

from .errors import DataError

PAD = 0
BOS = 1
EOS = 2
UNK = 3
N_RESERVED = 4


class Vocabulary:
    """Dense, stable id space: 4 reserved ids then characters sorted by
    descending frequency, ties broken by codepoint."""

    def __init__(self, symbols):
        self.symbols = list(symbols)
        if len(set(self.symbols)) != len(self.symbols):
            raise DataError("vocabulary has duplicate symbols")
        self._to_id = {s: i + N_RESERVED for i, s in enumerate(self.symbols)}

    @property
    def size(self):
        return len(self.symbols) + N_RESERVED

    def encode(self, text):
        """text -> [BOS, ids..., EOS]; unseen characters map to UNK."""
        ids = [BOS] + [self._to_id.get(c, UNK) for c in text] + [EOS]
        return np.asarray(ids, dtype=np.intp)

    def decode(self, ids):
        """ids -> text, skipping every reserved id."""
        return "".join(
            self.symbols[i - N_RESERVED] for i in np.asarray(ids).tolist() if i >= N_RESERVED
        )

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for s in self.symbols:
                f.write(s + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls([line.rstrip("\n") for line in f if line != "\n" and line != ""])


def build_vocab(texts):
    """Character inventory of a corpus, ordered by frequency then codepoint.
    Deterministic: rebuilding from the same corpus yields an identical file."""
    counts = Counter()
    n_texts = 0
    for text in texts:
        n_texts += 1
        counts.update(text)
    if n_texts == 0:
        raise DataError("cannot build a vocabulary from an empty corpus")
    ordered = sorted(counts, key=lambda c: (-counts[c], ord(c)))
    return Vocabulary(ordered)
