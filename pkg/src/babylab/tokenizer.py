"""Byte-level BPE tokenizer.

Ids are laid out as: the five specials, then the 256 byte tokens, then one id
per learned merge in merge order. Text is NFC-normalized on the way in and on
the way out; casing is preserved.
"""

from __future__ import annotations

import json
import os
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable

from . import _kernels

SPECIAL_NAMES = ("pad", "unk", "mask", "bos", "eos")
SPECIAL_TEXT = {
    "pad": "<pad>",
    "unk": "<unk>",
    "mask": "<mask>",
    "bos": "<s>",
    "eos": "</s>",
}
N_BYTES = 256
MIN_VOCAB_SIZE = N_BYTES + len(SPECIAL_NAMES)

# GPT-2 style pre-tokenization with stdlib ``re``: a leading space sticks to the
# following word, digits and punctuation runs are split off.
PRETOKENIZE = re.compile(r" ?[^\W\d_]+| ?\d+| ?[^\s\w]+| ?_+|\s+(?!\S)|\s+")


def _bytes_to_unicode() -> dict[int, str]:
    """Printable stand-in character for every byte (the GPT-2 table)."""
    bs = (
        list(range(ord("!"), ord("~") + 1))
        + list(range(ord("¡"), ord("¬") + 1))
        + list(range(ord("®"), ord("ÿ") + 1))
    )
    cs = bs[:]
    n = 0
    for b in range(256):
        if b not in bs:
            bs.append(b)
            cs.append(256 + n)
            n += 1
    return dict(zip(bs, (chr(c) for c in cs)))


BYTE_TO_CHAR = _bytes_to_unicode()
CHAR_TO_BYTE = {c: b for b, c in BYTE_TO_CHAR.items()}


def normalize(text: str) -> str:
    return unicodedata.normalize("NFC", text)


def pretokenize(text: str) -> list[str]:
    return PRETOKENIZE.findall(text)


class TokenizerError(ValueError):
    pass


@dataclass(frozen=True)
class TokenizerModel:
    """A trained vocabulary. Immutable; safe to share between threads."""

    merges: tuple[tuple[int, int], ...]
    specials: dict[str, int] = field(
        default_factory=lambda: {name: i for i, name in enumerate(SPECIAL_NAMES)}
    )

    def __post_init__(self) -> None:
        if sorted(self.specials) != sorted(SPECIAL_NAMES):
            raise TokenizerError(f"specials must be exactly {SPECIAL_NAMES}")
        if sorted(self.specials.values()) != list(range(len(SPECIAL_NAMES))):
            raise TokenizerError("special ids must be distinct and occupy 0..4")
        for i, (a, b) in enumerate(self.merges):
            if not (0 <= a < self.byte_offset + N_BYTES + i and 0 <= b < self.byte_offset + N_BYTES + i):
                raise TokenizerError(f"merge {i} refers to an id that does not exist yet")
            if a < self.byte_offset or b < self.byte_offset:
                raise TokenizerError(f"merge {i} uses a special token")
        # bytes for every id, built once
        pieces: list[bytes] = [SPECIAL_TEXT[n].encode() for n in self._special_order()]
        pieces += [bytes([b]) for b in range(N_BYTES)]
        for a, b in self.merges:
            pieces.append(pieces[a] + pieces[b])
        object.__setattr__(self, "_pieces", tuple(pieces))
        ranks = {pair: self.merge_offset + i for i, pair in enumerate(self.merges)}
        object.__setattr__(self, "_ranks", ranks)
        object.__setattr__(self, "_encode_word", lru_cache(maxsize=65536)(self._encode_word_uncached))

    def _special_order(self) -> list[str]:
        return sorted(self.specials, key=self.specials.__getitem__)

    @property
    def byte_offset(self) -> int:
        return len(SPECIAL_NAMES)

    @property
    def merge_offset(self) -> int:
        return self.byte_offset + N_BYTES

    @property
    def vocab_size(self) -> int:
        return self.merge_offset + len(self.merges)

    @property
    def pad_id(self) -> int:
        return self.specials["pad"]

    @property
    def unk_id(self) -> int:
        return self.specials["unk"]

    @property
    def mask_id(self) -> int:
        return self.specials["mask"]

    @property
    def bos_id(self) -> int:
        return self.specials["bos"]

    @property
    def eos_id(self) -> int:
        return self.specials["eos"]

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset(self.specials.values())

    def token_string(self, i: int) -> str:
        """Printable form of a token (byte tokens use the GPT-2 character table)."""
        if i < self.byte_offset:
            return SPECIAL_TEXT[self._special_order()[i]]
        return "".join(BYTE_TO_CHAR[b] for b in self._pieces[i])

    @property
    def vocab(self) -> dict[str, int]:
        return {self.token_string(i): i for i in range(self.vocab_size)}

    def token_bytes(self, i: int) -> bytes:
        return self._pieces[i]

    def _encode_word_uncached(self, word: str) -> tuple[int, ...]:
        ids = [b + self.byte_offset for b in word.encode("utf-8")]
        return tuple(_kernels.apply_merges(ids, self._ranks))

    def encode(self, text: str) -> list[int]:
        out: list[int] = []
        for word in pretokenize(normalize(text)):
            out.extend(self._encode_word(word))
        return out

    def encode_with_mask(self, text: str, mask: str = "<mask>") -> list[int]:
        """Encode ``text`` with every literal ``mask`` marker replaced by the mask id."""
        parts = text.split(mask)
        out: list[int] = []
        for i, part in enumerate(parts):
            if i:
                out.append(self.mask_id)
            # the masked word carries its own leading space
            if i < len(parts) - 1:
                part = part.rstrip()
            out.extend(self.encode(part))
        return out

    def decode(self, ids: Iterable[int]) -> str:
        chunks = []
        n = self.vocab_size
        for i in ids:
            i = int(i)
            if not 0 <= i < n:
                raise TokenizerError(f"token id {i} out of range [0, {n})")
            chunks.append(self._pieces[i])
        return normalize(b"".join(chunks).decode("utf-8", errors="replace"))

    # serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "vocab": self.vocab,
            "merges": [[self.token_string(a), self.token_string(b)] for a, b in self.merges],
            "specials": dict(self.specials),
            "normalization": "nfc",
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TokenizerModel":
        if data.get("normalization", "nfc") != "nfc":
            raise TokenizerError(f"unsupported normalization {data.get('normalization')!r}")
        specials = {k: int(v) for k, v in data["specials"].items()}
        base = cls(merges=(), specials=specials)
        lookup = base.vocab
        merges = []
        for i, (left, right) in enumerate(data["merges"]):
            try:
                pair = (lookup[left], lookup[right])
            except KeyError as exc:
                raise TokenizerError(f"merge {i} names unknown token {exc.args[0]!r}") from None
            merges.append(pair)
            lookup[left + right] = base.merge_offset + i
        tok = cls(merges=tuple(merges), specials=specials)
        vocab = data.get("vocab")
        if vocab is not None and vocab != tok.vocab:
            raise TokenizerError("stored vocab does not match the merge list")
        return tok

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, ensure_ascii=False, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "TokenizerModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def word_counts(corpus: str | Iterable[str]) -> Counter:
    if isinstance(corpus, str):
        corpus = [corpus]
    counts: Counter = Counter()
    for chunk in corpus:
        counts.update(pretokenize(normalize(chunk)))
    return counts


def train_tokenizer(corpus: str | Iterable[str], vocab_size: int) -> TokenizerModel:
    """Learn ``vocab_size - 261`` merges from ``corpus`` (a string or iterable of lines).

    Merges never cross pre-token boundaries. Raises ``TokenizerError`` when the
    requested size is below the 261-entry floor or the corpus runs out of pairs.
    """
    if vocab_size < MIN_VOCAB_SIZE:
        raise TokenizerError(
            f"vocab_size {vocab_size} is too small: the minimum feasible size is "
            f"{MIN_VOCAB_SIZE} ({N_BYTES} bytes + {len(SPECIAL_NAMES)} specials)"
        )
    counts = word_counts(corpus)
    if not counts:
        raise TokenizerError("cannot train a tokenizer on an empty corpus")
    # sorted for a deterministic word order independent of corpus iteration
    items = sorted(counts.items())
    offset = len(SPECIAL_NAMES)
    words = [[b + offset for b in w.encode("utf-8")] for w, _ in items]
    freqs = [c for _, c in items]
    n_merges = vocab_size - MIN_VOCAB_SIZE
    merges = _kernels.learn_merges(words, freqs, n_merges, MIN_VOCAB_SIZE)
    if len(merges) < n_merges:
        raise TokenizerError(
            f"corpus only supports {len(merges)} merges; vocab_size {vocab_size} "
            f"needs {n_merges} (largest feasible size is {MIN_VOCAB_SIZE + len(merges)})"
        )
    return TokenizerModel(merges=tuple((int(a), int(b)) for a, b in merges))
