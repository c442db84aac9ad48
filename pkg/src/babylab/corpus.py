"""Corpus manifests, word budgets and token-block streams.

A word is a whitespace-delimited token containing at least one letter or
digit; punctuation-only tokens do not count.
"""

from __future__ import annotations

import json
import math
import os
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tokenizer import TokenizerModel

CATEGORIES = ("child-directed-speech", "interaction-transcript", "media-transcript")
WORDS_PER_YEAR = 10_000_000
DECLARED_TOLERANCE = 0.02
BUDGET_SLACK = 1.05


class ManifestError(ValueError):
    pass


def count_words(text: str) -> int:
    return sum(1 for tok in text.split() if any(ch.isalnum() for ch in tok))


@dataclass
class Source:
    path: str
    category: str
    declared_words: int | None = None


@dataclass
class CorpusManifest:
    sources: list[Source]
    target_budget: int
    words_per_year: int = WORDS_PER_YEAR
    epochs: int = 2
    root: Path = field(default=Path("."), repr=False)

    def resolve(self, source: Source) -> Path:
        p = Path(source.path)
        return p if p.is_absolute() else self.root / p

    @classmethod
    def from_dict(cls, data: dict, root: str | os.PathLike = ".") -> "CorpusManifest":
        try:
            sources = [Source(**s) for s in data.get("sources", [])]
            manifest = cls(
                sources=sources,
                target_budget=int(data["target_budget"]),
                words_per_year=int(data.get("words_per_year", WORDS_PER_YEAR)),
                epochs=int(data.get("epochs", 2)),
                root=Path(root),
            )
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"malformed corpus manifest: {exc}") from None
        for s in manifest.sources:
            if s.category not in CATEGORIES:
                raise ManifestError(f"source {s.path}: unknown category {s.category!r}")
        if manifest.words_per_year <= 0:
            raise ManifestError("words_per_year must be positive")
        return manifest

    @classmethod
    def load(cls, path: str | os.PathLike) -> "CorpusManifest":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh), root=path.parent)

    def read_lines(self) -> list[str]:
        """All non-empty utterances, source by source."""
        lines: list[str] = []
        for s in self.sources:
            with open(self.resolve(s), encoding="utf-8") as fh:
                lines.extend(line.strip() for line in fh if line.strip())
        return lines

    @property
    def declared_total(self) -> int:
        return sum(s.declared_words or 0 for s in self.sources)


def simulated_age_years(total_words: int, epochs: int, words_per_year: int = WORDS_PER_YEAR) -> float:
    return total_words * epochs / words_per_year


@dataclass
class BudgetReport:
    total_words: int
    per_category: dict[str, int]
    simulated_age_years: float
    declared_words: int
    declared_age_years: float
    over_budget: bool
    flags: list[str]
    errors: dict[str, str]

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _count_source(path: Path) -> int:
    with open(path, encoding="utf-8") as fh:
        return sum(count_words(line) for line in fh)


def validate_budget(manifest: CorpusManifest, workers: int = 4) -> BudgetReport:
    """Count every source and compare against declared sizes and the target budget.

    Unreadable sources become entries in ``errors``; the report is still produced.
    """
    per_category = {c: 0 for c in CATEGORIES}
    flags: list[str] = []
    errors: dict[str, str] = {}
    paths = [manifest.resolve(s) for s in manifest.sources]

    def attempt(p: Path):
        try:
            return _count_source(p), None
        except (OSError, UnicodeDecodeError) as exc:
            return None, str(exc)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(attempt, paths))

    total = 0
    for source, (counted, err) in zip(manifest.sources, results):
        if err is not None:
            errors[source.path] = err
            continue
        total += counted
        per_category[source.category] += counted
        declared = source.declared_words
        if declared is not None and abs(counted - declared) > DECLARED_TOLERANCE * declared:
            flags.append(f"{source.path}: counted {counted} words, declared {declared}")
    over = total > BUDGET_SLACK * manifest.target_budget
    if over:
        flags.append(f"over budget: {total} words > {BUDGET_SLACK} x {manifest.target_budget}")
    return BudgetReport(
        total_words=total,
        per_category=per_category,
        simulated_age_years=simulated_age_years(total, manifest.epochs, manifest.words_per_year),
        declared_words=manifest.declared_total,
        declared_age_years=simulated_age_years(manifest.declared_total, manifest.epochs, manifest.words_per_year),
        over_budget=over,
        flags=flags,
        errors=errors,
    )


@dataclass
class TokenStream:
    """Fixed-length token blocks plus what the trainer needs to know about them."""

    blocks: np.ndarray  # (n_blocks, block_length) int64
    pad_id: int
    mask_id: int
    bos_id: int
    eos_id: int
    vocab_size: int
    special_ids: tuple[int, ...]
    n_tokens: int
    words: int = 0
    seed: int = 0

    @property
    def block_length(self) -> int:
        return int(self.blocks.shape[1])

    def __len__(self) -> int:
        return int(self.blocks.shape[0])


def documents_to_stream(documents: list[str], tokenizer: TokenizerModel, block_length: int,
                        seed: int = 0, max_length: int | None = None) -> TokenStream:
    """Shuffle documents with ``seed``, wrap each as ``<s> ... </s>``, concatenate and chunk.

    The last block is right-padded with the pad id.
    """
    if block_length < 1:
        raise ValueError("block_length must be positive")
    if max_length is not None and block_length > max_length:
        raise ValueError(f"block_length {block_length} exceeds the model's max_length {max_length}")
    order = list(range(len(documents)))
    random.Random(seed).shuffle(order)
    ids: list[int] = []
    words = 0
    for i in order:
        ids.append(tokenizer.bos_id)
        ids.extend(tokenizer.encode(documents[i]))
        ids.append(tokenizer.eos_id)
        words += count_words(documents[i])
    n_blocks = math.ceil(len(ids) / block_length)
    blocks = np.full((n_blocks, block_length), tokenizer.pad_id, dtype=np.int64)
    flat = blocks.reshape(-1)
    flat[: len(ids)] = ids
    return TokenStream(
        blocks=blocks,
        pad_id=tokenizer.pad_id,
        mask_id=tokenizer.mask_id,
        bos_id=tokenizer.bos_id,
        eos_id=tokenizer.eos_id,
        vocab_size=tokenizer.vocab_size,
        special_ids=tuple(sorted(tokenizer.special_ids)),
        n_tokens=len(ids),
        words=words,
        seed=seed,
    )


def build_stream(manifest: CorpusManifest, tokenizer: TokenizerModel, block_length: int,
                 seed: int = 0, max_length: int | None = None) -> TokenStream:
    """Each utterance line of every source is one document."""
    return documents_to_stream(manifest.read_lines(), tokenizer, block_length, seed, max_length)
