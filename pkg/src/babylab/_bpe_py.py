"""Pure-Python BPE kernels.

Reference implementation of the two hot loops of the tokenizer. The compiled
module ``_bpe_cy`` must return identical results for identical inputs.
"""

from __future__ import annotations

import heapq
from collections import defaultdict

IMPLEMENTATION = "python"


def _merge_word(word: list[int], a: int, b: int, new_id: int) -> list[int]:
    out = []
    i = 0
    n = len(word)
    while i < n:
        if i + 1 < n and word[i] == a and word[i + 1] == b:
            out.append(new_id)
            i += 2
        else:
            out.append(word[i])
            i += 1
    return out


def learn_merges(
    words: list[list[int]], counts: list[int], n_merges: int, next_id: int
) -> list[tuple[int, int]]:
    """Greedy pair merging over a word-frequency table.

    Each round merges the most frequent adjacent pair; on frequency ties the
    lexicographically smallest ``(left, right)`` id pair wins. Stops early
    when no pair is left, so callers must check the returned length.
    """
    words = [list(w) for w in words]
    pair_counts: dict[tuple[int, int], int] = defaultdict(int)
    where: dict[tuple[int, int], set[int]] = defaultdict(set)
    for wi, (w, c) in enumerate(zip(words, counts)):
        for p in zip(w, w[1:]):
            pair_counts[p] += c
            where[p].add(wi)

    heap = [(-c, p[0], p[1]) for p, c in pair_counts.items() if c > 0]
    heapq.heapify(heap)

    merges: list[tuple[int, int]] = []
    while len(merges) < n_merges and heap:
        neg, a, b = heapq.heappop(heap)
        if pair_counts.get((a, b), 0) != -neg or neg == 0:
            continue
        new_id = next_id + len(merges)
        merges.append((a, b))
        touched = set()
        for wi in sorted(where.pop((a, b), ())):
            w = words[wi]
            c = counts[wi]
            merged = _merge_word(w, a, b, new_id)
            if len(merged) == len(w):
                continue
            for p in zip(w, w[1:]):
                pair_counts[p] -= c
                touched.add(p)
            for p in zip(merged, merged[1:]):
                pair_counts[p] += c
                where[p].add(wi)
                touched.add(p)
            words[wi] = merged
        for p in touched:
            c = pair_counts[p]
            if c > 0:
                heapq.heappush(heap, (-c, p[0], p[1]))
            else:
                del pair_counts[p]
    return merges


def apply_merges(word: list[int], ranks: dict[tuple[int, int], int]) -> list[int]:
    """Encode one pre-token: repeatedly merge the pair with the smallest merged id."""
    word = list(word)
    while len(word) > 1:
        best = None
        best_pos = -1
        for i in range(len(word) - 1):
            r = ranks.get((word[i], word[i + 1]))
            if r is not None and (best is None or r < best):
                best = r
                best_pos = i
        if best is None:
            break
        a, b = word[best_pos], word[best_pos + 1]
        word = _merge_word(word, a, b, best)
    return word
