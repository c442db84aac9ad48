"""Time BPE merge learning and encoding with the compiled and pure-Python kernels.

    python benchmarks/bench_bpe.py [--words 20000] [--merges 2000] [--repeat 3]
"""

from __future__ import annotations

import argparse
import random
import time
from collections import Counter

from babylab import _kernels
from babylab.tokenizer import N_BYTES, SPECIAL_NAMES

OFFSET = len(SPECIAL_NAMES)


def synthetic_table(n_words: int, seed: int = 0) -> tuple[list[list[int]], list[int]]:
    rng = random.Random(seed)
    letters = "aeioulnrstcdmpgv"
    counts: Counter[str] = Counter()
    while len(counts) < n_words:
        w = " " + "".join(rng.choice(letters) for _ in range(rng.randint(2, 10)))
        counts[w] += rng.randint(1, 50)
    words = [[b + OFFSET for b in w.encode()] for w in counts]
    return words, list(counts.values())


def best_of(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--words", type=int, default=20_000)
    ap.add_argument("--merges", type=int, default=2_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    words, counts = synthetic_table(args.words)
    impls = _kernels.implementations()
    if "cython" not in impls:
        print("compiled kernel not built; timing the Python kernel only")
    results = {}
    for name, mod in impls.items():
        merges = mod.learn_merges(words, counts, args.merges, OFFSET + N_BYTES)
        ranks = {pair: OFFSET + N_BYTES + i for i, pair in enumerate(merges)}
        t_learn = best_of(lambda: mod.learn_merges(words, counts, args.merges, OFFSET + N_BYTES), args.repeat)
        t_apply = best_of(lambda: [mod.apply_merges(w, ranks) for w in words], args.repeat)
        results[name] = merges
        print(f"{name:>7}: learn {t_learn * 1e3:9.1f} ms   apply {t_apply * 1e3:9.1f} ms   "
              f"({len(merges)} merges, {len(words)} words)")
    if len(results) == 2:
        same = results["cython"] == results["python"]
        print(f"merge lists identical: {same}")


if __name__ == "__main__":
    main()
