"""Benchmark items and the five task protocols.

Multiple-choice items (idioms, sentence and lexical comprehension) are
scored by assembling ``"{stimulus}, cioè {option}."`` for every option and
picking the lowest perplexity. Minimal pairs compare the two sentences
directly. Completion items are generated (beam search for decoders, top-1
mask filling for encoders) and adjudicated against an answer key under
strict and loose scoring.
"""

from __future__ import annotations

import json
import math
import os
import re
import unicodedata
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Protocol, Sequence, runtime_checkable

TASKS = ("completion", "acceptability", "idiom", "sentence_comprehension", "lexical_comprehension")
SOURCE_TESTS = ("BVL", "TROG2", "TCGB2", "PPVT")
CONNECTIVE = "cioè"
MASK = "<mask>"
DEFAULT_BEAMS = 3
DEFAULT_MAX_NEW = 12


class ItemError(ValueError):
    pass


class ScorerError(RuntimeError):
    """A scorer could not answer one request; the item is recorded as errored."""


class ScorerUnavailable(RuntimeError):
    """The scorer cannot be reached at all; evaluation must abort."""


# items -------------------------------------------------------------------------


@dataclass(frozen=True)
class Completion:
    prompt_with_mask: str
    strict_answers: tuple[str, ...]
    loose_forms: tuple[str, ...]


@dataclass(frozen=True)
class MinimalPair:
    grammatical: str
    ungrammatical: str


@dataclass(frozen=True)
class MultipleChoice:
    stimulus: str
    options: tuple[str, ...]
    target_index: int


Payload = Completion | MinimalPair | MultipleChoice


@dataclass(frozen=True)
class BenchmarkItem:
    id: str
    task: str
    source_test: str
    payload: Payload
    structure_tag: str | None = None

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise ItemError(f"item {self.id}: unknown task {self.task!r}")
        if self.source_test not in SOURCE_TESTS:
            raise ItemError(f"item {self.id}: unknown source_test {self.source_test!r}")
        p = self.payload
        expected = {"completion": Completion, "acceptability": MinimalPair}.get(self.task, MultipleChoice)
        if not isinstance(p, expected):
            raise ItemError(f"item {self.id}: task {self.task} needs a {expected.__name__} payload")
        if isinstance(p, MultipleChoice):
            if not 3 <= len(p.options) <= 4:
                raise ItemError(f"item {self.id}: multiple choice needs 3 or 4 options, got {len(p.options)}")
            if not 0 <= p.target_index < len(p.options):
                raise ItemError(f"item {self.id}: target_index {p.target_index} out of range")
        if isinstance(p, Completion):
            if MASK not in p.prompt_with_mask:
                raise ItemError(f"item {self.id}: completion prompt has no {MASK}")
            if not p.strict_answers:
                raise ItemError(f"item {self.id}: completion needs at least one strict answer")
            for ans in p.strict_answers:
                if not loose_match(ans, p.loose_forms):
                    raise ItemError(f"item {self.id}: strict answer {ans!r} does not satisfy any loose form")

    def to_dict(self) -> dict:
        p = self.payload
        if isinstance(p, Completion):
            payload = {"type": "completion", "prompt_with_mask": p.prompt_with_mask,
                       "strict_answers": list(p.strict_answers), "loose_forms": list(p.loose_forms)}
        elif isinstance(p, MinimalPair):
            payload = {"type": "minimal_pair", "grammatical": p.grammatical, "ungrammatical": p.ungrammatical}
        else:
            payload = {"type": "multiple_choice", "stimulus": p.stimulus, "options": list(p.options),
                       "target_index": p.target_index}
        return {"id": self.id, "task": self.task, "source_test": self.source_test,
                "structure_tag": self.structure_tag, "payload": payload}

    @classmethod
    def from_dict(cls, data: dict) -> "BenchmarkItem":
        try:
            raw = data["payload"]
            kind = raw["type"]
            if kind == "completion":
                payload = Completion(raw["prompt_with_mask"], tuple(raw["strict_answers"]),
                                     tuple(raw["loose_forms"]))
            elif kind == "minimal_pair":
                payload = MinimalPair(raw["grammatical"], raw["ungrammatical"])
            elif kind == "multiple_choice":
                payload = MultipleChoice(raw["stimulus"], tuple(raw["options"]), int(raw["target_index"]))
            else:
                raise ItemError(f"item {data.get('id')}: unknown payload type {kind!r}")
            return cls(id=str(data["id"]), task=data["task"], source_test=data["source_test"],
                       payload=payload, structure_tag=data.get("structure_tag"))
        except KeyError as exc:
            raise ItemError(f"item {data.get('id', '?')}: missing field {exc.args[0]!r}") from None


def load_benchmark(path: str | os.PathLike) -> list[BenchmarkItem]:
    items = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                item = BenchmarkItem.from_dict(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ItemError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if item.id in seen:
                raise ItemError(f"{path}:{lineno}: duplicate item id {item.id!r}")
            seen.add(item.id)
            items.append(item)
    return items


# scorers -----------------------------------------------------------------------


@runtime_checkable
class Scorer(Protocol):
    """Anything that can score text. ``capabilities`` lists the supported ops."""

    name: str
    capabilities: frozenset[str]

    def nll(self, text: str) -> tuple[float, int]: ...

    def complete(self, prompt: str, beams: int, max_new: int) -> tuple[str, float]: ...

    def fill_mask(self, text: str, k: int) -> list[tuple[str, float]]: ...


def perplexity_of(scorer: Scorer, text: str) -> float:
    total, tokens = scorer.nll(text)
    if tokens <= 0 or not math.isfinite(total):
        raise ScorerError(f"scorer returned an unusable nll ({total}, {tokens} tokens)")
    return math.exp(total / tokens)


# result --------------------------------------------------------------------------


@dataclass
class TaskResult:
    item_id: str
    task: str
    source_test: str
    structure_tag: str | None = None
    chosen: int | str | None = None
    per_option_perplexity: list[float] | None = None
    correct: bool = False
    loose_correct: bool | None = None
    tie: bool = False
    error: str | None = None

    @property
    def errored(self) -> bool:
        return self.error is not None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TaskResult":
        return cls(**data)


def _result(item: BenchmarkItem, **kw) -> TaskResult:
    return TaskResult(item_id=item.id, task=item.task, source_test=item.source_test,
                      structure_tag=item.structure_tag, **kw)


# multiple choice ----------------------------------------------------------------------

_CONNECTIVE_RE = re.compile(r"\bcioè\b", re.IGNORECASE)


def assemble_choice_sentence(stimulus: str, option: str) -> str:
    """``"Un balcone" + "Cioè un terrazzino" -> "Un balcone, cioè un terrazzino."``"""
    stim = " ".join(stimulus.split()).rstrip(" .,;")
    opt = " ".join(option.split()).rstrip(" .")
    if not stim or not opt:
        raise ItemError("stimulus and option must be non-empty")
    if _CONNECTIVE_RE.search(stim):
        raise ItemError(f"stimulus already contains the connective: {stimulus!r}")
    m = re.match(r"cioè\b[\s,]*", opt, flags=re.IGNORECASE)
    body = opt[m.end():] if m else opt
    if not body:
        raise ItemError(f"option has nothing after the connective: {option!r}")
    if _CONNECTIVE_RE.search(body):
        raise ItemError(f"option contains a second connective: {option!r}")
    return f"{stim}, {CONNECTIVE} {body}."


def argmin_with_ties(values: Sequence[float]) -> tuple[int, bool]:
    """Index of the smallest value (lowest index on ties) and whether a tie occurred."""
    best = min(values)
    winners = [i for i, v in enumerate(values) if v == best]
    return winners[0], len(winners) > 1


def run_multiple_choice(scorer: Scorer, item: BenchmarkItem) -> TaskResult:
    p = item.payload
    assert isinstance(p, MultipleChoice)
    try:
        ppl = [perplexity_of(scorer, assemble_choice_sentence(p.stimulus, o)) for o in p.options]
    except (ScorerError, ItemError) as exc:
        return _result(item, error=str(exc))
    chosen, tie = argmin_with_ties(ppl)
    return _result(item, chosen=chosen, per_option_perplexity=ppl, correct=chosen == p.target_index, tie=tie)


def run_acceptability(scorer: Scorer, item: BenchmarkItem) -> TaskResult:
    p = item.payload
    assert isinstance(p, MinimalPair)
    try:
        good = perplexity_of(scorer, p.grammatical)
        bad = perplexity_of(scorer, p.ungrammatical)
    except ScorerError as exc:
        return _result(item, error=str(exc))
    tie = good == bad
    return _result(item, chosen=0 if good < bad else 1, per_option_perplexity=[good, bad],
                   correct=good < bad, tie=tie)


# completion ---------------------------------------------------------------------------


def normalize_words(text: str) -> list[str]:
    """Lower-cased NFC words with surrounding punctuation stripped."""
    text = unicodedata.normalize("NFC", text).lower()
    words = []
    for w in text.split():
        w = w.strip(".,;:!?\"'()[]«»…-–—")
        if w:
            words.append(w)
    return words


def _contains(haystack: list[str], needle: list[str]) -> bool:
    n = len(needle)
    return n > 0 and any(haystack[i:i + n] == needle for i in range(len(haystack) - n + 1))


def strict_match(generation: str, answers: Iterable[str]) -> bool:
    gen = normalize_words(generation)
    for ans in answers:
        a = normalize_words(ans)
        if a and gen[: len(a)] == a:
            return True
    return False


def loose_match(generation: str, forms: Iterable[str]) -> bool:
    gen = normalize_words(generation)
    return any(_contains(gen, normalize_words(f)) for f in forms)


def adjudicate(generation: str, item: BenchmarkItem, first_piece=None) -> tuple[bool, bool]:
    """(strict, loose) verdicts for a generated continuation.

    With ``first_piece`` (encoder mask filling) only the first subword of each
    answer is compared, and strict answers also count as loose forms.
    """
    p = item.payload
    assert isinstance(p, Completion)
    if first_piece is None:
        loose = loose_match(generation, p.loose_forms)
        # a generation without any accepted verb form is wrong under both schemes
        strict = loose and strict_match(generation, p.strict_answers)
        return strict, loose
    cand = normalize_words(generation)
    cand = cand[0] if cand else ""
    if not cand:
        return False, False

    def hits(forms):
        return any(normalize_words(first_piece(f))[:1] == [cand] for f in forms)

    strict = hits(p.strict_answers)
    loose = strict or hits(p.loose_forms)
    return strict, loose


def run_completion(scorer: Scorer, item: BenchmarkItem, beams: int = DEFAULT_BEAMS,
                   max_new: int = DEFAULT_MAX_NEW) -> TaskResult:
    p = item.payload
    assert isinstance(p, Completion)
    try:
        if "complete" in scorer.capabilities:
            prompt = p.prompt_with_mask.split(MASK, 1)[0].rstrip()
            text, _ = scorer.complete(prompt, beams, max_new)
            strict, loose = adjudicate(text, item)
        elif "fill_mask" in scorer.capabilities:
            candidates = scorer.fill_mask(p.prompt_with_mask, 1)
            if not candidates:
                raise ScorerError("fill_mask returned no candidates")
            text = candidates[0][0]
            piece = getattr(scorer, "first_piece", None) or _first_word
            strict, loose = adjudicate(text, item, first_piece=piece)
        else:
            raise ScorerError(f"scorer {scorer.name} supports neither completion nor mask filling")
    except ScorerError as exc:
        return _result(item, error=str(exc))
    return _result(item, chosen=text.strip(), correct=strict, loose_correct=loose)


def _first_word(text: str) -> str:
    words = text.split()
    return words[0] if words else ""


# benchmark ------------------------------------------------------------------------------


def run_item(scorer: Scorer, item: BenchmarkItem, beams: int = DEFAULT_BEAMS) -> TaskResult:
    if item.task == "completion":
        return run_completion(scorer, item, beams=beams)
    if item.task == "acceptability":
        return run_acceptability(scorer, item)
    return run_multiple_choice(scorer, item)


def _ratio(results: list[TaskResult], attr: str = "correct") -> float | None:
    scored = [r for r in results if not r.errored]
    if not scored:
        return None
    return sum(bool(getattr(r, attr)) for r in scored) / len(scored)


@dataclass
class BenchmarkResult:
    results: list[TaskResult]
    accuracy: dict[str, float | None]
    accuracy_by_source: dict[str, float | None]
    accuracy_by_structure: dict[str, float | None]
    completion_strict: float | None
    completion_loose: float | None
    errored: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["results"] = [r.to_dict() for r in self.results]
        return d


def apply_overrides(results: list[TaskResult], overrides: dict[str, dict]) -> None:
    """Manual strict/loose verdicts for completion items, keyed by item id."""
    for r in results:
        o = overrides.get(r.item_id)
        if o is None or r.task != "completion" or r.errored:
            continue
        if "strict" in o:
            r.correct = bool(o["strict"])
        if "loose" in o:
            r.loose_correct = bool(o["loose"])
        if r.correct and r.loose_correct is False:
            raise ItemError(f"override for {r.item_id} makes strict correct but loose incorrect")


def summarize(results: list[TaskResult]) -> BenchmarkResult:
    results = sorted(results, key=lambda r: r.item_id)
    by_task: dict[str, list[TaskResult]] = {}
    by_source: dict[str, list[TaskResult]] = {}
    by_tag: dict[str, list[TaskResult]] = {}
    for r in results:
        by_task.setdefault(r.task, []).append(r)
        by_source.setdefault(f"{r.task}/{r.source_test}", []).append(r)
        if r.structure_tag:
            by_tag.setdefault(r.structure_tag, []).append(r)
    completion = by_task.get("completion", [])
    return BenchmarkResult(
        results=results,
        accuracy={t: _ratio(v) for t, v in sorted(by_task.items())},
        accuracy_by_source={k: _ratio(v) for k, v in sorted(by_source.items())},
        accuracy_by_structure={k: _ratio(v) for k, v in sorted(by_tag.items())},
        completion_strict=_ratio(completion) if completion else None,
        completion_loose=_ratio(completion, "loose_correct") if completion else None,
        errored=[r.item_id for r in results if r.errored],
    )


def run_benchmark(scorer: Scorer, items: Sequence[BenchmarkItem], workers: int = 1,
                  beams: int = DEFAULT_BEAMS, overrides: dict[str, dict] | None = None) -> BenchmarkResult:
    """Run every item; errored items are left out of accuracy denominators.

    Items are independent, so with ``workers > 1`` they run on a thread pool;
    results are ordered by item id regardless.
    """
    if not items:
        raise ItemError("empty benchmark")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda it: run_item(scorer, it, beams), items))
    else:
        results = [run_item(scorer, it, beams) for it in items]
    if overrides:
        apply_overrides(results, overrides)
    return summarize(results)
