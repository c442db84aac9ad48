"""Raw scores, norm tables, age-equivalent bands and model ages.

Ages are handled in whole months; ``"5;6"`` is five years six months.
Band labels are closed on the side nearer zero: z = 1 is ``"0..+1SD"``,
z = 2 is ``"+1..+2SD"``, z = -1 is ``"-1..0SD"``, and z = 0 counts as
``"0..+1SD"``.
"""

from __future__ import annotations

import json
import math
import os
import re
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

from .corpus import WORDS_PER_YEAR

TROG_ITEMS = 80
TROG_BLOCK = 4
TROG_PASS = 3
TCGB_ITEMS = 74
TCGB_ERROR_POINTS = 0.5
PPVT_INTERVAL = 10

TESTS = ("BVL_completion", "BVL_acceptability", "BVL_idiom", "BVL_sentence", "BVL_lexical",
         "TROG2", "TCGB2", "PPVT")
KINDS = ("correct_count", "passed_blocks", "error_score", "interval")
LABELS = (">+2SD", "+1..+2SD", "0..+1SD", "-1..0SD", "-2..-1SD", "<-2SD")

# benchmark task -> norm-table name for items drawn from the BVL battery
BVL_TASKS = {
    "completion": "BVL_completion",
    "acceptability": "BVL_acceptability",
    "idiom": "BVL_idiom",
    "sentence_comprehension": "BVL_sentence",
    "lexical_comprehension": "BVL_lexical",
}


class NormError(ValueError):
    pass


class ScoringError(ValueError):
    pass


# ages --------------------------------------------------------------------------

_AGE = re.compile(r"^\s*(\d+)\s*;\s*(\d+)\s*$")


def parse_age(text: str) -> int:
    m = _AGE.match(str(text))
    if not m or int(m.group(2)) > 11:
        raise NormError(f"bad age {text!r}; expected 'Y;M' with M in 0..11")
    return int(m.group(1)) * 12 + int(m.group(2))


def format_age(months: int) -> str:
    return f"{months // 12};{months % 12}"


@dataclass(frozen=True, order=True)
class AgeRange:
    low: int  # months, inclusive
    high: int

    def __contains__(self, months: float) -> bool:
        return self.low <= months < self.high + 1

    def __str__(self) -> str:
        return f"{format_age(self.low)}-{format_age(self.high)}"

    @classmethod
    def parse(cls, text: str) -> "AgeRange":
        lo, sep, hi = str(text).partition("-")
        if not sep:
            raise NormError(f"bad age range {text!r}; expected 'Y;M-Y;M'")
        return cls(parse_age(lo), parse_age(hi))


# norm tables ----------------------------------------------------------------------


@dataclass(frozen=True)
class NormBand:
    ages: AgeRange
    mean: float
    sd: float


@dataclass(frozen=True)
class NormTable:
    test: str
    bands: tuple[NormBand, ...]
    orientation: str = "higher_better"

    def __post_init__(self) -> None:
        if self.orientation not in ("higher_better", "lower_better"):
            raise NormError(f"{self.test}: orientation must be higher_better or lower_better")
        if not self.bands:
            raise NormError(f"{self.test}: no bands")
        for b in self.bands:
            if b.ages.high < b.ages.low:
                raise NormError(f"{self.test}: band {b.ages} ends before it starts")
            if not (b.sd > 0 and math.isfinite(b.sd)) or not math.isfinite(b.mean):
                raise NormError(f"{self.test}: band {b.ages} needs a finite mean and sd > 0")
        for a, b in zip(self.bands, self.bands[1:]):
            if b.ages.low <= a.ages.high:
                raise NormError(f"{self.test}: bands {a.ages} and {b.ages} overlap or are unsorted")

    @property
    def sign(self) -> int:
        return 1 if self.orientation == "higher_better" else -1

    @property
    def youngest(self) -> NormBand:
        return self.bands[0]

    @property
    def oldest(self) -> NormBand:
        return self.bands[-1]

    def band(self, ages: AgeRange) -> NormBand:
        for b in self.bands:
            if b.ages == ages:
                return b
        raise NormError(f"{self.test}: no norm band {ages}")

    def band_for_age(self, months: float) -> NormBand | None:
        """The band containing ``months``; in a gap between bands, the one before it."""
        found = None
        for b in self.bands:
            if b.ages.low <= months:
                found = b
        return found

    @classmethod
    def from_dict(cls, data: dict) -> "NormTable":
        try:
            bands = tuple(
                NormBand(AgeRange(parse_age(b["age_low"]), parse_age(b["age_high"])),
                         float(b["mean"]), float(b["sd"]))
                for b in data["bands"]
            )
            return cls(str(data["test"]), bands, data.get("orientation", "higher_better"))
        except (KeyError, TypeError) as exc:
            raise NormError(f"malformed norm table: missing or bad field {exc}") from None

    def to_dict(self) -> dict:
        return {"test": self.test, "orientation": self.orientation, "bands": [
            {"age_low": format_age(b.ages.low), "age_high": format_age(b.ages.high),
             "mean": b.mean, "sd": b.sd} for b in self.bands]}


def load_norms(path: str | os.PathLike) -> dict[str, NormTable]:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise NormError(f"{path}: invalid JSON ({exc.msg})") from None
    tables = data.get("tables") if isinstance(data, dict) else data
    if not isinstance(tables, list):
        raise NormError(f"{path}: expected a list of norm tables")
    out: dict[str, NormTable] = {}
    for t in tables:
        table = NormTable.from_dict(t)
        if table.test in out:
            raise NormError(f"{path}: duplicate table for {table.test}")
        out[table.test] = table
    return out


# raw scores ----------------------------------------------------------------------------


@dataclass(frozen=True)
class RawScore:
    test: str
    value: float
    kind: str
    interval: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ScoringError(f"unknown raw score kind {self.kind!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def _outcomes(results) -> list[bool]:
    out = []
    for r in results:
        if isinstance(r, bool):
            out.append(r)
        elif getattr(r, "error", None) is not None:
            raise ScoringError(f"item {r.item_id} errored; raw scores need complete results")
        else:
            out.append(bool(r.correct))
    return out


def raw_count(results: Sequence, test: str | None = None) -> RawScore:
    """Number of correct responses. PPVT also carries the ``[v, v + 10]`` interval."""
    tests = {getattr(r, "source_test", None) for r in results} - {None}
    tasks = {getattr(r, "task", None) for r in results} - {None}
    if len(tests) > 1 or len(tasks) > 1:
        raise ScoringError(f"raw_count needs results from one test, got {sorted(tests | tasks)}")
    if test is None:
        src = next(iter(tests), None)
        if src == "PPVT":
            test = "PPVT"
        elif src == "BVL" and tasks:
            test = BVL_TASKS[next(iter(tasks))]
        else:
            raise ScoringError("cannot tell which test these results belong to")
    value = float(sum(_outcomes(results)))
    if test == "PPVT":
        return RawScore(test, value, "interval", (value, value + PPVT_INTERVAL))
    return RawScore(test, value, "correct_count")


def raw_trog(results: Sequence) -> RawScore:
    """Blocks of four with at least three correct, over the 80 items in test order."""
    ok = _outcomes(results)
    if len(ok) != TROG_ITEMS:
        raise ScoringError(f"TROG-2 scoring needs {TROG_ITEMS} results, got {len(ok)}")
    passed = sum(sum(ok[i:i + TROG_BLOCK]) >= TROG_PASS for i in range(0, TROG_ITEMS, TROG_BLOCK))
    return RawScore("TROG2", float(passed), "passed_blocks")


def raw_tcgb(results: Sequence) -> RawScore:
    """Half a point per error over the 74 items; lower is better."""
    ok = _outcomes(results)
    if len(ok) != TCGB_ITEMS:
        raise ScoringError(f"TCGB-2 scoring needs {TCGB_ITEMS} results, got {len(ok)}")
    return RawScore("TCGB2", TCGB_ERROR_POINTS * ok.count(False), "error_score")


# age equivalents -----------------------------------------------------------------------


def band_label(z: float) -> str:
    if z > 2:
        return ">+2SD"
    if z > 1:
        return "+1..+2SD"
    if z >= 0:
        return "0..+1SD"
    if z >= -1:
        return "-1..0SD"
    if z >= -2:
        return "-2..-1SD"
    return "<-2SD"


def z_score(value: float, band: NormBand, orientation: str = "higher_better") -> float:
    z = (value - band.mean) / band.sd
    return -z if orientation == "lower_better" else z


@dataclass(frozen=True)
class AgeEquivalentResult:
    z: float
    band_label: str
    typical: bool
    equivalent_age_band: str | None = None
    reference_band: str | None = None
    z_interval: tuple[float, float] | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def age_equivalent(raw: RawScore, band: AgeRange | str, norms: NormTable) -> AgeEquivalentResult:
    """z against the norm band for ``band``; the sign flips for lower-is-better tests.

    Interval scores are evaluated at both ends and report the end with the
    smaller |z| (the conservative reading) alongside the z interval.
    """
    ages = AgeRange.parse(band) if isinstance(band, str) else band
    ref = norms.band(ages)
    if raw.interval is not None:
        zs = [z_score(v, ref, norms.orientation) for v in raw.interval]
        z = min(zs, key=abs)
        z_interval = (min(zs), max(zs))
    else:
        z = z_score(raw.value, ref, norms.orientation)
        z_interval = None
    return AgeEquivalentResult(
        z=z, band_label=band_label(z), typical=abs(z) <= 1,
        equivalent_age_band=equivalent_linguistic_age(raw, norms),
        reference_band=str(ref.ages), z_interval=z_interval,
    )


def equivalent_linguistic_age(raw: RawScore | float, norms: NormTable) -> str:
    """The band whose mean the score is closest to, in SD units (younger on ties).

    A score more than 1 SD below every band reads ``"< youngest"`` (``"< 4;0"``).
    """
    value = raw.value if isinstance(raw, RawScore) else float(raw)
    zs = [z_score(value, b, norms.orientation) for b in norms.bands]
    if all(z < -1 for z in zs):
        return f"< {format_age(norms.youngest.ages.low)}"
    best = min(range(len(zs)), key=lambda i: (abs(zs[i]), i))
    return str(norms.bands[best].ages)


# model age ----------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelAge:
    years: float
    band: str
    reference_band: str
    adult: bool = False
    pre_norm: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def model_age(training_tokens: int, norms: NormTable, words_per_year: int = WORDS_PER_YEAR) -> ModelAge:
    """Place a model on the age grid of ``norms`` by its cumulative training words.

    Past the oldest band the model is an ``"adult"`` scored against the oldest
    band; below the youngest it is ``pre_norm`` and scored against the youngest.
    """
    if training_tokens < 0:
        raise ScoringError("training_tokens must be >= 0")
    if words_per_year <= 0:
        raise ScoringError("words_per_year must be positive")
    years = training_tokens / words_per_year
    months = years * 12
    if months >= norms.oldest.ages.high + 1:
        return ModelAge(years, "adult", str(norms.oldest.ages), adult=True)
    if months < norms.youngest.ages.low:
        return ModelAge(years, str(norms.youngest.ages), str(norms.youngest.ages), pre_norm=True)
    b = norms.band_for_age(months)
    return ModelAge(years, str(b.ages), str(b.ages))


# benchmark-level scoring ------------------------------------------------------------------


@dataclass
class TestScore:
    test: str
    raw: RawScore | None = None
    model_age: ModelAge | None = None
    age_equivalent: AgeEquivalentResult | None = None
    unavailable: str | None = None

    def to_dict(self) -> dict:
        return {
            "test": self.test,
            "raw": self.raw.to_dict() if self.raw else None,
            "model_age": self.model_age.to_dict() if self.model_age else None,
            "age_equivalent": self.age_equivalent.to_dict() if self.age_equivalent else None,
            "unavailable": self.unavailable,
        }


def _group_results(results: Iterable) -> dict[str, list]:
    groups: dict[str, list] = {}
    for r in sorted(results, key=lambda r: r.item_id):
        if r.source_test == "BVL":
            key = BVL_TASKS[r.task]
        else:
            key = r.source_test
        groups.setdefault(key, []).append(r)
    return groups


def _raw_for(test: str, results: list) -> RawScore:
    if test == "TROG2":
        return raw_trog(results)
    if test == "TCGB2":
        return raw_tcgb(results)
    return raw_count(results, test)


def score_tests(results: Iterable, norms: dict[str, NormTable], training_words: int | None,
                words_per_year: int = WORDS_PER_YEAR) -> list[TestScore]:
    """Raw score, model age and age equivalent for every test the results cover.

    A test whose results are incomplete, errored or lack a norm table is
    reported with the reason in ``unavailable`` instead of a number.
    """
    out = []
    for test, group in sorted(_group_results(results).items(), key=lambda kv: TESTS.index(kv[0])):
        score = TestScore(test)
        try:
            score.raw = _raw_for(test, group)
        except ScoringError as exc:
            score.unavailable = str(exc)
            out.append(score)
            continue
        table = norms.get(test)
        if table is None:
            score.unavailable = f"no norm table for {test}"
        elif training_words is None:
            score.unavailable = "model age unknown (no training word count)"
        else:
            score.model_age = model_age(training_words, table, words_per_year)
            score.age_equivalent = age_equivalent(score.raw, AgeRange.parse(score.model_age.reference_band),
                                                  table)
        out.append(score)
    return out
