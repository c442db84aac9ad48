import json
import math
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from babylab.synthetic import fixture_path
from babylab.scoring import (
    LABELS,
    AgeRange,
    NormBand,
    NormError,
    NormTable,
    RawScore,
    ScoringError,
    age_equivalent,
    band_label,
    equivalent_linguistic_age,
    load_norms,
    model_age,
    parse_age,
    raw_count,
    raw_tcgb,
    raw_trog,
    score_tests,
    z_score,
)
from babylab.tasks import TaskResult
from oracles import brute_force_trog

NORMS = load_norms(fixture_path("norms_synthetic.json"))


def result(i, correct, task="acceptability", source="BVL", error=None):
    return TaskResult(item_id=f"r{i:03d}", task=task, source_test=source, correct=correct, error=error)


def table(bands, orientation="higher_better", test="T"):
    return NormTable(test, tuple(NormBand(AgeRange.parse(a), m, s) for a, m, s in bands), orientation)


THREE = table([("4;0-4;5", 5, 1), ("4;6-4;11", 10, 1), ("5;0-5;5", 15, 1)])


# -- raw scores ------------------------------------------------------------------------------------


def test_count_all_correct_acceptability():
    r = raw_count([result(i, True) for i in range(18)])
    assert (r.test, r.value, r.kind, r.interval) == ("BVL_acceptability", 18, "correct_count", None)


def test_count_zero():
    assert raw_count([result(i, False) for i in range(18)]).value == 0


def test_ppvt_interval():
    rs = [result(i, i < 100, "lexical_comprehension", "PPVT") for i in range(165)]
    r = raw_count(rs)
    assert (r.value, r.kind, r.interval) == (100, "interval", (100, 110))


@given(st.lists(st.booleans(), max_size=165))
def test_ppvt_interval_width_is_ten(outcomes):
    r = raw_count([result(i, ok, "lexical_comprehension", "PPVT") for i, ok in enumerate(outcomes)], "PPVT")
    assert r.interval[1] - r.interval[0] == 10 and r.interval[0] == r.value


def test_mixed_tests_rejected():
    with pytest.raises(ScoringError, match="one test"):
        raw_count([result(0, True), result(1, True, "lexical_comprehension", "PPVT")])


def test_errored_results_block_raw_scores():
    with pytest.raises(ScoringError, match="errored"):
        raw_count([result(0, True), result(1, False, error="timeout")])


def test_trog_examples():
    assert raw_trog([True] * 80).value == 20
    assert raw_trog([True, True, True, False] + [False] * 76).value == 1
    assert raw_trog([i % 2 == 0 for i in range(80)]).value == 0


def test_trog_matches_brute_force():
    rng = random.Random(0)
    for _ in range(1000):
        p = rng.random()
        outcomes = [rng.random() < p for _ in range(80)]
        assert raw_trog(outcomes).value == brute_force_trog(outcomes)


@given(st.lists(st.booleans(), min_size=80, max_size=80), st.randoms(use_true_random=False),
       st.integers(0, 79))
def test_trog_block_permutation_and_monotonicity(outcomes, rnd, flip):
    base = raw_trog(outcomes).value
    permuted = []
    for b in range(20):
        block = outcomes[4 * b:4 * b + 4]
        rnd.shuffle(block)
        permuted += block
    assert raw_trog(permuted).value == base
    better = list(outcomes)
    better[flip] = True
    assert raw_trog(better).value >= base
    assert 0 <= base <= 20 and base == int(base)


@pytest.mark.parametrize("n", [79, 81, 0])
def test_trog_needs_eighty(n):
    with pytest.raises(ScoringError, match="80"):
        raw_trog([True] * n)


def test_tcgb_examples():
    assert raw_tcgb([True] * 74).value == 0.0
    assert raw_tcgb([False] * 10 + [True] * 64).value == 5.0
    assert raw_tcgb([False] * 74).value == 37.0
    with pytest.raises(ScoringError, match="74"):
        raw_tcgb([True] * 73)


def test_tcgb_complementarity():
    rng = random.Random(1)
    for _ in range(1000):
        outcomes = [rng.random() < rng.random() for _ in range(74)]
        value = raw_tcgb(outcomes).value
        assert value + 0.5 * sum(outcomes) == 37
        assert (2 * value).is_integer() and 0 <= value <= 37


# -- labels and z ----------------------------------------------------------------------------------


@pytest.mark.parametrize("z,label", [
    (2.5, ">+2SD"), (2.0, "+1..+2SD"), (1.5, "+1..+2SD"), (1.0, "0..+1SD"), (0.0, "0..+1SD"),
    (-0.5, "-1..0SD"), (-1.0, "-1..0SD"), (-1.5, "-2..-1SD"), (-2.0, "-2..-1SD"), (-2.01, "<-2SD"),
])
def test_band_label_boundaries_close_toward_zero(z, label):
    assert band_label(z) == label


@given(st.floats(-10, 10))
def test_labels_are_ordered_with_z(z):
    assert band_label(z) in LABELS
    assert LABELS.index(band_label(z)) >= LABELS.index(band_label(z + 0.5))


def test_value_at_mean_is_typical():
    res = age_equivalent(RawScore("T", 10, "correct_count"), "4;6-4;11", THREE)
    assert (res.z, res.band_label, res.typical) == (0.0, "0..+1SD", True)


def test_high_score_is_atypical():
    norms = table([("5;0-5;5", 10, 2)])
    res = age_equivalent(RawScore("T", 15, "correct_count"), "5;0-5;5", norms)
    assert (res.z, res.band_label, res.typical) == (2.5, ">+2SD", False)


def test_lower_better_flips_sign():
    norms = table([("5;0-5;5", 8, 2)], "lower_better")
    res = age_equivalent(RawScore("TCGB2", 12, "error_score"), "5;0-5;5", norms)
    assert (res.z, res.band_label, res.typical) == (-2.0, "-2..-1SD", False)


def test_unit_z_is_typical():
    norms = table([("5;0-5;5", 8, 2)])
    assert age_equivalent(RawScore("T", 10, "correct_count"), "5;0-5;5", norms).typical
    assert age_equivalent(RawScore("T", 6, "correct_count"), "5;0-5;5", norms).typical


def test_missing_band_is_an_error():
    with pytest.raises(NormError, match="no norm band"):
        age_equivalent(RawScore("T", 1, "correct_count"), "9;0-9;5", THREE)


def test_interval_reports_conservative_end():
    norms = table([("4;9-5;6", 100, 10)])
    res = age_equivalent(RawScore("PPVT", 85, "interval", (85, 95)), "4;9-5;6", norms)
    assert res.z == -0.5 and res.z_interval == (-1.5, -0.5)
    assert res.band_label == "-1..0SD" and res.typical
    straddle = age_equivalent(RawScore("PPVT", 95, "interval", (95, 105)), "4;9-5;6", norms)
    assert straddle.z_interval == (-0.5, 0.5) and abs(straddle.z) == 0.5


def test_z_matches_direct_arithmetic_on_synthetic_norms():
    rng = random.Random(2)
    for test, norms in NORMS.items():
        sign = 1 if norms.orientation == "higher_better" else -1
        for band in norms.bands:
            for _ in range(20):
                value = rng.uniform(0, 200)
                res = age_equivalent(RawScore(test, value, "correct_count"), band.ages, norms)
                assert abs(res.z - sign * (value - band.mean) / band.sd) <= 1e-12


@given(st.floats(-100, 100), st.floats(-50, 50), st.floats(0.1, 20), st.floats(0.01, 100), st.floats(-100, 100))
def test_z_is_affine_invariant(value, mean, sd, a, b):
    z = z_score(value, NormBand(AgeRange(0, 1), mean, sd))
    z2 = z_score(a * value + b, NormBand(AgeRange(0, 1), a * mean + b, a * sd))
    assert math.isclose(z, z2, rel_tol=1e-9, abs_tol=1e-9)


@given(st.floats(0, 80), st.floats(0, 10), st.sampled_from(["higher_better", "lower_better"]))
def test_better_performance_never_lowers_z(value, delta, orientation):
    band = NormBand(AgeRange(0, 1), 20, 3)
    # improvement means a higher count or a lower error score
    improved = value + delta if orientation == "higher_better" else value - delta
    assert z_score(improved, band, orientation) >= z_score(value, band, orientation)


# -- equivalent linguistic age --------------------------------------------------------------------


def test_ela_examples():
    assert equivalent_linguistic_age(10, THREE) == "4;6-4;11"
    assert equivalent_linguistic_age(9, THREE) == "4;6-4;11"
    assert equivalent_linguistic_age(3.9, THREE) == "< 4;0"
    assert equivalent_linguistic_age(4.0, THREE) == "4;0-4;5"


def test_ela_ties_go_to_younger_band():
    assert equivalent_linguistic_age(7.5, THREE) == "4;0-4;5"


def test_ela_lower_better_below_every_band():
    norms = table([("3;6-4;5", 18, 3), ("4;6-5;5", 14, 3)], "lower_better")
    assert equivalent_linguistic_age(RawScore("TCGB2", 30, "error_score"), norms) == "< 3;6"
    assert equivalent_linguistic_age(RawScore("TCGB2", 15, "error_score"), norms) == "4;6-5;5"


def test_band_mean_maps_to_its_band_in_every_table():
    for norms in NORMS.values():
        for band in norms.bands:
            assert equivalent_linguistic_age(band.mean, norms) == str(band.ages)


# -- model age ------------------------------------------------------------------------------------


def test_fifty_million_words_is_five_years():
    for test in ("BVL_acceptability", "TROG2"):
        age = model_age(50_000_000, NORMS[test])
        assert (age.years, age.band, age.reference_band, age.adult) == (5.0, "5;0-5;5", "5;0-5;5", False)


def test_ppvt_grid_places_five_years_in_first_band():
    assert model_age(50_000_000, NORMS["PPVT"]).band == "4;9-5;6"


def test_huge_models_are_adults():
    age = model_age(5_000_000_000, NORMS["BVL_acceptability"])
    assert age.adult and age.band == "adult" and age.reference_band == "11;6-11;11"
    assert model_age(5_000_000_000, NORMS["PPVT"]).reference_band == "10;7-11;6"


def test_zero_words_is_pre_norm():
    age = model_age(0, NORMS["BVL_acceptability"])
    assert age.pre_norm and age.band == age.reference_band == "4;0-4;5"


def test_model_age_band_edges():
    norms = NORMS["BVL_acceptability"]
    per_month = 10_000_000 / 12
    assert model_age(round(65 * per_month), norms).band == "5;0-5;5"
    assert model_age(round(66 * per_month), norms).band == "5;6-5;11"
    assert model_age(round(144 * per_month), norms).adult
    with pytest.raises(ScoringError):
        model_age(-1, norms)


# -- norm files -----------------------------------------------------------------------------------


def test_synthetic_grids():
    assert str(NORMS["BVL_idiom"].youngest.ages) == "4;0-4;5"
    assert str(NORMS["BVL_idiom"].oldest.ages) == "11;6-11;11"
    assert str(NORMS["PPVT"].youngest.ages) == "4;9-5;6"
    assert str(NORMS["TCGB2"].youngest.ages) == "3;6-4;5"
    assert NORMS["TCGB2"].orientation == "lower_better"


def write_norms(tmp_path, bands, **kw):
    path = tmp_path / "norms.json"
    path.write_text(json.dumps({"tables": [{"test": "T", "bands": bands, **kw}]}))
    return path


def band(lo, hi, mean=1.0, sd=1.0):
    return {"age_low": lo, "age_high": hi, "mean": mean, "sd": sd}


@pytest.mark.parametrize("bands,match", [
    ([band("4;0", "4;6"), band("4;6", "5;0")], "overlap"),
    ([band("5;0", "5;5"), band("4;0", "4;5")], "overlap or are unsorted"),
    ([band("4;0", "4;5", sd=0)], "sd > 0"),
    ([band("4;0", "4;13")], "bad age"),
    ([band("4;6", "4;0")], "ends before"),
    ([], "no bands"),
])
def test_bad_norm_files_rejected(tmp_path, bands, match):
    with pytest.raises(NormError, match=match):
        load_norms(write_norms(tmp_path, bands))


def test_norm_round_trip():
    for norms in NORMS.values():
        assert NormTable.from_dict(norms.to_dict()) == norms
    assert parse_age("11;11") == 143


# -- test-level scoring ----------------------------------------------------------------------------


def test_score_tests_covers_each_source():
    results = [result(i, i % 3 != 0) for i in range(18)]
    results += [result(100 + i, True, "sentence_comprehension", "TROG2") for i in range(80)]
    results += [result(200 + i, i >= 10, "sentence_comprehension", "TCGB2") for i in range(74)]
    results += [result(300 + i, i < 50, "lexical_comprehension", "PPVT") for i in range(165)]
    scores = {s.test: s for s in score_tests(results, NORMS, 50_000_000)}
    assert list(scores) == ["BVL_acceptability", "TROG2", "TCGB2", "PPVT"]
    assert scores["BVL_acceptability"].raw.value == 12
    assert scores["TROG2"].raw.value == 20
    assert scores["TCGB2"].raw.value == 5.0
    assert scores["PPVT"].raw.interval == (50, 60)
    for s in scores.values():
        assert s.unavailable is None and s.age_equivalent is not None
    assert scores["BVL_acceptability"].model_age.band == "5;0-5;5"
    assert scores["PPVT"].age_equivalent.reference_band == "4;9-5;6"


def test_score_tests_records_why_a_score_is_missing():
    results = [result(i, True, "sentence_comprehension", "TROG2") for i in range(4)] + [result(50, True)]
    scores = {s.test: s for s in score_tests(results, {}, None)}
    assert "80" in scores["TROG2"].unavailable
    assert "no norm table" in scores["BVL_acceptability"].unavailable
    scores = {s.test: s for s in score_tests([result(50, True)], NORMS, None)}
    assert "model age unknown" in scores["BVL_acceptability"].unavailable
