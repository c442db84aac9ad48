"""Synthetic Italian fixtures: a toy agreement grammar, benchmark items and norm tables.

Nothing here is taken from the real standardized tests; the items only mimic
their formats so every code path can run. ``python -m babylab.synthetic``
regenerates the files under ``babylab/fixtures``.
"""

from __future__ import annotations

import json
import random
from importlib import resources
from pathlib import Path

FIXTURES = Path(__file__).with_name("fixtures")

# (singular, plural, gender)
SUBJECTS = [
    ("La mamma", "Le mamme", "f"),
    ("Il papà", "I papà", "m"),
    ("Il bambino", "I bambini", "m"),
    ("La bambina", "Le bambine", "f"),
    ("Il cane", "I cani", "m"),
    ("La gatta", "Le gatte", "f"),
    ("Il nonno", "I nonni", "m"),
    ("La nonna", "Le nonne", "f"),
    ("La maestra", "Le maestre", "f"),
    ("Il gatto", "I gatti", "m"),
]
THINGS = [
    ("La mela", "Le mele", "f"),
    ("La palla", "Le palle", "f"),
    ("Il libro", "I libri", "m"),
    ("La casa", "Le case", "f"),
    ("Il fiore", "I fiori", "m"),
    ("La macchina", "Le macchine", "f"),
]
VERBS = [
    ("cucina", "cucinano"),
    ("mangia", "mangiano"),
    ("corre", "corrono"),
    ("dorme", "dormono"),
    ("canta", "cantano"),
    ("gioca", "giocano"),
    ("legge", "leggono"),
    ("parte", "partono"),
    ("ride", "ridono"),
    ("salta", "saltano"),
]
# masc sg, fem sg, masc pl, fem pl
ADJECTIVES = [
    ("contento", "contenta", "contenti", "contente"),
    ("stanco", "stanca", "stanchi", "stanche"),
    ("piccolo", "piccola", "piccoli", "piccole"),
    ("bello", "bella", "belli", "belle"),
    ("alto", "alta", "alti", "alte"),
]
COLOURS = [
    ("rosso", "rossa", "rossi", "rosse"),
    ("giallo", "gialla", "gialli", "gialle"),
    ("nuovo", "nuova", "nuovi", "nuove"),
]
ADVERBS = ["sempre", "spesso", "oggi", "adesso", "molto"]


def _adj(forms, gender: str, plural: bool) -> str:
    return forms[(2 if plural else 0) + (1 if gender == "f" else 0)]


def grammar_sentences(n: int = 200, seed: int = 7) -> list[str]:
    """``n`` distinct sentences with subject-verb and noun-adjective agreement."""
    rng = random.Random(seed)
    out: list[str] = []
    seen = set()
    while len(out) < n:
        plural = rng.random() < 0.5
        kind = rng.randrange(4)
        if kind == 0:
            s = rng.choice(SUBJECTS)
            v = rng.choice(VERBS)
            sent = f"{s[plural]} {v[plural]}."
        elif kind == 1:
            s = rng.choice(SUBJECTS)
            v = rng.choice(VERBS)
            sent = f"{s[plural]} {v[plural]} {rng.choice(ADVERBS)}."
        elif kind == 2:
            s = rng.choice(SUBJECTS)
            a = rng.choice(ADJECTIVES)
            sent = f"{s[plural]} {'sono' if plural else 'è'} {_adj(a, s[2], plural)}."
        else:
            t = rng.choice(THINGS)
            c = rng.choice(COLOURS)
            sent = f"{t[plural]} {'sono' if plural else 'è'} {_adj(c, t[2], plural)}."
        if sent not in seen:
            seen.add(sent)
            out.append(sent)
    return out


def _lower_first(s: str) -> str:
    return s[0].lower() + s[1:]


def acceptability_pairs(n: int = 18, seed: int = 11) -> list[tuple[str, str]]:
    rng = random.Random(seed)
    pairs = [("La mela è rossa.", "La mela è rosse.")]
    seen = {pairs[0][0]}
    while len(pairs) < n:
        plural = rng.random() < 0.5
        if len(pairs) % 2:
            s = rng.choice(SUBJECTS)
            v = rng.choice(VERBS)
            good = f"{s[plural]} {v[plural]}."
            bad = f"{s[plural]} {v[not plural]}."
        else:
            t = rng.choice(THINGS + SUBJECTS)
            forms = rng.choice(COLOURS + ADJECTIVES)
            cop = "sono" if plural else "è"
            good = f"{t[plural]} {cop} {_adj(forms, t[2], plural)}."
            bad = f"{t[plural]} {cop} {_adj(forms, t[2], not plural)}."
        if good not in seen:
            seen.add(good)
            pairs.append((good, bad))
    return pairs


NEGATION_ITEMS = [
    ("Double Negation", "Né il bambino né la bambina mangiano",
     ["Cioè il bambino non mangia e la bambina non mangia", "Cioè il bambino mangia e la bambina non mangia",
      "Cioè il bambino e la bambina mangiano", "Cioè la bambina mangia e il bambino non mangia"], 0),
    ("Negative Active", "Il cane non corre",
     ["Cioè il cane corre nel prato", "Cioè il gatto non corre", "Cioè il cane è seduto vicino al gatto",
      "Cioè il cane corre dietro al gatto"], 2),
    ("Negative Passive", "La macchina non è lavata dal bambino",
     ["Cioè il bambino lava la macchina", "Cioè il papà lava la macchina e il bambino guarda il papà",
      "Cioè la macchina lava il bambino", "Cioè il bambino guarda la macchina"], 1),
    ("Reversible Negative Passive", "Il cane non è seguito dal gatto",
     ["Cioè il gatto segue il cane", "Cioè il cane e il gatto dormono", "Cioè il cane segue il gatto",
      "Cioè il gatto non corre"], 2),
    ("Negation", "La stella non è rossa",
     ["Cioè la stella è rossa", "Cioè la stella è di colore bianco", "Cioè il fiore è rosso",
      "Cioè la stella è grande e rossa"], 1),
    ("Not only X but Y", "La matita non è soltanto lunga ma anche rossa",
     ["Cioè la matita è rossa ed è lunga", "Cioè la matita è corta e rossa", "Cioè la matita è lunga e blu",
      "Cioè la matita non è rossa"], 0),
    ("X but not Y", "L'uomo, ma non il cavallo, sta saltando",
     ["Cioè il cavallo salta e l'uomo è fermo", "Cioè l'uomo e il cavallo saltano",
      "Cioè l'uomo salta e il cavallo è fermo", "Cioè nessuno salta"], 2),
]


def _mc(item_id, task, source, stimulus, options, target, tag=None) -> dict:
    return {
        "id": item_id, "task": task, "source_test": source, "structure_tag": tag,
        "payload": {"type": "multiple_choice", "stimulus": stimulus, "options": options,
                    "target_index": target},
    }


def _pair(item_id, good, bad) -> dict:
    return {
        "id": item_id, "task": "acceptability", "source_test": "BVL", "structure_tag": "Agreement",
        "payload": {"type": "minimal_pair", "grammatical": good, "ungrammatical": bad},
    }


def _completion(item_id, context_sg, subject_pl, verb) -> dict:
    plural_forms = [v[1] for v in VERBS]
    return {
        "id": item_id, "task": "completion", "source_test": "BVL", "structure_tag": "Number",
        "payload": {
            "type": "completion",
            "prompt_with_mask": f"{context_sg} {verb[0]}. {subject_pl} <mask>",
            "strict_answers": [verb[1]],
            "loose_forms": plural_forms,
        },
    }


def _idiom(item_id, rng) -> dict:
    s = rng.choice(SUBJECTS)
    noun = _lower_first(s[0])
    options = [f"Cioè {noun} fa finta di niente", f"Cioè {noun} respira",
               f"Cioè {noun} cerca di apparire importante"]
    return _mc(item_id, "idiom", "BVL", f"{s[0]} si dà delle arie", options, 2)


def _da(noun_phrase: str) -> str:
    article, rest = noun_phrase.split(" ", 1)
    return {"il": "dal", "la": "dalla"}[article] + " " + rest


def _sentence(item_id, source, rng, tag=None) -> dict:
    a, b = rng.sample(SUBJECTS, 2)
    verb, participle = rng.choice([("tira", "tirat"), ("segue", "seguit"), ("chiama", "chiamat"),
                                   ("guarda", "guardat")])
    x, y = _lower_first(a[0]), _lower_first(b[0])
    part = participle + ("o" if a[2] == "m" else "a")
    other = "saluta" if verb == "chiama" else "chiama"
    options = [f"Cioè {x} {verb} {y}", f"Cioè {y} tiene {x}", f"Cioè {y} {other} {x}",
               f"Cioè {y} {verb} {x}"]
    return _mc(item_id, "sentence_comprehension", source, f"{a[0]} è {part} {_da(y)}", options, 3, tag)


def _lexical(item_id, source, rng) -> dict:
    sets = [
        ("Un balcone", ["Cioè un terrazzino", "Cioè una fontana", "Cioè un portico", "Cioè un portone"], 0),
        ("Una rosa", ["Cioè una pietra", "Cioè un fiore", "Cioè un albero", "Cioè una foglia"], 1),
        ("Un cucciolo", ["Cioè un cane piccolo", "Cioè un gatto vecchio", "Cioè una casa", "Cioè un libro"], 0),
        ("Una mela", ["Cioè un sasso", "Cioè una sedia", "Cioè un frutto", "Cioè un fiore"], 2),
        ("Un gattino", ["Cioè una palla", "Cioè un cane", "Cioè un fiore", "Cioè un gatto piccolo"], 3),
    ]
    stim, options, target = rng.choice(sets)
    return _mc(item_id, "lexical_comprehension", source, stim, options, target)


def mini_benchmark() -> list[dict]:
    """About 40 items spanning every task and source test."""
    rng = random.Random(3)
    items: list[dict] = []
    for i, (sg, pl, _), verb in zip(range(6), SUBJECTS, VERBS[:6]):
        _, other_pl, _ = SUBJECTS[(i + 3) % len(SUBJECTS)]
        items.append(_completion(f"comp-{i + 1:03d}", sg, pl if i % 2 else other_pl, verb))
    for i, (good, bad) in enumerate(acceptability_pairs()):
        items.append(_pair(f"acc-{i + 1:03d}", good, bad))
    for i in range(3):
        items.append(_idiom(f"idiom-{i + 1:03d}", rng))
    for i in range(2):
        items.append(_sentence(f"sent-bvl-{i + 1:03d}", "BVL", rng))
    for i, (tag, stim, options, target) in enumerate(NEGATION_ITEMS[:4]):
        items.append(_mc(f"sent-trog-{i + 1:03d}", "sentence_comprehension", "TROG2", stim, options, target, tag))
    for i, (tag, stim, options, target) in enumerate(NEGATION_ITEMS[4:]):
        items.append(_mc(f"sent-tcgb-{i + 1:03d}", "sentence_comprehension", "TCGB2", stim, options, target, tag))
    for i in range(2):
        items.append(_lexical(f"lex-bvl-{i + 1:03d}", "BVL", rng))
    for i in range(2):
        items.append(_lexical(f"lex-ppvt-{i + 1:03d}", "PPVT", rng))
    return items


def full_shape_benchmark() -> list[dict]:
    """Synthetic items with the real benchmark's per-task counts (419 in total)."""
    rng = random.Random(5)
    items: list[dict] = []
    for i in range(14):
        sg, _, _ = SUBJECTS[i % len(SUBJECTS)]
        _, pl, _ = SUBJECTS[(i * 3 + 1) % len(SUBJECTS)]
        items.append(_completion(f"comp-{i + 1:03d}", sg, pl, VERBS[i % len(VERBS)]))
    for i, (good, bad) in enumerate(acceptability_pairs()):
        items.append(_pair(f"acc-{i + 1:03d}", good, bad))
    for i in range(10):
        items.append(_idiom(f"idiom-{i + 1:03d}", rng))
    for i in range(40):
        items.append(_sentence(f"sent-bvl-{i + 1:03d}", "BVL", rng))
    for i in range(80):
        if i % 4 == 0 and i // 4 < len(NEGATION_ITEMS):
            tag, stim, options, target = NEGATION_ITEMS[i // 4]
            items.append(_mc(f"sent-trog-{i + 1:03d}", "sentence_comprehension", "TROG2",
                             stim, options, target, tag))
        else:
            items.append(_sentence(f"sent-trog-{i + 1:03d}", "TROG2", rng))
    for i in range(74):
        items.append(_sentence(f"sent-tcgb-{i + 1:03d}", "TCGB2", rng))
    for i in range(18):
        items.append(_lexical(f"lex-bvl-{i + 1:03d}", "BVL", rng))
    for i in range(165):
        items.append(_lexical(f"lex-ppvt-{i + 1:03d}", "PPVT", rng))
    return items


def _fmt_age(months: int) -> str:
    return f"{months // 12};{months % 12}"


def _bands(start: int, stop: int, width: int) -> list[tuple[str, str]]:
    out = []
    m = start
    while m <= stop:
        out.append((_fmt_age(m), _fmt_age(min(m + width - 1, stop))))
        m += width
    return out


def synthetic_norms() -> dict:
    """Clearly fake norm tables on the published age grids.

    Means rise linearly with age (error scores fall), so every band mean is
    distinct; SDs are a fixed fraction of the score range.
    """
    bvl_grid = _bands(48, 143, 6)  # 4;0 .. 11;11 in half-year bands
    ppvt_grid = [("4;9", "5;6")] + [(_fmt_age(m), _fmt_age(m + 11)) for m in range(67, 128, 12)]
    tcgb_grid = _bands(42, 143, 12)  # 3;6 .. 11;11
    tables = []

    def table(test, grid, lo, hi, sd, orientation="higher_better"):
        n = len(grid)
        bands = []
        for i, (a, b) in enumerate(grid):
            frac = i / max(n - 1, 1)
            mean = lo + (hi - lo) * frac
            bands.append({"age_low": a, "age_high": b, "mean": round(mean, 3), "sd": sd})
        tables.append({"test": test, "orientation": orientation, "bands": bands})

    table("BVL_acceptability", bvl_grid, 9.0, 17.0, 1.5)
    table("BVL_idiom", bvl_grid, 3.0, 9.0, 1.2)
    table("BVL_lexical", bvl_grid, 8.0, 16.0, 1.8)
    table("BVL_sentence", bvl_grid, 20.0, 38.0, 3.0)
    table("BVL_completion", bvl_grid, 5.0, 13.0, 1.6)
    table("PPVT", ppvt_grid, 40.0, 140.0, 12.0)
    table("TROG2", bvl_grid, 6.0, 19.0, 2.5)
    table("TCGB2", tcgb_grid, 18.0, 2.0, 3.0, orientation="lower_better")
    return {"synthetic": True, "note": "fabricated for testing; not real standardization data",
            "tables": tables}


def write_fixtures(directory: Path = FIXTURES) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "toy_grammar.txt").write_text("\n".join(grammar_sentences()) + "\n", encoding="utf-8")
    for name, items in (("benchmark_mini.jsonl", mini_benchmark()),
                        ("benchmark_full_shape.jsonl", full_shape_benchmark())):
        with open(directory / name, "w", encoding="utf-8") as fh:
            for item in items:
                fh.write(json.dumps(item, ensure_ascii=False) + "\n")
    with open(directory / "norms_synthetic.json", "w", encoding="utf-8") as fh:
        json.dump(synthetic_norms(), fh, ensure_ascii=False, indent=1)
        fh.write("\n")
    manifest = {
        "sources": [{"path": "toy_grammar.txt", "category": "child-directed-speech"}],
        "target_budget": 2000, "words_per_year": 10_000_000, "epochs": 2,
    }
    (directory / "toy_manifest.json").write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    claimed = {
        "sources": [
            {"path": "toy_grammar.txt", "category": "child-directed-speech", "declared_words": 1_000_000},
            {"path": "toy_grammar.txt", "category": "interaction-transcript", "declared_words": 14_000_000},
            {"path": "toy_grammar.txt", "category": "media-transcript", "declared_words": 10_000_000},
        ],
        "target_budget": 25_000_000, "words_per_year": 10_000_000, "epochs": 2,
    }
    (directory / "claimed_25m_manifest.json").write_text(json.dumps(claimed, indent=1) + "\n", encoding="utf-8")


# toy smoke run: every grammar word fits in one token at this vocabulary size
TOY_VOCAB_SIZE = 470
TOY_BLOCK_LENGTH = 16
TOY_DECODER = {"kind": "decoder", "vocab_size": TOY_VOCAB_SIZE, "max_length": 64, "hidden": 128,
               "heads": 4, "layers": 1, "intermediate": 512, "dropout": 0.0}
TOY_TRAINING = {"batch_size": 1, "grad_accum_steps": 1, "warmup_steps": 10, "initial_lr": 1e-3,
                "max_epochs": 2, "patience": None}


def fixture_path(name: str) -> Path:
    return Path(str(resources.files("babylab") / "fixtures" / name))


if __name__ == "__main__":
    write_fixtures()
