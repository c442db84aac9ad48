"""Evaluation reports: JSON is the record; CSV and text are views of it.

Numbers in the CSV and text table are written with ``repr`` so each one
reads back as exactly the float stored in the JSON.
"""

from __future__ import annotations

import csv
import io
import json
import os
import platform
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .tasks import TASKS, BenchmarkResult

SCHEMA = "babylab.report/1"


class ReportError(ValueError):
    pass


def now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    seed: int | None = None
    configs: dict[str, str | None] = field(default_factory=dict)
    artifacts: dict[str, str | None] = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    started: str | None = None
    finished: str | None = None
    tool_version: str = __version__

    def to_dict(self, canonical: bool = False) -> dict:
        d = {
            "command": self.command, "seed": self.seed, "configs": self.configs,
            "artifacts": self.artifacts, "options": self.options, "tool_version": self.tool_version,
        }
        if not canonical:
            d["started"] = self.started
            d["finished"] = self.finished
            d["python"] = platform.python_version()
        return d


def build_report(result: BenchmarkResult, scores: list, manifest: RunManifest, scorer: dict,
                 canonical: bool = False) -> dict:
    return {
        "schema": SCHEMA,
        "manifest": manifest.to_dict(canonical),
        "scorer": scorer,
        "accuracy": result.accuracy,
        "accuracy_by_source": result.accuracy_by_source,
        "accuracy_by_structure": result.accuracy_by_structure,
        "completion": {"strict": result.completion_strict, "loose": result.completion_loose},
        "scores": [s.to_dict() for s in scores],
        "errored": result.errored,
        "counts": {"items": len(result.results), "errored": len(result.errored)},
        "items": [r.to_dict() for r in result.results],
    }


def check_report(report: dict, source: str = "report") -> dict:
    if not isinstance(report, dict) or report.get("schema") != SCHEMA:
        got = report.get("schema") if isinstance(report, dict) else type(report).__name__
        raise ReportError(f"{source}: schema {got!r} is not {SCHEMA!r}")
    for k in ("accuracy", "completion", "scores", "errored", "manifest"):
        if k not in report:
            raise ReportError(f"{source}: missing field {k!r}")
    return report


def load_report(path: str | os.PathLike) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ReportError(f"{path}: invalid JSON ({exc.msg})") from None
    return check_report(data, str(path))


def _num(v) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return str(v)


def report_rows(report: dict) -> list[tuple[str, str, object]]:
    """(section, key, value) triples shared by the CSV and text renderings."""
    rows: list[tuple[str, str, object]] = []
    for task, v in report["accuracy"].items():
        rows.append(("accuracy", task, v))
    for key, v in report["accuracy_by_source"].items():
        rows.append(("accuracy_by_source", key, v))
    for tag, v in report["accuracy_by_structure"].items():
        rows.append(("accuracy_by_structure", tag, v))
    rows.append(("completion", "strict", report["completion"]["strict"]))
    rows.append(("completion", "loose", report["completion"]["loose"]))
    for s in report["scores"]:
        t = s["test"]
        if s["raw"] is not None:
            rows.append(("raw", t, s["raw"]["value"]))
            if s["raw"]["interval"] is not None:
                lo, hi = s["raw"]["interval"]
                rows.append(("raw_interval", t, f"{_num(lo)}..{_num(hi)}"))
        if s["model_age"] is not None:
            rows.append(("model_age", t, s["model_age"]["band"]))
        ae = s["age_equivalent"]
        if ae is not None:
            rows.append(("z", t, ae["z"]))
            rows.append(("band_label", t, ae["band_label"]))
            rows.append(("typical", t, ae["typical"]))
            rows.append(("equivalent_age", t, ae["equivalent_age_band"]))
        if s["unavailable"]:
            rows.append(("unavailable", t, s["unavailable"]))
    rows.append(("errored", "count", len(report["errored"])))
    for item_id in report["errored"]:
        rows.append(("errored", "item", item_id))
    return rows


def render_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["section", "key", "value"])
    for section, key, v in report_rows(report):
        w.writerow([section, key, _num(v)])
    return buf.getvalue()


def _table(cells: list[list[str]]) -> list[str]:
    widths = [max(len(c[i]) for c in cells) for i in range(len(cells[0]))]
    return ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]


SCORE_COLUMNS = ("test", "raw", "interval", "model_age", "z", "label", "typical", "equivalent_age")


def render_text(report: dict) -> str:
    scorer = report.get("scorer", {})
    lines = [f"scorer: {scorer.get('name', '?')}  (model words: {_num(scorer.get('training_words'))})"]
    section = None
    for s, k, v in report_rows(report):
        if s not in ("accuracy", "accuracy_by_source", "accuracy_by_structure", "completion"):
            continue
        if s != section:
            lines += ["", f"[{s}]"]
            section = s
        lines.append(f"  {k}: {_num(v)}")
    cells = [list(SCORE_COLUMNS)]
    notes = []
    for sc in report["scores"]:
        raw, age, ae = sc["raw"], sc["model_age"], sc["age_equivalent"]
        interval = f"{_num(raw['interval'][0])}..{_num(raw['interval'][1])}" if raw and raw["interval"] else ""
        cells.append([
            sc["test"],
            _num(raw["value"]) if raw else "n/a",
            interval,
            age["band"] if age else "n/a",
            _num(ae["z"]) if ae else "n/a",
            ae["band_label"] if ae else "n/a",
            _num(ae["typical"]) if ae else "n/a",
            ae["equivalent_age_band"] if ae else "n/a",
        ])
        if sc["unavailable"]:
            notes.append(f"  {sc['test']}: {sc['unavailable']}")
    lines += ["", "[scores]", *("  " + line for line in _table(cells))]
    if notes:
        lines += ["", "[unavailable]", *notes]
    lines += ["", f"[errored] {len(report['errored'])}"]
    lines += [f"  {i}" for i in report["errored"]]
    return "\n".join(lines) + "\n"


def compare(reports: list[dict], labels: list[str]) -> tuple[list[str], list[list[object]]]:
    """Per-task accuracy with one column per report, in argument order."""
    if not reports:
        raise ReportError("need at least one report")
    tasks = set()
    for r in reports:
        tasks.update(r["accuracy"])
    ordered = [t for t in TASKS if t in tasks] + sorted(tasks - set(TASKS))
    header = ["task", *labels]
    rows = [[t, *(r["accuracy"].get(t) for r in reports)] for t in ordered]
    return header, rows


def render_comparison(header: list[str], rows: list[list[object]], fmt: str = "text") -> str:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([row[0], *(_num(v) for v in row[1:])])
        return buf.getvalue()
    cells = [header] + [[row[0], *(_num(v) for v in row[1:])] for row in rows]
    widths = [max(len(str(c[i])) for c in cells) for i in range(len(header))]
    return "\n".join("  ".join(str(c).ljust(w) for c, w in zip(line, widths)).rstrip()
                     for line in cells) + "\n"


def atomic_write(path: str | os.PathLike, text: str) -> None:
    """Write to a temporary file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps(report: dict) -> str:
    return json.dumps(report, indent=1, ensure_ascii=False, sort_keys=True) + "\n"


def write_report(report: dict, out_prefix: str | os.PathLike) -> list[Path]:
    """``PREFIX.json``, ``PREFIX.csv`` and ``PREFIX.txt``."""
    base = Path(out_prefix)
    if base.suffix == ".json":
        base = base.with_suffix("")
    paths = [base.with_name(base.name + ext) for ext in (".json", ".csv", ".txt")]
    # render everything first so a failure leaves no partial set behind
    texts = [dumps(report), render_csv(report), render_text(report)]
    for p, t in zip(paths, texts):
        atomic_write(p, t)
    return paths
