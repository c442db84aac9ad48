"""Reference implementation of the external scorer protocol with scripted answers.

It reads a benchmark file and answers every item correctly, except for the
ids it is told to get wrong, tie, answer loosely, fail on, or garble.
Serves stdin/stdout by default, or HTTP with ``--http PORT``::

    python -m babylab.rigged --benchmark items.jsonl --wrong acc-001,idiom-002
"""

from __future__ import annotations

import argparse
import json
import sys
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .tasks import MASK, BenchmarkItem, Completion, MinimalPair, MultipleChoice, \
    assemble_choice_sentence, load_benchmark, normalize_words

GOOD, BAD, UNKNOWN = 1.0, 2.0, 5.0
NO_VERB = "belle"


class RigError(ValueError):
    pass


class Garbled(Exception):
    pass


class Rig:
    def __init__(self, items: list[BenchmarkItem], wrong=(), error=(), tie=(), loose=(), garbage=(),
                 encoder: bool = False, training_words: int | None = None):
        self.wrong, self.error, self.tie = set(wrong), set(error), set(tie)
        self.loose, self.garbage = set(loose), set(garbage)
        known = {it.id for it in items}
        unknown = (self.wrong | self.error | self.tie | self.loose | self.garbage) - known
        if unknown:
            raise RigError(f"unknown item ids: {', '.join(sorted(unknown))}")
        self.encoder = encoder
        self.training_words = training_words
        self.texts: dict[str, tuple[str, float]] = {}
        self.prompts: dict[str, tuple[str, str]] = {}
        for it in items:
            self._index(it)

    def _put(self, table: dict, key: str, item_id: str, value) -> None:
        if key in table:
            other, prev = table[key]
            if prev != value or self._disposition(other) != self._disposition(item_id):
                raise RigError(f"text {key!r} is shared by items {other} and {item_id} "
                               "with different scripted answers")
            return
        table[key] = (item_id, value)

    def _disposition(self, item_id: str) -> str | None:
        if item_id in self.error:
            return "error"
        if item_id in self.garbage:
            return "garbage"
        return None

    def _index(self, it: BenchmarkItem) -> None:
        p = it.payload
        if isinstance(p, MinimalPair):
            good, bad = (BAD, GOOD) if it.id in self.wrong else (GOOD, BAD)
            if it.id in self.tie:
                good = bad = GOOD
            self._put(self.texts, p.grammatical, it.id, good)
            self._put(self.texts, p.ungrammatical, it.id, bad)
        elif isinstance(p, MultipleChoice):
            for i, opt in enumerate(p.options):
                if it.id in self.tie:
                    value = GOOD
                elif i == p.target_index:
                    value = GOOD if it.id not in self.wrong else BAD + len(p.options)
                else:
                    value = BAD + 0.25 * i
                self._put(self.texts, assemble_choice_sentence(p.stimulus, opt), it.id, value)
        elif isinstance(p, Completion):
            if it.id in self.wrong:
                answer = NO_VERB
            elif it.id in self.loose:
                strict = {tuple(normalize_words(a)) for a in p.strict_answers}
                others = [f for f in p.loose_forms if tuple(normalize_words(f)) not in strict]
                if not others:
                    raise RigError(f"item {it.id} has no loose-only form")
                answer = f"e i papà {others[0]} la"
            else:
                answer = p.strict_answers[0]
            key = p.prompt_with_mask if self.encoder else p.prompt_with_mask.split(MASK, 1)[0].rstrip()
            self._put(self.prompts, key, it.id, answer)

    def _lookup(self, table: dict, key: str):
        entry = table.get(key)
        if entry is None:
            return None
        item_id, value = entry
        d = self._disposition(item_id)
        if d == "error":
            return {"error": f"scripted failure for {item_id}"}
        if d == "garbage":
            raise Garbled
        return value

    def handle(self, req) -> dict:
        if not isinstance(req, dict):
            return {"error": "request must be a JSON object"}
        op = req.get("op")
        if op == "capabilities":
            caps = ["nll", "fill_mask" if self.encoder else "complete"]
            out = {"capabilities": caps}
            if self.training_words is not None:
                out["training_words"] = self.training_words
            return out
        if op == "nll":
            text = req.get("text")
            if not isinstance(text, str) or not text.split():
                return {"error": "nll needs non-empty text"}
            value = self._lookup(self.texts, text)
            if isinstance(value, dict):
                return value
            value = UNKNOWN if value is None else value
            n = len(text.split())
            return {"total_nll": value * n, "tokens": n}
        if op == "complete" and not self.encoder:
            answer = self._lookup(self.prompts, str(req.get("prompt", "")))
            if isinstance(answer, dict):
                return answer
            return {"text": " " + (answer or NO_VERB), "score": -1.0}
        if op == "fill_mask" and self.encoder:
            answer = self._lookup(self.prompts, str(req.get("text", "")))
            if isinstance(answer, dict):
                return answer
            return {"candidates": [[" " + (answer or NO_VERB), 1.0]]}
        return {"error": f"unsupported op {op!r}"}

    def handle_line(self, line: str) -> str:
        try:
            req = json.loads(line)
        except json.JSONDecodeError:
            return json.dumps({"error": "request is not valid JSON"})
        try:
            return json.dumps(self.handle(req), ensure_ascii=False)
        except Garbled:
            return "<<not json>>"


def serve_stdio(rig: Rig, crash_after: int | None = None, stdin=None, stdout=None) -> None:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    served = 0
    for line in stdin:
        if not line.strip():
            continue
        if crash_after is not None and served >= crash_after:
            sys.exit(1)
        stdout.write(rig.handle_line(line) + "\n")
        stdout.flush()
        served += 1


def make_http_server(rig: Rig, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            n = int(self.headers.get("Content-Length", 0))
            body = rig.handle_line(self.rfile.read(n).decode("utf-8")).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def log_message(self, *args):
            pass

    return ThreadingHTTPServer((host, port), Handler)


def _ids(value: str) -> list[str]:
    return [v for v in value.split(",") if v]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python -m babylab.rigged", description=__doc__.splitlines()[0])
    ap.add_argument("--benchmark", required=True)
    for flag in ("wrong", "error", "tie", "loose", "garbage"):
        ap.add_argument(f"--{flag}", type=_ids, default=[], metavar="IDS")
    ap.add_argument("--encoder", action="store_true", help="offer fill_mask instead of complete")
    ap.add_argument("--training-words", type=int)
    ap.add_argument("--crash-after", type=int, help="exit after answering this many requests")
    ap.add_argument("--http", type=int, metavar="PORT", help="serve HTTP on 127.0.0.1:PORT (0 = any)")
    args = ap.parse_args(argv)
    try:
        rig = Rig(load_benchmark(args.benchmark), wrong=args.wrong, error=args.error, tie=args.tie,
                  loose=args.loose, garbage=args.garbage, encoder=args.encoder,
                  training_words=args.training_words)
    except (OSError, ValueError) as exc:
        print(f"rigged: {exc}", file=sys.stderr)
        return 2
    if args.http is not None:
        server = make_http_server(rig, port=args.http)
        print(f"http://127.0.0.1:{server.server_address[1]}/", flush=True)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass
        return 0
    serve_stdio(rig, crash_after=args.crash_after)
    return 0


if __name__ == "__main__":
    sys.exit(main())
