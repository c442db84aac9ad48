"""Scorers that live in another process, spoken to with line-delimited JSON.

Requests and responses, one JSON object per line::

    {"op": "nll", "text": ...}                         -> {"total_nll": float, "tokens": int}
    {"op": "complete", "prompt": ..., "beams": int, "max_new": int} -> {"text": ..., "score": float}
    {"op": "fill_mask", "text": ..., "k": int}          -> {"candidates": [[text, score], ...]}
    {"op": "capabilities"}                              -> {"capabilities": [...], "training_words": int}

Any request may be answered with ``{"error": message}``. That and malformed
answers fail the one item (``ScorerError``); a dead or unreachable peer
fails the whole run (``ScorerUnavailable``).
"""

from __future__ import annotations

import json
import math
import shlex
import subprocess
import threading
import urllib.error
import urllib.request

from .tasks import ScorerError, ScorerUnavailable

DEFAULT_CAPABILITIES = frozenset({"nll", "complete"})


def _number(resp: dict, key: str, kind=float):
    value = resp.get(key)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScorerError(f"response field {key!r} is missing or not a number: {resp!r}")
    if kind is int and value != int(value):
        raise ScorerError(f"response field {key!r} must be an integer: {value!r}")
    value = kind(value)
    if kind is float and not math.isfinite(value):
        raise ScorerError(f"response field {key!r} is not finite")
    return value


class _ProtocolScorer:
    name: str
    capabilities: frozenset[str] = DEFAULT_CAPABILITIES
    training_words: int | None = None

    def request(self, payload: dict) -> dict:
        raise NotImplementedError

    def _call(self, payload: dict) -> dict:
        resp = self.request(payload)
        if not isinstance(resp, dict):
            raise ScorerError(f"response is not a JSON object: {resp!r}")
        if "error" in resp:
            raise ScorerError(f"scorer error: {resp['error']}")
        return resp

    def _negotiate(self) -> None:
        try:
            resp = self._call({"op": "capabilities"})
        except ScorerError:
            return  # optional op; keep the defaults
        caps = resp.get("capabilities")
        if isinstance(caps, list) and "nll" in caps:
            self.capabilities = frozenset(str(c) for c in caps)
        words = resp.get("training_words")
        if isinstance(words, int) and not isinstance(words, bool) and words >= 0:
            self.training_words = words

    def nll(self, text: str) -> tuple[float, int]:
        resp = self._call({"op": "nll", "text": text})
        return _number(resp, "total_nll"), _number(resp, "tokens", int)

    def complete(self, prompt: str, beams: int, max_new: int) -> tuple[str, float]:
        resp = self._call({"op": "complete", "prompt": prompt, "beams": beams, "max_new": max_new})
        if not isinstance(resp.get("text"), str):
            raise ScorerError(f"complete response has no text: {resp!r}")
        return resp["text"], float(resp.get("score", 0.0))

    def fill_mask(self, text: str, k: int) -> list[tuple[str, float]]:
        resp = self._call({"op": "fill_mask", "text": text, "k": k})
        cands = resp.get("candidates")
        if not isinstance(cands, list):
            raise ScorerError(f"fill_mask response has no candidate list: {resp!r}")
        out = []
        for c in cands:
            if isinstance(c, str):
                out.append((c, 0.0))
            elif isinstance(c, (list, tuple)) and c and isinstance(c[0], str):
                out.append((c[0], float(c[1]) if len(c) > 1 else 0.0))
            else:
                raise ScorerError(f"malformed fill_mask candidate: {c!r}")
        return out


class SubprocessScorer(_ProtocolScorer):
    """Runs ``command`` and talks over its stdin/stdout. Requests are serialized."""

    def __init__(self, command: str | list[str], name: str | None = None):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.name = name or " ".join(argv)
        self._lock = threading.Lock()
        try:
            self._proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                          text=True, encoding="utf-8", bufsize=1)
        except OSError as exc:
            raise ScorerUnavailable(f"cannot start scorer {self.name!r}: {exc}") from None
        self._negotiate()

    def request(self, payload: dict) -> dict:
        line = json.dumps(payload, ensure_ascii=False)
        with self._lock:
            try:
                self._proc.stdin.write(line + "\n")
                self._proc.stdin.flush()
                answer = self._proc.stdout.readline()
            except (BrokenPipeError, OSError, ValueError) as exc:
                raise ScorerUnavailable(f"scorer {self.name!r} went away: {exc}") from None
        if not answer:
            code = self._proc.poll()
            raise ScorerUnavailable(f"scorer {self.name!r} closed its output (exit status {code})")
        try:
            return json.loads(answer)
        except json.JSONDecodeError:
            raise ScorerError(f"malformed response line: {answer.strip()[:200]!r}") from None

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
                self._proc.wait(timeout=5)
            except (OSError, subprocess.TimeoutExpired):
                self._proc.kill()
                self._proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class HTTPScorer(_ProtocolScorer):
    """POSTs each request as a JSON body to ``url``."""

    def __init__(self, url: str, timeout: float = 60.0):
        self.name = url
        self.url = url
        self.timeout = timeout
        self._negotiate()

    def request(self, payload: dict) -> dict:
        body = json.dumps(payload).encode()
        req = urllib.request.Request(self.url, data=body, headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                raw = resp.read()
        except urllib.error.HTTPError as exc:
            raw = exc.read()
            if not raw:
                raise ScorerError(f"HTTP {exc.code} from {self.url}") from None
        except (urllib.error.URLError, OSError) as exc:
            raise ScorerUnavailable(f"cannot reach scorer at {self.url}: {exc}") from None
        try:
            return json.loads(raw)
        except json.JSONDecodeError:
            raise ScorerError(f"malformed response body: {raw[:200]!r}") from None

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
